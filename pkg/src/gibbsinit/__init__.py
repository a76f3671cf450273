"""Initial points for non-convex optimization drawn from Gibbs measures of an empirical loss."""
__version__ = "0.1.0"
