"""Benchmark objectives: Styblinski-Tang, Gaussian-mixture mode finding, GMNL
simulated likelihood, and a 1-D double well with a known energy gap."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import GibbsInitError
from .objective import Dataset, Domain, KernelForm, Objective

# --------------------------------------------------------------------------
# Styblinski-Tang, normalized by 2d so the global minimum value is -39.166...

ST_BOUND = 5.0


def st_coord(t):
    return t ** 4 - 16.0 * t ** 2 + 5.0 * t


def st_coord_grad(t):
    return 4.0 * t ** 3 - 32.0 * t + 5.0


def st_coord_hess(t):
    return 12.0 * t ** 2 - 32.0


def _cubic_roots():
    roots = np.sort(np.roots([4.0, 0.0, -32.0, 5.0]).real)
    for _ in range(3):
        roots = roots - st_coord_grad(roots) / st_coord_hess(roots)
    return roots


# (deep minimum, local maximum, shallow minimum) of the coordinate function
ST_ROOTS = tuple(float(r) for r in _cubic_roots())
ST_ARGMIN = ST_ROOTS[0]
ST_MIN_VALUE = float(st_coord(ST_ARGMIN) / 2.0)


@dataclass(frozen=True)
class STSpec:
    d: int = 5

    def __post_init__(self):
        if self.d < 1:
            raise GibbsInitError("bad-problem", "d must be >= 1")

    @property
    def domain(self) -> Domain:
        return Domain.box(-ST_BOUND, ST_BOUND, self.d)


def st_objective(spec: STSpec) -> Objective:
    scale = 1.0 / (2.0 * spec.d)

    def value(theta):
        return scale * np.sum(st_coord(theta))

    def grad(theta):
        return scale * st_coord_grad(theta)

    return Objective(spec.domain, value, grad,
                     batch_value_fn=lambda X: scale * st_coord(X).sum(axis=1),
                     batch_grad_fn=lambda X: scale * st_coord_grad(X),
                     name=f"st{spec.d}", coordinate_functions=[st_coord] * spec.d,
                     coordinate_scale=scale)


# --------------------------------------------------------------------------
# Gaussian mixture: minimize the negated kernel expectation


@dataclass(frozen=True)
class GMMSpec:
    means: np.ndarray
    weights: np.ndarray
    sigma: float
    box_half_width: float = 3.0

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        p = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "weights", p)
        if p.shape != (m.shape[0],) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-10:
            raise GibbsInitError("bad-problem", "weights must be a positive simplex vector")
        if not self.sigma > 0:
            raise GibbsInitError("bad-problem", "sigma must be positive")
        if m.shape[0] > 1:
            dist = np.linalg.norm(m[:, None] - m[None], axis=-1)
            if np.min(dist[np.triu_indices(m.shape[0], 1)]) <= 0:
                raise GibbsInitError("bad-problem", "means must be distinct")

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    @property
    def M(self) -> int:
        return int(self.means.shape[0])

    @property
    def domain(self) -> Domain:
        return Domain.box(-self.box_half_width, self.box_half_width, self.d)

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "weights": self.weights.tolist(),
                "sigma": self.sigma, "box_half_width": self.box_half_width}


def make_gmm_spec(d: int, M: int, sigma: float, seed: int, spread: float = 3.0,
                  box_half_width: Optional[float] = None, weights=None,
                  min_separation: Optional[float] = None) -> GMMSpec:
    """Means uniform on ``[-spread, spread]^d``, resampled until pairwise
    separation reaches ``min_separation`` (default ``2 sigma sqrt(d)``)."""
    rng = np.random.default_rng(seed)
    sep = 2.0 * sigma * np.sqrt(d) if min_separation is None else min_separation
    means = []
    while len(means) < M:
        cand = rng.uniform(-spread, spread, d)
        if all(np.linalg.norm(cand - m) >= sep for m in means):
            means.append(cand)
    if weights is None:
        weights = np.full(M, 1.0 / M)
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    return GMMSpec(np.array(means), weights, sigma,
                   spread if box_half_width is None else box_half_width)


def _kernel_objective(domain, centers, weights, sigma, name, grad_form=None):
    def values(X):
        return kernels.kernel_sum(X, centers, weights, sigma, want_grad=False)[0]

    gform = grad_form or (centers, weights, sigma)

    def grads(X):
        return kernels.kernel_sum(X, *gform, want_grad=True)[1]

    return Objective(domain, lambda t: values(t[None, :])[0], lambda t: grads(t[None, :])[0],
                     batch_value_fn=values, batch_grad_fn=grads, name=name,
                     kernel_form=None if grad_form else KernelForm(centers, weights, sigma))


def gmm_population_objective(spec: GMMSpec, domain: Optional[Domain] = None) -> Objective:
    """Closed form: convolving two sigma^2 Gaussians yields bandwidth sqrt(2) sigma."""
    amp = (4.0 * np.pi * spec.sigma ** 2) ** (-spec.d / 2.0)
    return _kernel_objective(domain or spec.domain, spec.means, -amp * spec.weights,
                             np.sqrt(2.0) * spec.sigma, "gmm-population")


def gmm_kernel_pointwise(spec: GMMSpec, theta, x) -> float:
    """Negated Gaussian kernel ``-(2 pi sigma^2)^(-d/2) exp(-|theta - x|^2 / (2 sigma^2))``."""
    d2 = float(np.sum((np.asarray(theta) - np.asarray(x)) ** 2))
    return -(2.0 * np.pi * spec.sigma ** 2) ** (-spec.d / 2.0) * np.exp(-d2 / (2 * spec.sigma ** 2))


def gmm_empirical_objective(spec: GMMSpec, data: Dataset,
                            domain: Optional[Domain] = None) -> Objective:
    if data.n_total == 0:
        raise GibbsInitError("empty-dataset")
    amp = (2.0 * np.pi * spec.sigma ** 2) ** (-spec.d / 2.0)
    w = np.full(data.n_total, -amp / data.n_total)
    return _kernel_objective(domain or spec.domain, data.points, w, spec.sigma, "gmm-empirical")


def gmm_sample(spec: GMMSpec, count: int, seed) -> Dataset:
    if count < 1:
        raise GibbsInitError("bad-count", "count must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(spec.M, size=count, p=spec.weights)
    pts = spec.means[comp] + spec.sigma * rng.standard_normal((count, spec.d))
    return Dataset(pts)


def gmm_component_labels(spec: GMMSpec, count: int, seed) -> np.ndarray:
    """Component indices that ``gmm_sample(spec, count, seed)`` used."""
    rng = np.random.default_rng(seed)
    return rng.choice(spec.M, size=count, p=spec.weights)


def gmm_batched_gradient_objective(spec: GMMSpec, batch: int, seed,
                                   domain: Optional[Domain] = None) -> Objective:
    """Analytic values; gradient is the batch mean over a frozen draw from the mixture.

    The mixture is continuous, so no finite batch enumerates it: the gradient is
    always a Monte Carlo estimate, fixed once ``seed`` is fixed.
    """
    if batch < 1:
        raise GibbsInitError("bad-count", "batch must be >= 1")
    pts = gmm_sample(spec, batch, seed).points
    amp = (2.0 * np.pi * spec.sigma ** 2) ** (-spec.d / 2.0)
    pop_amp = (4.0 * np.pi * spec.sigma ** 2) ** (-spec.d / 2.0)
    obj = _kernel_objective(domain or spec.domain, spec.means, -pop_amp * spec.weights,
                            np.sqrt(2.0) * spec.sigma, "gmm-batched",
                            grad_form=(pts, np.full(batch, -amp / batch), spec.sigma))
    return obj


# --------------------------------------------------------------------------
# Generalized multinomial logit, maximum simulated likelihood


@dataclass(frozen=True)
class GMNLSpec:
    products: np.ndarray      # (J, p) attributes x_j
    phi_star: np.ndarray
    psi_star: np.ndarray
    R: int
    frozen_draws: np.ndarray  # (N, R) simulation shocks, fixed for the whole experiment
    draw_seed: int
    box_half_width: float = 2.0

    @property
    def p(self) -> int:
        return int(self.products.shape[1])

    @property
    def J(self) -> int:
        return int(self.products.shape[0])

    @property
    def q(self) -> int:
        return int(self.psi_star.shape[0])

    @property
    def N(self) -> int:
        return int(self.frozen_draws.shape[0])

    @property
    def theta_star(self) -> np.ndarray:
        return np.concatenate([self.phi_star, self.psi_star])

    @property
    def domain(self) -> Domain:
        return Domain.box(-self.box_half_width, self.box_half_width, self.p + self.q)


def gmnl_frozen_draws(N: int, R: int, draw_seed: int) -> np.ndarray:
    return np.random.default_rng(draw_seed).standard_normal((N, R))


def gmnl_generate(p: int = 10, q: int = 5, J: int = 5, N: int = 1000, R: int = 100,
                  seed: int = 0, phi_star=None, psi_star=None, shock_sd: float = 1.0,
                  box_half_width: float = 2.0):
    """Simulate a GMNL choice dataset.

    Customer rows are ``[customer_id, chosen_index, z_1..z_q]``. The frozen
    simulation draws come from a stream independent of the generating shocks.
    """
    if phi_star is None:
        if p % 2:
            raise GibbsInitError("bad-problem", "default phi* needs even p")
        phi_star = np.concatenate([np.ones(p // 2), -np.ones(p // 2)])
    if psi_star is None:
        psi_star = np.ones(q)
    phi_star = np.asarray(phi_star, dtype=float)
    psi_star = np.asarray(psi_star, dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((J, p))
    Z = rng.standard_normal((N, q))
    xi = shock_sd * rng.standard_normal(N)
    scale = np.exp(Z @ psi_star + xi)
    U = scale[:, None] * (X @ phi_star)[None, :] + rng.gumbel(size=(N, J))
    y = np.argmax(U, axis=1)
    draw_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
    spec = GMNLSpec(X, phi_star, psi_star, R, gmnl_frozen_draws(N, R, draw_seed), draw_seed,
                    box_half_width)
    data = Dataset(np.column_stack([np.arange(N), y, Z]))
    return spec, data


def gmnl_choices(data: Dataset) -> np.ndarray:
    return data.points[:, 1].astype(np.int64)


def gmnl_sim_nll(spec: GMNLSpec, data: Dataset, domain: Optional[Domain] = None) -> Objective:
    """Simulated negative log-likelihood over the customers in ``data``.

    Uses common random numbers, so the result is a deterministic function of theta.
    """
    ids = data.points[:, 0].astype(np.int64)
    y = data.points[:, 1].astype(np.int64)
    Z = np.ascontiguousarray(data.points[:, 2:])
    E = np.exp(spec.frozen_draws[ids])
    X = spec.products
    p = spec.p

    def evaluate(theta, want_grad):
        phi, psi = theta[:p], theta[p:]
        with np.errstate(over="ignore"):  # overflow surfaces as utility-overflow below
            a = np.exp(Z @ psi)
        value, gv, gpsi, loglik, bad = kernels.gmnl_eval(X @ phi, a, E, y, Z, want_grad)
        if bad >= 0:
            n, r = divmod(bad, spec.R)
            raise GibbsInitError("utility-overflow", f"customer {ids[n]}, draw {r}")
        return value, np.concatenate([X.T @ gv, gpsi]), loglik

    obj = Objective(domain or spec.domain, lambda t: evaluate(t, False)[0],
                    lambda t: evaluate(t, True)[1], name="gmnl-sim-nll")
    obj.loglik = lambda t: evaluate(np.asarray(t, dtype=float), False)[2]
    obj.value_and_grad = lambda t: evaluate(np.asarray(t, dtype=float), True)[:2]
    return obj


def gmnl_export(spec: GMNLSpec, data: Dataset, directory, seed: Optional[int] = None) -> None:
    """Write products.csv, customers.csv, choices.csv and spec.json."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "products.csv", spec.products, delimiter=",", fmt="%.17g")
    np.savetxt(out / "customers.csv", data.points[:, 2:], delimiter=",", fmt="%.17g")
    np.savetxt(out / "choices.csv", gmnl_choices(data), fmt="%d")
    meta = {"p": spec.p, "q": spec.q, "J": spec.J, "N": spec.N, "R": spec.R,
            "phi_star": spec.phi_star.tolist(), "psi_star": spec.psi_star.tolist(),
            "draw_seed": spec.draw_seed, "box_half_width": spec.box_half_width, "seed": seed}
    (out / "spec.json").write_text(json.dumps(meta, indent=2))


def gmnl_import(directory):
    src = Path(directory)
    meta = json.loads((src / "spec.json").read_text())
    X = np.atleast_2d(np.loadtxt(src / "products.csv", delimiter=","))
    Z = np.loadtxt(src / "customers.csv", delimiter=",").reshape(meta["N"], meta["q"])
    y = np.atleast_1d(np.loadtxt(src / "choices.csv", dtype=np.int64))
    spec = GMNLSpec(X, np.array(meta["phi_star"]), np.array(meta["psi_star"]), meta["R"],
                    gmnl_frozen_draws(meta["N"], meta["R"], meta["draw_seed"]),
                    meta["draw_seed"], meta.get("box_half_width", 2.0))
    return spec, Dataset(np.column_stack([np.arange(meta["N"]), y, Z]))


# --------------------------------------------------------------------------
# 1-D double well:  F(t) = height (t^2 - 1)^2 + (alpha / 4)(t^3 - 3t)
# Minima stay at t = +-1; F(-1) - F(+1) = alpha exactly.


class DoubleWell(Objective):
    def __init__(self, alpha: float, height: float = 1.0, half_width: float = 2.0):
        if alpha < 0 or not height > 0:
            raise GibbsInitError("bad-problem", "need alpha >= 0 and height > 0")
        if alpha >= 16.0 * height / 3.0:
            raise GibbsInitError("bad-problem", "alpha too large: shallow well disappears")
        self.alpha = float(alpha)
        self.height = float(height)
        c = self.alpha / 4.0
        h = self.height

        def f(t):
            return h * (t * t - 1.0) ** 2 + c * (t ** 3 - 3.0 * t)

        def fp(t):
            return (t * t - 1.0) * (4.0 * h * t + 3.0 * c)

        self.f, self.fp = f, fp
        self.fpp = lambda t: 12.0 * h * t * t + 6.0 * c * t - 4.0 * h
        super().__init__(Domain.box(-half_width, half_width),
                         lambda th: f(th[0]), lambda th: np.array([fp(th[0])]),
                         batch_value_fn=lambda X: f(X[:, 0]),
                         batch_grad_fn=lambda X: fp(X[:, 0])[:, None],
                         name=f"double-well(alpha={alpha})",
                         coordinate_functions=[f])

    @property
    def deep_min(self) -> float:
        return 1.0

    @property
    def shallow_min(self) -> float:
        return -1.0

    @property
    def local_max(self) -> float:
        return -3.0 * self.alpha / (16.0 * self.height)

    @property
    def convexity_radius(self) -> float:
        """Half-width of the convex region around the deep minimum (to the left of +1)."""
        h, a = self.height, self.alpha
        t_plus = (-1.5 * a + np.sqrt(2.25 * a * a + 192.0 * h * h)) / (24.0 * h)
        return 1.0 - t_plus


def double_well_1d(alpha: float, height: float = 1.0, half_width: float = 2.0) -> DoubleWell:
    return DoubleWell(alpha, height, half_width)
