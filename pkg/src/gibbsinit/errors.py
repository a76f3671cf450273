class GibbsInitError(ValueError):
    """Raised for contract violations; ``code`` is a stable machine-readable tag."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ExperimentUnstable(RuntimeError):
    code = "experiment-unstable"
