"""Exception types shared across the package."""


class GapError(ValueError):
    """The spectrum has no usable eigengap at the requested split index."""


class RankDeficiencyError(ValueError):
    """A matrix that must have full (or at least k) rank does not."""


class ConvergenceError(RuntimeError):
    """An iterative or factorization routine failed to converge."""
