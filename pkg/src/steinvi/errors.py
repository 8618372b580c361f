"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree with what an operation needs."""


class SingularFactorError(ValueError):
    """A triangular factor has a zero on its diagonal."""


class NotPositiveDefiniteError(ValueError):
    """Cholesky factorization hit a non-positive pivot."""


class DataLoadError(ValueError):
    """A delimited-text dataset could not be parsed into a design matrix."""
