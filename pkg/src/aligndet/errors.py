"""Exception types shared across the package."""


class DataError(ValueError):
    """Invalid input data or a violated call contract (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Numerical failure such as rank deficiency (CLI exit code 3)."""
