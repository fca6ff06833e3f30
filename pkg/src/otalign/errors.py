"""Exception types shared across the package, mapped to CLI exit codes."""


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class NumericalError(Exception):
    """Numerical failure such as a degenerate solve (CLI exit code 3)."""
