"""Exception taxonomy shared across the package.

The three classes mirror the failure modes a caller can act on: bad
configuration, bad data, and numerical breakdown during estimation.
Command-line entry points map them to distinct exit codes.
"""


class ConfigurationError(ValueError):
    """Invalid option, prior setting, or malformed configuration input."""


class DataError(ValueError):
    """Input data that cannot be used: schema violations, empty or
    inconsistent records, truncated files."""


class NumericalError(ArithmeticError):
    """Numerical failure inside an estimator (non-finite weights,
    divergent fits) that is not attributable to caller input."""
