"""Multiple-systems estimation for marked incident data.

Tools for estimating how many incidents a set of overlapping casualty
lists missed, and how many fatalities those missed incidents carried:
a stratified latent-class MCMC sampler with data augmentation, classic
baseline estimators (frequency-of-frequencies, mark regressions,
log-linear capture models with information-criterion selection),
simulation and prior-sensitivity drivers, and posterior analytics
including mortality-rate Monte Carlo.
"""

from .errors import ConfigurationError, DataError, NumericalError

__all__ = ["ConfigurationError", "DataError", "NumericalError"]

__version__ = "0.1.0"
