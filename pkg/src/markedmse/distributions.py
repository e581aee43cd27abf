"""Seeded random streams and the distribution kernels used by the samplers.

Every stochastic component in the package draws through a
:class:`RandomStream` (a PCG64 generator with a reproducible split rule)
and a small set of distribution objects that pair a sampler with the
matching log density.  Parameterizations are fixed here once so that
prior densities, Gibbs updates, and test oracles cannot drift apart:

* ``Gamma(shape, rate)`` has mean ``shape / rate``.
* ``InverseGamma(shape, scale)`` has density proportional to
  ``x**-(shape + 1) * exp(-scale / x)``.
* ``Normal(mean, var)`` is parameterized by the variance, not the
  standard deviation.

Invalid parameters raise ``ValueError`` at construction.  Evaluating a
log density outside the support returns ``-inf`` and is never an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "RandomStream",
    "as_generator",
    "Normal",
    "Gamma",
    "InverseGamma",
    "Beta",
    "Poisson",
    "Dirichlet",
    "Multinomial",
    "Categorical",
    "draw",
    "log_density",
    "dm_log_marginal",
]

_LOG_TWO_PI = math.log(2.0 * math.pi)

# Tolerance for "sums to one" checks on probability vectors supplied as
# density arguments or distribution parameters.
_SIMPLEX_TOL = 1e-9


class RandomStream:
    """Reproducible random stream with deterministic splitting.

    A stream is identified by a key: the master seed plus the indices of
    every split taken from it.  Two streams with the same key produce
    identical draw sequences; ``split(index)`` derives a child stream
    whose output is independent of how much the parent has been
    consumed, because the child is keyed by ``(seed, path + (index,))``
    rather than by parent state.  The path is mapped onto numpy's
    ``spawn_key``, which (unlike appending to the entropy) guarantees
    that a child never collides with its parent, even for index 0.

    Parameters
    ----------
    key : int or sequence of int
        Master seed, or ``(seed, *path)`` key of a derived stream.
    """

    __slots__ = ("key", "gen")

    def __init__(self, key):
        if isinstance(key, (tuple, list, np.ndarray)):
            self.key = tuple(int(v) for v in key)
            if not self.key:
                raise ValueError("stream key must not be empty")
        else:
            self.key = (int(key),)
        seq = np.random.SeedSequence(self.key[0], spawn_key=self.key[1:])
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def split(self, index):
        """Return a fresh stream keyed by this stream's key plus ``index``."""
        return RandomStream(self.key + (int(index),))

    def __repr__(self):
        return f"RandomStream(key={self.key!r})"


def as_generator(rng):
    """Coerce ``rng`` (RandomStream, numpy Generator, or int seed) to a Generator."""
    if isinstance(rng, RandomStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng)).gen
    raise TypeError(f"expected RandomStream, numpy Generator, or int seed, got {type(rng)!r}")


@dataclass(frozen=True)
class Normal:
    """Normal distribution parameterized by mean and variance."""

    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0.0 and math.isfinite(self.var)):
            raise ValueError(f"Normal variance must be positive and finite, got {self.var}")
        if not math.isfinite(self.mean):
            raise ValueError(f"Normal mean must be finite, got {self.mean}")

    def sample(self, rng, size=None):
        return as_generator(rng).normal(self.mean, math.sqrt(self.var), size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        out = -0.5 * (_LOG_TWO_PI + math.log(self.var)) - (x - self.mean) ** 2 / (2.0 * self.var)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Gamma:
    """Gamma distribution with shape/rate parameterization (mean shape/rate)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0.0 and math.isfinite(self.shape)):
            raise ValueError(f"Gamma shape must be positive and finite, got {self.shape}")
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise ValueError(f"Gamma rate must be positive and finite, got {self.rate}")

    def sample(self, rng, size=None):
        return as_generator(rng).gamma(self.shape, 1.0 / self.rate, size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        norm = self.shape * math.log(self.rate) - gammaln(self.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            body = norm + (self.shape - 1.0) * np.log(x) - self.rate * x
        out = np.where(x > 0.0, body, -np.inf)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class InverseGamma:
    """Inverse-gamma distribution: density ~ x**-(shape+1) * exp(-scale/x)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0.0 and math.isfinite(self.shape)):
            raise ValueError(f"InverseGamma shape must be positive and finite, got {self.shape}")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError(f"InverseGamma scale must be positive and finite, got {self.scale}")

    def sample(self, rng, size=None):
        return self.scale / as_generator(rng).gamma(self.shape, 1.0, size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        norm = self.shape * math.log(self.scale) - gammaln(self.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            body = norm - (self.shape + 1.0) * np.log(x) - self.scale / x
        out = np.where(x > 0.0, body, -np.inf)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Beta:
    """Beta distribution on the open unit interval."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError(f"Beta parameter a must be positive and finite, got {self.a}")
        if not (self.b > 0.0 and math.isfinite(self.b)):
            raise ValueError(f"Beta parameter b must be positive and finite, got {self.b}")

    def sample(self, rng, size=None):
        return as_generator(rng).beta(self.a, self.b, size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        norm = gammaln(self.a + self.b) - gammaln(self.a) - gammaln(self.b)
        with np.errstate(divide="ignore", invalid="ignore"):
            body = norm + (self.a - 1.0) * np.log(x) + (self.b - 1.0) * np.log1p(-x)
        out = np.where((x > 0.0) & (x < 1.0), body, -np.inf)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Poisson:
    """Poisson distribution; a zero rate is the point mass at zero."""

    rate: float

    def __post_init__(self):
        if not (self.rate >= 0.0 and math.isfinite(self.rate)):
            raise ValueError(f"Poisson rate must be nonnegative and finite, got {self.rate}")

    def sample(self, rng, size=None):
        return as_generator(rng).poisson(self.rate, size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        valid = (x >= 0.0) & (x == np.floor(x)) & np.isfinite(x)
        if self.rate == 0.0:
            out = np.where(valid & (x == 0.0), 0.0, -np.inf)
        else:
            safe = np.where(valid, x, 0.0)
            body = safe * math.log(self.rate) - self.rate - gammaln(safe + 1.0)
            out = np.where(valid, body, -np.inf)
        return out if out.ndim else float(out)


def _check_probs(probs, what):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"{what} must be a nonempty 1-d vector")
    if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
        raise ValueError(f"{what} must be finite and nonnegative")
    if abs(probs.sum() - 1.0) > _SIMPLEX_TOL:
        raise ValueError(f"{what} must sum to 1, got {probs.sum()!r}")
    return probs


@dataclass(frozen=True)
class Dirichlet:
    """Dirichlet distribution over the open probability simplex."""

    alpha: tuple

    def __init__(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 2:
            raise ValueError("Dirichlet needs a 1-d concentration vector of length >= 2")
        if np.any(alpha <= 0.0) or not np.all(np.isfinite(alpha)):
            raise ValueError("Dirichlet concentrations must be positive and finite")
        object.__setattr__(self, "alpha", tuple(float(a) for a in alpha))

    def sample(self, rng, size=None):
        return as_generator(rng).dirichlet(self.alpha, size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        alpha = np.asarray(self.alpha)
        if x.shape[-1] != alpha.size:
            raise ValueError(f"expected length-{alpha.size} simplex point, got shape {x.shape}")
        norm = gammaln(alpha.sum()) - gammaln(alpha).sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            body = norm + np.sum((alpha - 1.0) * np.log(x), axis=-1)
        ok = np.all(x > 0.0, axis=-1) & (np.abs(np.sum(x, axis=-1) - 1.0) <= _SIMPLEX_TOL)
        out = np.where(ok, body, -np.inf)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Multinomial:
    """Multinomial counts over a fixed probability vector."""

    n: int
    probs: tuple

    def __init__(self, n, probs):
        if not (isinstance(n, (int, np.integer)) and n >= 0):
            raise ValueError(f"Multinomial n must be a nonnegative integer, got {n!r}")
        probs = _check_probs(probs, "Multinomial probs")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))

    def sample(self, rng, size=None):
        return as_generator(rng).multinomial(self.n, self.probs, size=size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        probs = np.asarray(self.probs)
        if x.shape[-1] != probs.size:
            raise ValueError(f"expected length-{probs.size} count vector, got shape {x.shape}")
        valid = (
            np.all((x >= 0.0) & (x == np.floor(x)), axis=-1)
            & (np.sum(x, axis=-1) == self.n)
        )
        safe = np.where(x >= 0.0, x, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(safe > 0.0, safe * np.log(probs), 0.0)
        body = gammaln(self.n + 1.0) - gammaln(safe + 1.0).sum(axis=-1) + terms.sum(axis=-1)
        out = np.where(valid, body, -np.inf)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Categorical:
    """Single draw from a finite label set {0, ..., K-1}."""

    probs: tuple

    def __init__(self, probs):
        probs = _check_probs(probs, "Categorical probs")
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))

    def sample(self, rng, size=None):
        gen = as_generator(rng)
        return gen.choice(len(self.probs), size=size, p=np.asarray(self.probs))

    def log_density(self, x):
        x = np.asarray(x)
        probs = np.asarray(self.probs)
        valid = (x == np.floor(x)) & (x >= 0) & (x < probs.size)
        idx = np.where(valid, x.astype(int), 0)
        with np.errstate(divide="ignore"):
            body = np.log(probs[idx])
        out = np.where(valid, body, -np.inf)
        return out if out.ndim else float(out)


def draw(dist, rng, size=None):
    """Sample from a distribution object using the given stream."""
    return dist.sample(rng, size=size)


def log_density(dist, x):
    """Evaluate the log density (or log pmf) of ``dist`` at ``x``.

    Points outside the support yield ``-inf``.  Invalid distribution
    parameters are rejected when the distribution object is built, so
    they can never reach this function.
    """
    return dist.log_density(x)


def dm_log_marginal(counts, alpha):
    """Log marginal probability of a cluster assignment vector under a
    symmetric Dirichlet prior with the weights integrated out.

    For ``K = len(counts)`` clusters, total concentration ``alpha``
    split evenly as ``alpha / K`` per cluster, and occupancy counts
    ``N_1, ..., N_K`` summing to ``N``, this is

        ln G(alpha) - ln G(alpha + N)
        + sum_k [ln G(alpha/K + N_k) - ln G(alpha/K)]

    with ``G`` the gamma function: the probability of one particular
    assignment sequence, not of the count vector, so factors free of
    ``alpha`` are omitted.  It is the workhorse of the concentration
    update, where only ratios in ``alpha`` matter.

    Parameters
    ----------
    counts : array_like of int
        Occupancy counts per cluster, length K, zeros included.
    alpha : float
        Total concentration, positive.

    Returns
    -------
    float
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or counts.size < 1:
        raise ValueError("counts must be a 1-d vector")
    if np.any(counts < 0) or np.any(counts != np.floor(counts)):
        raise ValueError("counts must be nonnegative integers")
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha}")
    k = counts.size
    n = counts.sum()
    per = alpha / k
    return float(
        gammaln(alpha)
        - gammaln(alpha + n)
        + np.sum(gammaln(per + counts) - gammaln(per))
    )
