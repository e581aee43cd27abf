"""Stratified latent-class sampler for marked multiple-systems data.

Observed incidents carry a binary capture pattern over R lists and a
positive mark.  Incidents whose pattern is all zero are never observed;
the sampler treats them as missing data.  The model:

* Within stratum g, incident counts are Poisson(lambda_g).
* Each incident belongs to one of K latent clusters; cluster weights
  pi_g are stratum specific, cluster parameters are shared.
* Given cluster k, the R list indicators are independent Bernoulli
  with probabilities p_k1..p_kR, and the log mark is Normal(mu_k,
  sigma2_k).  The probability of never being listed is
  q_k = prod_j (1 - p_kj).

Priors: pi_g ~ Dirichlet(alpha_g/K, ..., alpha_g/K) with either fixed
alpha_g or alpha_g ~ Gamma(a_alpha, b_alpha); p_kj ~ Beta(a_p, b_p);
sigma2_k ~ InverseGamma(c0, C0); mu_k ~ Normal(m0, s0_sq);
lambda_g ~ Gamma(a_lambda, b_lambda), where b_lambda = 0 is the
improper scale prior (the posterior rate b_lambda + 1 is proper).

The Gibbs sweep augments the data with the missed incidents per
stratum (count, cluster allocations, log marks), then updates
concentrations by an adaptive random-walk Metropolis step on the
log scale against the Dirichlet-multinomial marginal with the weights
integrated out, and only then redraws the weights; the remaining
updates are conjugate.  Updating alpha from the marginal *before*
redrawing pi is what keeps the collapsed step valid.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import Gamma, RandomStream, as_generator, dm_log_marginal
from .errors import ConfigurationError, DataError, NumericalError

__all__ = [
    "ModelConfig",
    "MCMCSettings",
    "ParameterState",
    "AugmentedState",
    "AlphaAdaptation",
    "ChainData",
    "DerivedQuantities",
    "MissingDraw",
    "PosteriorDraws",
    "nondetection_probs",
    "missing_probability",
    "derived_quantities",
    "init_state",
    "update_assignments",
    "update_rates",
    "sample_missing",
    "update_concentration",
    "update_weights",
    "update_capture_probs",
    "update_mark_params",
    "functionals",
    "run_chain",
]

_LOG_TWO_PI = math.log(2.0 * math.pi)

# Below this never-observed probability the thinned count is treated as
# exactly zero rather than risking a degenerate allocation step.
MIN_MISSING_PROB = 1e-300

# Hard cap on a single stratum-sweep missing-count draw; a draw beyond
# it means the chain has left any numerically meaningful regime.
_MAX_MISSING_DRAW = 50_000_000


@dataclass(frozen=True)
class ModelConfig:
    """Prior and truncation settings for the latent-class model.

    ``m0``/``s0_sq`` default to the sample mean and variance of all
    observed log marks, pooled across strata; they are filled in by
    :meth:`resolved_for`.  Setting ``fixed_alpha`` pins every stratum
    concentration to that value and disables the Metropolis step;
    otherwise alpha_g ~ Gamma(a_alpha, b_alpha).
    """

    n_clusters: int = 100
    a_p: float = 1.0
    b_p: float = 1.0
    c0: float = 4.0
    C0: float = 1.0
    m0: float | None = None
    s0_sq: float | None = None
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    fixed_alpha: float | None = None
    a_lambda: float = 0.5
    b_lambda: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.n_clusters, (int, np.integer)) and self.n_clusters >= 2):
            raise ConfigurationError(f"n_clusters must be an integer >= 2, got {self.n_clusters!r}")
        for name in ("a_p", "b_p", "c0", "C0", "a_alpha", "b_alpha", "a_lambda"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be positive and finite, got {v!r}")
        if not (self.b_lambda >= 0 and math.isfinite(self.b_lambda)):
            raise ConfigurationError(f"b_lambda must be nonnegative, got {self.b_lambda!r}")
        if self.fixed_alpha is not None and not (
            self.fixed_alpha > 0 and math.isfinite(self.fixed_alpha)
        ):
            raise ConfigurationError(f"fixed_alpha must be positive, got {self.fixed_alpha!r}")
        if self.m0 is not None and not math.isfinite(self.m0):
            raise ConfigurationError(f"m0 must be finite, got {self.m0!r}")
        if self.s0_sq is not None and not (self.s0_sq > 0 and math.isfinite(self.s0_sq)):
            raise ConfigurationError(f"s0_sq must be positive, got {self.s0_sq!r}")

    def resolved_for(self, dataset):
        """Fill ``m0``/``s0_sq`` from the observed log marks if unset.

        The pooled sample mean and variance are used regardless of the
        stratification.  A degenerate variance (fewer than two
        incidents, or identical marks) falls back to 1.0.
        """
        if self.m0 is not None and self.s0_sq is not None:
            return self
        if dataset.m == 0:
            raise DataError("cannot resolve mark-prior moments without observed incidents")
        m0 = self.m0 if self.m0 is not None else float(dataset.log_marks.mean())
        if self.s0_sq is not None:
            s0 = self.s0_sq
        else:
            s0 = float(dataset.log_marks.var(ddof=1)) if dataset.m > 1 else 0.0
            if not (s0 > 0):
                s0 = 1.0
        return dataclasses.replace(self, m0=m0, s0_sq=s0)

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class MCMCSettings:
    """Chain length, seeding, adaptation, and retention options.

    A sweep ``t`` (1-based) is retained when ``t > burn_in`` and
    ``(t - burn_in) % thin == 0``, giving ``(iterations - burn_in) //
    thin`` retained draws.  Imputed log marks are clamped to
    ``[-mark_clamp, mark_clamp]`` before exponentiation; clamp events
    are counted and reported, not silent.  Step-size adaptation for the
    concentration updates runs during burn-in only.
    """

    iterations: int = 20_000
    burn_in: int = 4_000
    thin: int = 4
    seed: int = 0
    target_accept: float = 0.234
    adapt_rate: float = 1.0
    adapt_decay: float = 0.6
    init_step: float = 1.0
    mark_clamp: float = 30.0
    keep_params: bool = False
    keep_imputed: bool = False

    def __post_init__(self):
        if not (isinstance(self.iterations, (int, np.integer)) and self.iterations >= 1):
            raise ConfigurationError(f"iterations must be a positive integer, got {self.iterations!r}")
        if not (isinstance(self.burn_in, (int, np.integer)) and 0 <= self.burn_in < self.iterations):
            raise ConfigurationError(
                f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in!r}"
            )
        if not (isinstance(self.thin, (int, np.integer)) and self.thin >= 1):
            raise ConfigurationError(f"thin must be a positive integer, got {self.thin!r}")
        if (self.iterations - self.burn_in) // self.thin < 1:
            raise ConfigurationError("settings retain no draws: lengthen the chain or lower thin")
        if not (0.0 < self.target_accept < 1.0):
            raise ConfigurationError(f"target_accept must be in (0,1), got {self.target_accept!r}")
        for name in ("adapt_rate", "init_step", "mark_clamp"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be positive and finite, got {v!r}")
        if not (0.5 < self.adapt_decay <= 1.0):
            raise ConfigurationError(f"adapt_decay must be in (0.5, 1], got {self.adapt_decay!r}")

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thin

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ParameterState:
    """Current model parameters: weights (G,K), concentrations (G,),
    capture probabilities (K,R), mark moments (K,), rates (G,)."""

    pi: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    lam: np.ndarray


@dataclass
class AugmentedState:
    """Latent data: observed-incident assignments plus the missed
    incidents (count, per-cluster allocation, log marks) per stratum."""

    z: np.ndarray            # (m,) cluster of each observed incident
    n0: np.ndarray           # (G,) missed incidents per stratum
    by_cluster: np.ndarray   # (G,K) allocation of the missed incidents
    x0: list                 # per stratum, imputed log marks (n0[g],)
    x0_cluster: list         # per stratum, cluster of each imputed mark


@dataclass
class AlphaAdaptation:
    """Per-stratum random-walk step state for the concentration update."""

    log_step: np.ndarray
    target: float = 0.234
    rate: float = 1.0
    decay: float = 0.6
    sweep: int = 0
    adapting: bool = True
    accepted: np.ndarray = None
    proposed: np.ndarray = None

    @classmethod
    def for_strata(cls, n_strata, settings):
        return cls(
            log_step=np.full(n_strata, math.log(settings.init_step)),
            target=settings.target_accept,
            rate=settings.adapt_rate,
            decay=settings.adapt_decay,
            accepted=np.zeros(n_strata, dtype=np.int64),
            proposed=np.zeros(n_strata, dtype=np.int64),
        )

    @property
    def acceptance_rate(self):
        with np.errstate(invalid="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)


@dataclass(frozen=True)
class DerivedQuantities:
    """Never-listed probability per cluster (q) and per stratum (p0)."""

    q: np.ndarray   # (K,)
    p0: np.ndarray  # (G,)


@dataclass
class MissingDraw:
    """One augmentation draw of the missed incidents."""

    n0: np.ndarray
    by_cluster: np.ndarray
    x0: list
    x0_cluster: list
    n_clamped: int


@dataclass(frozen=True)
class ChainData:
    """Precomputed observed-data arrays used by every sweep."""

    patterns: np.ndarray
    strata: np.ndarray
    log_marks: np.ndarray
    m_by_stratum: np.ndarray
    observed_mark_sums: np.ndarray
    unique_patterns: np.ndarray
    pattern_index: np.ndarray
    capture_indices: tuple
    stratum_labels: tuple

    @classmethod
    def from_dataset(cls, dataset):
        patterns = dataset.patterns.astype(float)
        unique, inverse = np.unique(patterns, axis=0, return_inverse=True)
        return cls(
            patterns=patterns,
            strata=dataset.strata,
            log_marks=dataset.log_marks,
            m_by_stratum=dataset.m_by_stratum,
            observed_mark_sums=dataset.mark_sums_by_stratum,
            unique_patterns=unique,
            pattern_index=inverse.reshape(-1),
            capture_indices=tuple(
                np.flatnonzero(dataset.patterns[:, j]) for j in range(dataset.n_lists)
            ),
            stratum_labels=dataset.stratum_labels,
        )

    @property
    def m(self):
        return self.patterns.shape[0]

    @property
    def n_lists(self):
        return self.patterns.shape[1]

    @property
    def n_strata(self):
        return len(self.m_by_stratum)


def nondetection_probs(p):
    """q_k = prod_j (1 - p_kj): never-listed probability per cluster."""
    return np.prod(1.0 - p, axis=1)


def missing_probability(pi, q):
    """p_0g = sum_k pi_gk q_k: never-listed probability per stratum."""
    return pi @ q


def derived_quantities(params):
    """Bundle q and p0 for the current parameters."""
    q = nondetection_probs(params.p)
    return DerivedQuantities(q=q, p0=missing_probability(params.pi, q))


def init_state(dataset, config, rng):
    """Draw the initial chain state from the priors.

    Rates use the prior when it is proper and fall back to the observed
    stratum counts under the improper ``b_lambda = 0`` prior.  Observed
    incidents are assigned to clusters by sampling the prior weights;
    the missing-data side starts empty.
    """
    if dataset.m == 0:
        raise DataError("cannot initialize a chain with zero observed incidents")
    config = config.resolved_for(dataset)
    gen = as_generator(rng)
    n_strata, n_clusters = dataset.n_strata, config.n_clusters

    if config.fixed_alpha is not None:
        alpha = np.full(n_strata, float(config.fixed_alpha))
    else:
        alpha = gen.gamma(config.a_alpha, 1.0 / config.b_alpha, size=n_strata)
    pi = _dirichlet_rows(np.full((n_strata, n_clusters), 1.0) * (alpha[:, None] / n_clusters), gen)
    p = gen.beta(config.a_p, config.b_p, size=(n_clusters, dataset.n_lists))
    sigma2 = config.C0 / gen.standard_gamma(config.c0, size=n_clusters)
    mu = gen.normal(config.m0, math.sqrt(config.s0_sq), size=n_clusters)
    if config.b_lambda > 0:
        lam = gen.gamma(config.a_lambda, 1.0 / config.b_lambda, size=n_strata)
    else:
        lam = dataset.m_by_stratum.astype(float)

    with np.errstate(divide="ignore"):
        logw = np.log(pi)[dataset.strata]
    z = _categorical_rows(logw, gen, what="initial assignment")

    params = ParameterState(pi=pi, alpha=alpha, p=p, mu=mu, sigma2=sigma2, lam=lam)
    aug = AugmentedState(
        z=z,
        n0=np.zeros(n_strata, dtype=np.int64),
        by_cluster=np.zeros((n_strata, n_clusters), dtype=np.int64),
        x0=[np.empty(0) for _ in range(n_strata)],
        x0_cluster=[np.empty(0, dtype=np.intp) for _ in range(n_strata)],
    )
    return params, aug


def _categorical_rows(logw, gen, what="draw"):
    # one categorical draw per row of log weights, by inverse cdf
    top = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        bad = int(np.flatnonzero(~np.isfinite(top.ravel()))[0])
        raise NumericalError(f"{what}: no cluster has positive probability for record {bad}")
    w = np.exp(logw - top)
    cum = np.cumsum(w, axis=1)
    u = gen.uniform(size=logw.shape[0]) * cum[:, -1]
    return (cum > u[:, None]).argmax(axis=1)


def _dirichlet_rows(conc, gen):
    # row-wise Dirichlet via gamma normalization; rows whose gamma draws
    # all underflow to zero (concentrations small enough that redrawing
    # would underflow again) are rebuilt in log space with the shape
    # boost G = H * U^(1/a), H ~ Gamma(a+1), whose normalized softmax is
    # an exact Dirichlet draw for arbitrarily small a
    draws = gen.standard_gamma(conc)
    totals = draws.sum(axis=1)
    bad = np.flatnonzero(totals <= 0.0)
    if bad.size:
        a = np.maximum(conc[bad], 1e-300)
        with np.errstate(divide="ignore"):
            log_g = (
                np.log(gen.standard_gamma(a + 1.0))
                + np.log(gen.uniform(size=a.shape)) / a
            )
        rows = np.exp(log_g - log_g.max(axis=1, keepdims=True))
        draws[bad] = rows
        totals[bad] = rows.sum(axis=1)
    return draws / totals[:, None]


def update_assignments(data, params, rng):
    """Redraw the observed incidents' cluster labels.

    The conditional probability of cluster k for incident i in stratum
    g is proportional to ``pi_gk * prod_j p_kj^s_ij (1-p_kj)^(1-s_ij)
    * phi(x_i; mu_k, sigma2_k)``, computed in log space with the row
    maximum subtracted before exponentiation.
    """
    gen = as_generator(rng)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
        log_p = np.log(params.p)
        log_1mp = np.log1p(-params.p)
    pattern_ll = data.unique_patterns @ log_p.T + (1.0 - data.unique_patterns) @ log_1mp.T
    mark_ll = (
        -0.5 * (_LOG_TWO_PI + np.log(params.sigma2))
        - (data.log_marks[:, None] - params.mu) ** 2 / (2.0 * params.sigma2)
    )
    logw = log_pi[data.strata] + pattern_ll[data.pattern_index] + mark_ll
    return _categorical_rows(logw, gen, what="cluster assignment")


def update_rates(m_by_stratum, n0, config, rng):
    """lambda_g ~ Gamma(a_lambda + m_g + n_0g, b_lambda + 1)."""
    gen = as_generator(rng)
    shape = config.a_lambda + m_by_stratum + n0
    return gen.gamma(shape, 1.0 / (config.b_lambda + 1.0))


def sample_missing(params, rng, mark_clamp=30.0):
    """Impute the missed incidents for every stratum.

    Counts are thinned Poisson draws ``n_0g ~ Poisson(lambda_g p_0g)``;
    allocations are ``Multinomial(n_0g, pi_gk q_k / p_0g)``; log marks
    come from the allocated clusters' normal components and are clamped
    to ``[-mark_clamp, mark_clamp]`` with the clamp count reported.
    A p_0g below ``MIN_MISSING_PROB`` short-circuits to zero missing.
    """
    gen = as_generator(rng)
    n_strata, n_clusters = params.pi.shape
    q = nondetection_probs(params.p)
    p0 = missing_probability(params.pi, q)
    n0 = np.zeros(n_strata, dtype=np.int64)
    by_cluster = np.zeros((n_strata, n_clusters), dtype=np.int64)
    x0, x0_cluster = [], []
    clamped = 0
    for g in range(n_strata):
        if p0[g] < MIN_MISSING_PROB:
            x0.append(np.empty(0))
            x0_cluster.append(np.empty(0, dtype=np.intp))
            continue
        count = int(gen.poisson(params.lam[g] * p0[g]))
        if count > _MAX_MISSING_DRAW:
            raise NumericalError(f"missing-count draw exploded in stratum {g}: {count}")
        if count == 0:
            x0.append(np.empty(0))
            x0_cluster.append(np.empty(0, dtype=np.intp))
            continue
        probs = params.pi[g] * q
        probs = probs / probs.sum()
        counts = gen.multinomial(count, probs)
        labels = np.repeat(np.arange(n_clusters), counts)
        x = gen.normal(params.mu[labels], np.sqrt(params.sigma2[labels]))
        clamped += int(np.count_nonzero(np.abs(x) > mark_clamp))
        np.clip(x, -mark_clamp, mark_clamp, out=x)
        n0[g] = count
        by_cluster[g] = counts
        x0.append(x)
        x0_cluster.append(labels)
    return MissingDraw(n0=n0, by_cluster=by_cluster, x0=x0, x0_cluster=x0_cluster, n_clamped=clamped)


def update_concentration(counts, alpha, config, adapt, rng):
    """Metropolis update of each stratum concentration on the log scale.

    The target is the Dirichlet-multinomial marginal of the occupancy
    counts (weights integrated out) times the gamma prior; the
    log-scale random walk contributes the alpha*/alpha Jacobian factor.
    Step sizes adapt toward the target acceptance rate during burn-in
    with gain ``adapt.rate * t**-adapt.decay`` and are frozen after.
    With a fixed concentration this is a no-op that consumes no
    randomness.
    """
    if config.fixed_alpha is not None:
        return alpha
    gen = as_generator(rng)
    prior = Gamma(config.a_alpha, config.b_alpha)
    new = alpha.copy()
    gain = adapt.rate * (adapt.sweep + 1) ** (-adapt.decay)
    for g in range(counts.shape[0]):
        step = math.exp(adapt.log_step[g])
        proposal = math.exp(math.log(new[g]) + step * gen.standard_normal())
        log_ratio = (
            dm_log_marginal(counts[g], proposal)
            - dm_log_marginal(counts[g], new[g])
            + prior.log_density(proposal)
            - prior.log_density(new[g])
            + math.log(proposal)
            - math.log(new[g])
        )
        adapt.proposed[g] += 1
        accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
        if gen.uniform() < accept_prob:
            new[g] = proposal
            adapt.accepted[g] += 1
        if adapt.adapting:
            adapt.log_step[g] += gain * (accept_prob - adapt.target)
    adapt.sweep += 1
    return new


def update_weights(counts, alpha, config, rng):
    """pi_g ~ Dirichlet(alpha_g/K + N_g1, ..., alpha_g/K + N_gK)."""
    gen = as_generator(rng)
    conc = alpha[:, None] / config.n_clusters + counts
    return _dirichlet_rows(conc, gen)


def update_capture_probs(captures, occupancy, config, rng):
    """p_kj ~ Beta(a_p + captures_kj, b_p + N_k - captures_kj).

    ``occupancy`` counts both observed and augmented members of each
    cluster; augmented incidents contribute zeros to every list, so
    they appear only in the failure count.
    """
    gen = as_generator(rng)
    a = config.a_p + captures
    b = config.b_p + (occupancy[:, None] - captures)
    return gen.beta(a, b)


def update_mark_params(occupancy, sum_x, sum_x2, mu, config, rng):
    """Conjugate block update of the cluster mark distributions.

    sigma2_k ~ InverseGamma(c0 + N_k/2, C0 + sum (x - mu_k)^2 / 2)
    using the current means, then mu_k | sigma2_k from its normal
    conditional.  Empty clusters reduce to fresh prior draws.
    """
    gen = as_generator(rng)
    ss = np.maximum(sum_x2 - 2.0 * mu * sum_x + occupancy * mu**2, 0.0)
    sigma2 = (config.C0 + 0.5 * ss) / gen.standard_gamma(config.c0 + 0.5 * occupancy)
    v = 1.0 / (1.0 / config.s0_sq + occupancy / sigma2)
    center = v * (config.m0 / config.s0_sq + sum_x / sigma2)
    new_mu = gen.normal(center, np.sqrt(v))
    return sigma2, new_mu


def functionals(observed_mark_sums, m_by_stratum, n0, x0):
    """Per-stratum reported functionals of one augmented state.

    Returns ``(N_g, Y_g, d_0g)``: incident totals, mark totals
    (observed plus imputed, on the original scale), and the mean
    imputed mark, NaN whenever the stratum has no missed incidents.
    These touch cluster labels nowhere, so any relabeling of clusters
    leaves them bit-identical.
    """
    n_strata = len(m_by_stratum)
    totals = np.asarray(m_by_stratum, dtype=np.int64) + np.asarray(n0, dtype=np.int64)
    y = np.empty(n_strata)
    d0 = np.empty(n_strata)
    for g in range(n_strata):
        marks = np.exp(x0[g])
        missed = float(marks.sum())
        y[g] = observed_mark_sums[g] + missed
        d0[g] = float(marks.mean()) if len(marks) else math.nan
    return totals, y, d0


@dataclass
class PosteriorDraws:
    """Retained posterior draws plus the context needed to read them.

    ``n0`` and ``y_tot`` have one row per retained draw and one column
    per stratum; ``d0`` is the mean imputed mark with NaN marking draws
    where a stratum had no missed incidents.  Parameter snapshots and
    imputed log marks are kept only on request.
    """

    stratum_labels: tuple
    m_by_stratum: np.ndarray
    observed_mark_sums: np.ndarray
    iterations_kept: np.ndarray
    n0: np.ndarray
    y_tot: np.ndarray
    d0: np.ndarray
    alpha_acceptance: np.ndarray
    n_clamped: int
    config: dict
    settings: dict
    pi: np.ndarray | None = None
    p: np.ndarray | None = None
    mu: np.ndarray | None = None
    sigma2: np.ndarray | None = None
    lam: np.ndarray | None = None
    alpha: np.ndarray | None = None
    imputed: list | None = None

    @property
    def n_retained(self):
        return self.n0.shape[0]

    @property
    def n_strata(self):
        return self.n0.shape[1]

    @property
    def incident_totals(self):
        """N_g = m_g + n_0g per draw."""
        return self.m_by_stratum[None, :] + self.n0

    @property
    def missing_mark_totals(self):
        return self.y_tot - self.observed_mark_sums[None, :]

    @property
    def log_missing_incidents(self):
        """ln of the all-strata missed-incident count, per draw."""
        with np.errstate(divide="ignore"):
            return np.log(self.n0.sum(axis=1).astype(float))

    @property
    def log_missing_marks(self):
        """ln of the all-strata missed-mark total, per draw."""
        with np.errstate(divide="ignore"):
            return np.log(self.missing_mark_totals.sum(axis=1))

    @property
    def has_params(self):
        return self.pi is not None


def run_chain(dataset, config=None, settings=None):
    """Run the Gibbs sampler and return the retained draws.

    Sweep order: observed assignments; stratum rates given the current
    incident totals; missed-incident augmentation (count, allocations,
    marks); concentrations against the marginal with weights integrated
    out; weights; capture probabilities; mark variances then means.

    Raises
    ------
    DataError
        If the dataset has no observed incidents.
    NumericalError
        If any invariant (weights summing to one, finite positive
        parameters, consistent allocations) fails during the run.
    """
    config = (config or ModelConfig()).resolved_for(dataset)
    settings = settings or MCMCSettings()
    if dataset.m == 0:
        raise DataError("cannot fit: dataset has no observed incidents")
    data = ChainData.from_dataset(dataset)
    gen = RandomStream(settings.seed).gen
    params, aug = init_state(dataset, config, gen)
    adapt = AlphaAdaptation.for_strata(data.n_strata, settings)

    n_strata, n_clusters, n_lists = data.n_strata, config.n_clusters, data.n_lists
    n_keep = settings.n_retained
    kept_iter = np.empty(n_keep, dtype=np.int64)
    n0_out = np.empty((n_keep, n_strata), dtype=np.int64)
    y_out = np.empty((n_keep, n_strata))
    d0_out = np.empty((n_keep, n_strata))
    if settings.keep_params:
        pi_out = np.empty((n_keep, n_strata, n_clusters))
        p_out = np.empty((n_keep, n_clusters, n_lists))
        mu_out = np.empty((n_keep, n_clusters))
        s2_out = np.empty((n_keep, n_clusters))
        lam_out = np.empty((n_keep, n_strata))
        alpha_out = np.empty((n_keep, n_strata))
    imputed_out = [] if settings.keep_imputed else None

    total_clamped = 0
    kept = 0
    for sweep in range(1, settings.iterations + 1):
        adapt.adapting = sweep <= settings.burn_in
        try:
            aug.z = update_assignments(data, params, gen)
            params.lam = update_rates(data.m_by_stratum, aug.n0, config, gen)
            missing = sample_missing(params, gen, mark_clamp=settings.mark_clamp)
            aug.n0 = missing.n0
            aug.by_cluster = missing.by_cluster
            aug.x0 = missing.x0
            aug.x0_cluster = missing.x0_cluster
            total_clamped += missing.n_clamped

            observed_counts = np.bincount(
                data.strata * n_clusters + aug.z, minlength=n_strata * n_clusters
            ).reshape(n_strata, n_clusters)
            counts = observed_counts + aug.by_cluster

            params.alpha = update_concentration(counts, params.alpha, config, adapt, gen)
            params.pi = update_weights(counts, params.alpha, config, gen)

            captures = np.zeros((n_clusters, n_lists))
            for j, idx in enumerate(data.capture_indices):
                captures[:, j] = np.bincount(aug.z[idx], minlength=n_clusters)
            occupancy = counts.sum(axis=0).astype(float)
            params.p = update_capture_probs(captures, occupancy, config, gen)

            sum_x = np.bincount(aug.z, weights=data.log_marks, minlength=n_clusters)
            sum_x2 = np.bincount(aug.z, weights=data.log_marks**2, minlength=n_clusters)
            for g in range(n_strata):
                if len(aug.x0[g]):
                    sum_x += np.bincount(aug.x0_cluster[g], weights=aug.x0[g], minlength=n_clusters)
                    sum_x2 += np.bincount(
                        aug.x0_cluster[g], weights=aug.x0[g] ** 2, minlength=n_clusters
                    )
            params.sigma2, params.mu = update_mark_params(
                occupancy, sum_x, sum_x2, params.mu, config, gen
            )
        except NumericalError as err:
            raise NumericalError(f"sweep {sweep}: {err}") from err

        _check_state(params, aug, sweep)

        if sweep > settings.burn_in and (sweep - settings.burn_in) % settings.thin == 0:
            totals, y, d0 = functionals(
                data.observed_mark_sums, data.m_by_stratum, aug.n0, aug.x0
            )
            if np.any(aug.n0 < 0) or np.any(y < data.observed_mark_sums - 1e-9):
                raise NumericalError(f"sweep {sweep}: functional below its observed floor")
            kept_iter[kept] = sweep
            n0_out[kept] = aug.n0
            y_out[kept] = y
            d0_out[kept] = d0
            if settings.keep_params:
                pi_out[kept] = params.pi
                p_out[kept] = params.p
                mu_out[kept] = params.mu
                s2_out[kept] = params.sigma2
                lam_out[kept] = params.lam
                alpha_out[kept] = params.alpha
            if imputed_out is not None:
                imputed_out.append([x.copy() for x in aug.x0])
            kept += 1

    draws = PosteriorDraws(
        stratum_labels=data.stratum_labels,
        m_by_stratum=data.m_by_stratum.copy(),
        observed_mark_sums=data.observed_mark_sums.copy(),
        iterations_kept=kept_iter,
        n0=n0_out,
        y_tot=y_out,
        d0=d0_out,
        alpha_acceptance=adapt.acceptance_rate,
        n_clamped=total_clamped,
        config=config.as_dict(),
        settings=settings.as_dict(),
        imputed=imputed_out,
    )
    if settings.keep_params:
        draws.pi, draws.p, draws.mu, draws.sigma2 = pi_out, p_out, mu_out, s2_out
        draws.lam, draws.alpha = lam_out, alpha_out
    return draws


def _check_state(params, aug, sweep):
    # cheap invariants evaluated every sweep; failures abort the run
    pi_err = np.abs(params.pi.sum(axis=1) - 1.0).max()
    if not (pi_err <= 1e-10):
        raise NumericalError(f"sweep {sweep}: weight rows deviate from 1 by {pi_err:.2e}")
    if not np.all(np.isfinite(params.p)) or np.any(params.p < 0) or np.any(params.p > 1):
        raise NumericalError(f"sweep {sweep}: capture probabilities left [0, 1]")
    if not np.all(np.isfinite(params.sigma2)) or np.any(params.sigma2 <= 0):
        raise NumericalError(f"sweep {sweep}: nonpositive mark variance")
    if not np.all(np.isfinite(params.mu)):
        raise NumericalError(f"sweep {sweep}: non-finite mark mean")
    if not np.all(np.isfinite(params.lam)) or np.any(params.lam < 0):
        raise NumericalError(f"sweep {sweep}: invalid stratum rate")
    if not np.all(np.isfinite(params.alpha)) or np.any(params.alpha <= 0):
        raise NumericalError(f"sweep {sweep}: invalid concentration")
    if np.any(aug.by_cluster.sum(axis=1) != aug.n0):
        raise NumericalError(f"sweep {sweep}: allocation counts disagree with missing totals")
