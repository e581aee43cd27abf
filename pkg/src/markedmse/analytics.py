"""Posterior functionals computed from retained draws.

Totals with credible intervals, the expected mark of a missed incident,
model-implied reporting probabilities (marginal and as a function of
the mark), the correlation structure of the completed data, and a
mortality-rate Monte Carlo that combines the fatality posterior with
external arrival counts and an assumed interception rate.

All empirical quantiles in this module use numpy's default linear
interpolation between order statistics.  Pooled quantities are always
computed draw-wise (sum per draw, then quantile), never by adding
per-stratum quantiles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .sampler import missing_probability, nondetection_probs

__all__ = [
    "SummaryRow",
    "MissingMarkRow",
    "ReportingCurve",
    "StratumReportingRow",
    "CorrelationResult",
    "RhoSpec",
    "MortalityRow",
    "MortalityResult",
    "summarize_totals",
    "expected_missing_mark",
    "reporting_prob_draws",
    "reporting_prob_by_stratum",
    "reporting_prob_given_mark",
    "augmented_correlation",
    "read_arrivals_csv",
    "mortality_rate_mc",
    "write_totals_csv",
    "write_missing_mark_csv",
    "write_reporting_csv",
    "write_stratum_reporting_csv",
    "write_correlation_csv",
    "write_mortality_csv",
]

_QUANTILES = (0.025, 0.5, 0.975)

POOLED_LABEL = "all"


def _quantile_triplet(values):
    lo, med, hi = np.quantile(values, _QUANTILES)
    return float(med), float(lo), float(hi)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _write_csv(dest, fields, rows):
    with open(dest, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(getattr(row, f)) for f in fields])


@dataclass(frozen=True)
class SummaryRow:
    """Posterior summary of one total in one stratum.

    Parameters
    ----------
    stratum : str
        Stratum label, or "all" for the draw-wise pooled total.
    functional : str
        "incidents" (observed plus missed count) or "mark_total"
        (observed plus missed mark sum).
    median, lo, hi : float
        Posterior median and central 95% interval bounds.
    observed : float
        The observed lower bound (m_g, or the observed mark sum).
    """

    stratum: str
    functional: str
    median: float
    lo: float
    hi: float
    observed: float

    def __post_init__(self):
        if not (self.lo <= self.median <= self.hi):
            raise DataError("summary quantiles out of order")


def summarize_totals(draws, dataset=None):
    """Summarize incident and mark totals per stratum and pooled.

    Parameters
    ----------
    draws : PosteriorDraws
    dataset : Dataset, optional
        If given, cross-checked against the draw metadata (stratum
        labels, observed counts and mark sums) to catch mismatched
        inputs.

    Returns
    -------
    tuple of SummaryRow
        Two rows per stratum; with more than one stratum, two more
        rows labeled "all" for the pooled totals.
    """
    if draws.n_retained < 2:
        raise DataError("need at least two retained draws to summarize")
    if dataset is not None:
        _check_dataset_matches(draws, dataset)
    m = np.asarray(draws.m_by_stratum)
    obs_marks = np.asarray(draws.observed_mark_sums)
    incidents = draws.incident_totals.astype(float)
    marks = draws.y_tot
    rows = []

    def add(stratum, functional, values, observed):
        med, lo, hi = _quantile_triplet(values)
        rows.append(
            SummaryRow(
                stratum=stratum,
                functional=functional,
                median=med,
                lo=lo,
                hi=hi,
                observed=float(observed),
            )
        )

    for g, label in enumerate(draws.stratum_labels):
        add(label, "incidents", incidents[:, g], m[g])
        add(label, "mark_total", marks[:, g], obs_marks[g])
    if draws.n_strata > 1:
        add(POOLED_LABEL, "incidents", incidents.sum(axis=1), m.sum())
        add(POOLED_LABEL, "mark_total", marks.sum(axis=1), obs_marks.sum())
    return tuple(rows)


def _check_dataset_matches(draws, dataset):
    if tuple(dataset.stratum_labels) != tuple(draws.stratum_labels):
        raise DataError("dataset stratum labels do not match the draws")
    if not np.array_equal(dataset.m_by_stratum, draws.m_by_stratum):
        raise DataError("dataset stratum sizes do not match the draws")
    if not np.allclose(
        dataset.mark_sums_by_stratum, draws.observed_mark_sums, rtol=0, atol=1e-9
    ):
        raise DataError("dataset mark sums do not match the draws")


def write_totals_csv(rows, dest):
    _write_csv(dest, ["stratum", "functional", "median", "lo", "hi", "observed"], rows)


@dataclass(frozen=True)
class MissingMarkRow:
    """Posterior summary of the mean mark among missed incidents.

    Draws in which the stratum has no missed incidents carry no value
    and are excluded; ``excluded_fraction`` reports how many.
    ``observed_mean`` is the stratum's observed sample mean mark, the
    natural reference line.
    """

    stratum: str
    status: str
    median: float
    lo: float
    hi: float
    excluded_fraction: float
    observed_mean: float


def expected_missing_mark(draws):
    """Summarize d0 (mean mark of a missed incident) per stratum.

    Returns
    -------
    tuple of MissingMarkRow
        Status "unavailable" where every retained draw had zero missed
        incidents.
    """
    rows = []
    m = np.asarray(draws.m_by_stratum, dtype=float)
    obs_sum = np.asarray(draws.observed_mark_sums, dtype=float)
    for g, label in enumerate(draws.stratum_labels):
        values = draws.d0[:, g]
        defined = values[~np.isnan(values)]
        excluded = 1.0 - defined.size / values.size
        observed_mean = float(obs_sum[g] / m[g]) if m[g] > 0 else math.nan
        if defined.size == 0:
            rows.append(
                MissingMarkRow(
                    stratum=label,
                    status="unavailable",
                    median=math.nan,
                    lo=math.nan,
                    hi=math.nan,
                    excluded_fraction=excluded,
                    observed_mean=observed_mean,
                )
            )
            continue
        med, lo, hi = _quantile_triplet(defined)
        rows.append(
            MissingMarkRow(
                stratum=label,
                status="ok",
                median=med,
                lo=lo,
                hi=hi,
                excluded_fraction=excluded,
                observed_mean=observed_mean,
            )
        )
    return tuple(rows)


def write_missing_mark_csv(rows, dest):
    _write_csv(
        dest,
        ["stratum", "status", "median", "lo", "hi", "excluded_fraction", "observed_mean"],
        rows,
    )


def _require_params(draws):
    if not draws.has_params:
        raise ConfigurationError(
            "these draws carry no parameter snapshots; rerun the chain "
            "with keep_params enabled"
        )


def reporting_prob_draws(draws):
    """Per-draw, per-stratum probability an incident is ever reported.

    P_g = 1 - sum_k pi_gk q_k with q_k the all-list nondetection
    probability, evaluated at each retained parameter draw.

    Returns
    -------
    ndarray, shape (n_retained, n_strata)
    """
    _require_params(draws)
    out = np.empty((draws.n_retained, draws.n_strata))
    for t in range(draws.n_retained):
        q = nondetection_probs(draws.p[t])
        out[t] = 1.0 - missing_probability(draws.pi[t], q)
    return out


@dataclass(frozen=True)
class StratumReportingRow:
    """Quantile summary of the marginal reporting probability."""

    stratum: str
    median: float
    lo: float
    hi: float


def reporting_prob_by_stratum(draws):
    """Summarize the marginal reporting probability per stratum.

    Returns
    -------
    tuple of StratumReportingRow
    """
    probs = reporting_prob_draws(draws)
    rows = []
    for g, label in enumerate(draws.stratum_labels):
        med, lo, hi = _quantile_triplet(probs[:, g])
        rows.append(StratumReportingRow(stratum=label, median=med, lo=lo, hi=hi))
    return tuple(rows)


def write_stratum_reporting_csv(rows, dest):
    _write_csv(dest, ["stratum", "median", "lo", "hi"], rows)


_WEIGHTINGS = ("rate", "equal", "observed")


@dataclass(frozen=True)
class ReportingCurve:
    """Reporting probability as a function of the mark.

    Arrays are quantile summaries over draws: per-stratum arrays have
    shape (n_strata, len(y_values)); aggregate arrays have shape
    (len(y_values),), combining strata with the chosen weighting.
    """

    y_values: tuple
    stratum_labels: tuple
    weighting: str
    median: object
    lo: object
    hi: object
    aggregate_median: object
    aggregate_lo: object
    aggregate_hi: object


def reporting_prob_given_mark(draws, y_values, weighting="rate"):
    """Evaluate P(reported | mark = y) along a grid of marks.

    Within stratum g at one parameter draw, an incident with mark y
    belongs to cluster k with weight proportional to
    pi_gk * Normal(log y | mu_k, sigma2_k), and is reported with
    probability 1 - sum_k w_gk(y) q_k.  The cross-stratum curve
    averages the per-stratum curves with draw-specific weights:
    expected incident volume lambda_g ("rate", default), equal
    weights, or observed counts ("observed").

    Parameters
    ----------
    draws : PosteriorDraws
        Must carry parameter snapshots.
    y_values : array-like of float
        Positive mark values.
    weighting : {"rate", "equal", "observed"}

    Returns
    -------
    ReportingCurve
    """
    _require_params(draws)
    if weighting not in _WEIGHTINGS:
        raise ConfigurationError(
            f"weighting must be one of {', '.join(_WEIGHTINGS)}, got {weighting!r}"
        )
    y = np.asarray(y_values, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ConfigurationError("y_values must be a nonempty 1-d array")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise ConfigurationError("marks must be positive and finite")

    n_draws, n_strata = draws.n_retained, draws.n_strata
    pi = draws.pi  # (T, G, K)
    mu = draws.mu  # (T, K)
    sigma2 = draws.sigma2
    q = 1.0 - draws.p  # (T, K, R)
    q = np.prod(q, axis=2)  # (T, K)
    if weighting == "rate":
        agg_w = draws.lam
    elif weighting == "observed":
        agg_w = np.broadcast_to(
            np.asarray(draws.m_by_stratum, dtype=float), (n_draws, n_strata)
        )
    else:
        agg_w = np.ones((n_draws, n_strata))
    agg_w = agg_w / agg_w.sum(axis=1, keepdims=True)

    log_pi = np.log(pi, where=pi > 0, out=np.full_like(pi, -np.inf))
    per_stratum = np.empty((n_draws, n_strata, y.size))
    for j, mark in enumerate(y):
        log_phi = -0.5 * (
            math.log(2 * math.pi)
            + np.log(sigma2)
            + (math.log(mark) - mu) ** 2 / sigma2
        )  # (T, K)
        logw = log_pi + log_phi[:, None, :]  # (T, G, K)
        logw -= logw.max(axis=2, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=2, keepdims=True)
        per_stratum[:, :, j] = 1.0 - np.einsum("tgk,tk->tg", w, q)
    aggregate = np.einsum("tg,tgy->ty", agg_w, per_stratum)

    lo, med, hi = np.quantile(per_stratum, _QUANTILES, axis=0)
    agg_lo, agg_med, agg_hi = np.quantile(aggregate, _QUANTILES, axis=0)
    return ReportingCurve(
        y_values=tuple(float(v) for v in y),
        stratum_labels=draws.stratum_labels,
        weighting=weighting,
        median=med,
        lo=lo,
        hi=hi,
        aggregate_median=agg_med,
        aggregate_lo=agg_lo,
        aggregate_hi=agg_hi,
    )


def write_reporting_csv(curve, dest):
    """Tidy rows: one per (stratum or aggregate, mark value)."""
    fields = ["stratum", "y", "median", "lo", "hi"]
    with open(dest, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fields)
        for g, label in enumerate(curve.stratum_labels):
            for j, y in enumerate(curve.y_values):
                writer.writerow(
                    [
                        label,
                        _fmt(float(y)),
                        _fmt(float(curve.median[g, j])),
                        _fmt(float(curve.lo[g, j])),
                        _fmt(float(curve.hi[g, j])),
                    ]
                )
        for j, y in enumerate(curve.y_values):
            writer.writerow(
                [
                    "aggregate",
                    _fmt(float(y)),
                    _fmt(float(curve.aggregate_median[j])),
                    _fmt(float(curve.aggregate_lo[j])),
                    _fmt(float(curve.aggregate_hi[j])),
                ]
            )


@dataclass(frozen=True)
class CorrelationResult:
    """Average completed-data correlation matrix.

    ``matrix`` is the (R+1) x (R+1) Pearson correlation of the list
    indicators and the log mark over the completed incident set
    (observed plus imputed), averaged over draws and strata.  Entries
    that were undefined in some (draw, stratum) evaluations (constant
    column) are averaged over the remaining ones; ``excluded`` counts
    the skipped evaluations per entry out of ``n_evaluations``.
    """

    labels: tuple
    matrix: object
    excluded: object
    n_evaluations: int


def _pearson_matrix(columns):
    n = columns.shape[0]
    centered = columns - columns.mean(axis=0)
    cov = centered.T @ centered
    var = np.diag(cov).copy()
    denom = np.sqrt(np.outer(var, var))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), np.nan)
    np.fill_diagonal(corr, 1.0)
    return corr


def augmented_correlation(draws, dataset):
    """Correlation of list indicators and log marks in completed data.

    For each retained draw and stratum, stacks the observed incidents
    (their capture patterns and log marks) with that draw's imputed
    incidents (all-zero patterns, imputed log marks), computes the
    Pearson correlation matrix of (s_1, ..., s_R, log mark), and
    averages entrywise across draws and strata.

    Parameters
    ----------
    draws : PosteriorDraws
        Must carry imputed-mark snapshots (keep_imputed).
    dataset : Dataset
        The dataset the chain was run on.

    Returns
    -------
    CorrelationResult
    """
    if draws.imputed is None:
        raise ConfigurationError(
            "these draws carry no imputed-incident snapshots; rerun the "
            "chain with keep_imputed enabled"
        )
    _check_dataset_matches(draws, dataset)
    n_lists = dataset.n_lists
    size = n_lists + 1
    labels = tuple(f"L{j + 1}" for j in range(n_lists)) + ("log_mark",)

    obs_by_stratum = []
    for g in range(draws.n_strata):
        mask = dataset.strata == g
        block = np.column_stack(
            [dataset.patterns[mask].astype(float), dataset.log_marks[mask]]
        ) if mask.any() else np.empty((0, size))
        obs_by_stratum.append(block)

    total = np.zeros((size, size))
    defined = np.zeros((size, size), dtype=int)
    n_evaluations = 0
    for t in range(draws.n_retained):
        for g in range(draws.n_strata):
            x0 = np.asarray(draws.imputed[t][g], dtype=float)
            n_rows = obs_by_stratum[g].shape[0] + x0.size
            n_evaluations += 1
            if n_rows < 2:
                continue
            imputed_block = np.zeros((x0.size, size))
            imputed_block[:, -1] = x0
            completed = np.vstack([obs_by_stratum[g], imputed_block])
            corr = _pearson_matrix(completed)
            mask = np.isfinite(corr)
            total[mask] += corr[mask]
            defined += mask
    with np.errstate(invalid="ignore"):
        matrix = np.where(defined > 0, total / np.where(defined > 0, defined, 1), np.nan)
    np.fill_diagonal(matrix, 1.0)
    return CorrelationResult(
        labels=labels,
        matrix=matrix,
        excluded=n_evaluations - defined,
        n_evaluations=n_evaluations,
    )


def write_correlation_csv(result, dest):
    """Tidy rows: one per matrix entry."""
    fields = ["row", "col", "correlation", "excluded", "n_evaluations"]
    with open(dest, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fields)
        for i, row_label in enumerate(result.labels):
            for j, col_label in enumerate(result.labels):
                writer.writerow(
                    [
                        row_label,
                        col_label,
                        _fmt(float(result.matrix[i, j])),
                        str(int(result.excluded[i, j])),
                        str(result.n_evaluations),
                    ]
                )


# ------------------------------------------------------------- mortality


@dataclass(frozen=True)
class RhoSpec:
    """Assumption on the interception rate.

    Parameters
    ----------
    mode : {"uniform", "beta", "grid"}
    a, b : float
        Beta shape parameters (beta mode only).
    values : tuple of float
        Fixed interception rates in [0, 1] (grid mode only).
    """

    mode: str
    a: float = math.nan
    b: float = math.nan
    values: tuple = ()

    def __post_init__(self):
        if self.mode not in ("uniform", "beta", "grid"):
            raise ConfigurationError(f"unknown rho mode {self.mode!r}")
        if self.mode == "beta" and not (self.a > 0 and self.b > 0):
            raise ConfigurationError("Beta parameters must be positive")
        if self.mode == "grid":
            if not self.values:
                raise ConfigurationError("grid mode needs at least one value")
            if any(not 0 <= v <= 1 for v in self.values):
                raise ConfigurationError("grid values must lie in [0, 1]")

    @classmethod
    def uniform(cls):
        return cls(mode="uniform")

    @classmethod
    def beta(cls, a=1.3, b=2.8):
        return cls(mode="beta", a=a, b=b)

    @classmethod
    def grid(cls, values):
        return cls(mode="grid", values=tuple(float(v) for v in values))

    def label(self, value=None):
        if self.mode == "uniform":
            return "uniform"
        if self.mode == "beta":
            return f"beta({self.a:g},{self.b:g})"
        return f"rho={value:g}"


def read_arrivals_csv(source):
    """Read a two-column (stratum, arrivals) CSV.

    Parameters
    ----------
    source : path-like

    Returns
    -------
    dict of str to float
    """
    path = Path(source)
    if not path.exists():
        raise DataError(f"arrivals file not found: {path}")
    arrivals = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise DataError("arrivals file needs a two-column header")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"arrivals line {line_no}: expected two columns")
            label = row[0].strip()
            if label in arrivals:
                raise DataError(f"arrivals line {line_no}: duplicate stratum {label!r}")
            try:
                value = float(row[1])
            except ValueError as exc:
                raise DataError(
                    f"arrivals line {line_no}: arrivals must be numeric"
                ) from exc
            if not math.isfinite(value) or value < 0:
                raise DataError(f"arrivals line {line_no}: arrivals must be >= 0")
            arrivals[label] = value
    if not arrivals:
        raise DataError("arrivals file has no data rows")
    return arrivals


@dataclass(frozen=True)
class MortalityRow:
    """Summary of the mortality-rate distribution for one scope."""

    scope: str
    rho: str
    status: str
    n_samples: int
    mean: float
    median: float
    lo: float
    hi: float


@dataclass(frozen=True)
class MortalityResult:
    rows: tuple
    n_samples: int

    def scope(self, scope, rho=None):
        out = [
            r for r in self.rows
            if r.scope == scope and (rho is None or r.rho == rho)
        ]
        if not out:
            raise KeyError((scope, rho))
        return out[0] if len(out) == 1 else out


def mortality_rate_mc(draws, arrivals, rho, samples=250_000, rng=0):
    """Monte Carlo for the mortality rate (1 - rho) * F / (A + F).

    F is the posterior fatality total per stratum (resampled with
    replacement from the retained draws, the same draw index across
    strata so the pooled rate respects joint uncertainty); rho is drawn
    independently of F and shared across strata within a sample.  Grid
    mode evaluates the rate at each fixed rho value instead.

    Parameters
    ----------
    draws : PosteriorDraws
    arrivals : mapping of str to float
        Arrivals per stratum; labels must match the draw strata
        exactly (same set, any order).
    rho : RhoSpec
    samples : int
    rng : RandomStream, numpy Generator, or int seed

    Returns
    -------
    MortalityResult
        One row per (stratum + pooled) per rho scenario.
    """
    from .distributions import as_generator

    if samples < 1:
        raise ConfigurationError("samples must be positive")
    if not isinstance(rho, RhoSpec):
        raise ConfigurationError("rho must be a RhoSpec")
    labels = list(draws.stratum_labels)
    missing = [l for l in labels if l not in arrivals]
    extra = [l for l in arrivals if l not in labels]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing strata: {', '.join(missing)}")
        if extra:
            parts.append(f"unknown strata: {', '.join(extra)}")
        raise ConfigurationError("arrivals do not match the draws (" + "; ".join(parts) + ")")

    gen = as_generator(rng)
    fatalities = draws.y_tot  # (T, G)
    idx = gen.integers(0, fatalities.shape[0], size=samples)
    f_samples = fatalities[idx]  # (samples, G)
    a = np.array([arrivals[l] for l in labels], dtype=float)

    scopes = [(labels[g], f_samples[:, g], a[g]) for g in range(len(labels))]
    if len(labels) > 1:
        scopes.append((POOLED_LABEL, f_samples.sum(axis=1), a.sum()))

    if rho.mode == "grid":
        scenarios = [(rho.label(v), np.full(samples, v)) for v in rho.values]
    elif rho.mode == "uniform":
        scenarios = [(rho.label(), gen.random(samples))]
    else:
        scenarios = [(rho.label(), gen.beta(rho.a, rho.b, size=samples))]

    rows = []
    for scope_label, f, a_g in scopes:
        # Samples with no arrivals and no fatalities have no rate;
        # they are excluded, and a scope where that leaves nothing is
        # reported as undefined rather than zero.
        valid = (a_g + f) > 0
        n_valid = int(valid.sum())
        for rho_label, rho_samples in scenarios:
            if n_valid == 0:
                rows.append(
                    MortalityRow(
                        scope=scope_label,
                        rho=rho_label,
                        status="undefined",
                        n_samples=0,
                        mean=math.nan,
                        median=math.nan,
                        lo=math.nan,
                        hi=math.nan,
                    )
                )
                continue
            mr = (1.0 - rho_samples[valid]) * f[valid] / (a_g + f[valid])
            med, lo, hi = _quantile_triplet(mr)
            rows.append(
                MortalityRow(
                    scope=scope_label,
                    rho=rho_label,
                    status="ok",
                    n_samples=n_valid,
                    mean=float(mr.mean()),
                    median=med,
                    lo=lo,
                    hi=hi,
                )
            )
    return MortalityResult(rows=tuple(rows), n_samples=samples)


def write_mortality_csv(result, dest):
    _write_csv(
        dest,
        ["scope", "rho", "status", "n_samples", "mean", "median", "lo", "hi"],
        result.rows,
    )
