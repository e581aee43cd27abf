"""Classical plug-in estimators of the missing cell.

All of these share the same decomposition: estimate the number of
never-observed incidents n0 from the capture histories, estimate the
mean mark d0 among missed incidents from a mark model, and report the
missing total as n0 * d0.  The estimators are, in increasing order of
flexibility:

* ``chao_estimate``: the singleton/doubleton lower bound f1^2 / (2 f2)
  with the observed sample mean as the mark estimate.
* ``fit_mark_regression`` / ``fit_loglinear_counts``: a fixed-term OLS
  regression of log marks on list indicators, and a Poisson model for
  the 2^R - 1 observable capture-pattern cell counts.  Prediction at
  the all-zero pattern gives d0 and n0.
* ``select_by_ic``: AIC or BIC selection over every hierarchical
  interaction structure up to three-way terms (113 models for four
  lists), run separately for the mark and the count family.

Everything here is a pure function of the dataset; there is no
uncertainty quantification for these competitors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .data import Dataset
from .errors import ConfigurationError, DataError, NumericalError

__all__ = [
    "CaptureCounts",
    "BaselineEstimate",
    "ModelTerms",
    "MarkRegressionFit",
    "LogLinearFit",
    "SelectionResult",
    "capture_counts",
    "chao_estimate",
    "cell_patterns",
    "design_matrix",
    "enumerate_hierarchical_models",
    "fit_mark_regression",
    "fit_loglinear_counts",
    "fit_loglinear_cells",
    "select_by_ic",
]

_IRLS_MAX_ITER = 100
_IRLS_TOL = 1e-10


@dataclass(frozen=True)
class CaptureCounts:
    """Per-incident list counts and their singleton/doubleton totals.

    Parameters
    ----------
    list_counts : tuple of int
        For each observed incident, the number of lists it appears on.
    """

    list_counts: tuple

    def __post_init__(self):
        if any(c < 1 for c in self.list_counts):
            raise DataError("every observed incident must appear on at least one list")

    @property
    def f1(self):
        return sum(1 for c in self.list_counts if c == 1)

    @property
    def f2(self):
        return sum(1 for c in self.list_counts if c == 2)

    @property
    def m(self):
        return len(self.list_counts)


def capture_counts(dataset):
    """Count how many lists each observed incident appears on.

    Parameters
    ----------
    dataset : Dataset

    Returns
    -------
    CaptureCounts
    """
    c = dataset.patterns.sum(axis=1)
    return CaptureCounts(list_counts=tuple(int(v) for v in c))


@dataclass(frozen=True)
class BaselineEstimate:
    """Point estimate of the missing cell from one competitor method.

    Parameters
    ----------
    n0 : float
        Estimated number of never-observed incidents (NaN if undefined).
    d0 : float
        Estimated mean mark among never-observed incidents.
    total : float
        Estimated missing mark total, ``n0 * d0`` (NaN if undefined).
    status : str
        "ok", "undefined" (estimator formula breaks down on this data),
        or "unavailable" (no candidate model could be fit).
    note : str
        Human-readable reason when status is not "ok".
    """

    n0: float
    d0: float
    total: float
    status: str = "ok"
    note: str = ""


def chao_estimate(dataset):
    """Singleton/doubleton estimate of the missing cell.

    n0 is estimated as f1^2 / (2 f2) where f1 and f2 count incidents
    observed on exactly one and exactly two lists; d0 is the observed
    sample mean mark.

    Parameters
    ----------
    dataset : Dataset

    Returns
    -------
    BaselineEstimate
        ``status == "undefined"`` when f2 is zero; the bias-corrected
        variant is deliberately not substituted.
    """
    if dataset.m == 0:
        raise DataError("estimate needs at least one observed incident")
    counts = capture_counts(dataset)
    d0 = float(dataset.marks.mean())
    if counts.f2 == 0:
        return BaselineEstimate(
            math.nan, d0, math.nan,
            status="undefined",
            note="no incidents observed on exactly two lists (f2 = 0)",
        )
    n0 = counts.f1 ** 2 / (2.0 * counts.f2)
    return BaselineEstimate(n0, d0, n0 * d0)


@dataclass(frozen=True)
class ModelTerms:
    """Interaction structure of one hierarchical model.

    All main effects are always included and therefore implicit; the
    structure is determined by which pairwise and three-way interaction
    terms enter.  Hierarchy is enforced: a three-way term requires all
    three of its pairwise sub-terms.

    Parameters
    ----------
    pairs : tuple of (int, int)
        Included pairwise interactions, 0-based list indices, each pair
        ascending, pairs sorted.
    triples : tuple of (int, int, int)
        Included three-way interactions, same conventions.
    """

    pairs: tuple = ()
    triples: tuple = ()

    def __post_init__(self):
        pairs = tuple(tuple(p) for p in self.pairs)
        triples = tuple(tuple(t) for t in self.triples)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "triples", triples)
        for p in pairs:
            if len(p) != 2 or not 0 <= p[0] < p[1]:
                raise ConfigurationError(f"malformed pair term {p}")
        for t in triples:
            if len(t) != 3 or not 0 <= t[0] < t[1] < t[2]:
                raise ConfigurationError(f"malformed triple term {t}")
        if sorted(pairs) != list(pairs) or len(set(pairs)) != len(pairs):
            raise ConfigurationError("pair terms must be sorted and distinct")
        if sorted(triples) != list(triples) or len(set(triples)) != len(triples):
            raise ConfigurationError("triple terms must be sorted and distinct")
        have = set(pairs)
        for t in triples:
            needed = list(itertools.combinations(t, 2))
            missing = [p for p in needed if p not in have]
            if missing:
                raise ConfigurationError(
                    f"hierarchy violation: triple {_term_label(t)} requires "
                    f"pair {_term_label(missing[0])}"
                )

    @classmethod
    def main_effects(cls):
        return cls()

    @classmethod
    def all_pairwise(cls, n_lists):
        return cls(pairs=tuple(itertools.combinations(range(n_lists), 2)))

    @property
    def max_index(self):
        indices = [i for term in self.pairs + self.triples for i in term]
        return max(indices) if indices else -1

    def n_params(self, n_lists):
        return 1 + n_lists + len(self.pairs) + len(self.triples)

    def labels(self, n_lists):
        """Column labels: intercept, mains, then interaction terms."""
        out = ["intercept"] + [f"L{j + 1}" for j in range(n_lists)]
        out += [_term_label(term) for term in self.pairs + self.triples]
        return tuple(out)

    def order_key(self):
        """Sort key giving the canonical (lexicographic) term order."""
        return (self.pairs, self.triples)


def _term_label(term):
    return ":".join(f"L{i + 1}" for i in term)


def _resolve_terms(terms, n_lists):
    if terms is None or terms == "main":
        return ModelTerms.main_effects()
    if terms == "pairwise":
        return ModelTerms.all_pairwise(n_lists)
    if not isinstance(terms, ModelTerms):
        raise ConfigurationError(
            f"terms must be 'main', 'pairwise', or ModelTerms, got {terms!r}"
        )
    if terms.max_index >= n_lists:
        raise ConfigurationError(
            f"term index {terms.max_index} out of range for {n_lists} lists"
        )
    return terms


def design_matrix(patterns, terms, n_lists):
    """Expand capture patterns into a regression design.

    Parameters
    ----------
    patterns : ndarray, shape (n, n_lists)
        Binary capture indicators.
    terms : ModelTerms
    n_lists : int

    Returns
    -------
    ndarray, shape (n, terms.n_params(n_lists))
        Columns: intercept, the n_lists main effects, then one product
        column per interaction term.
    """
    patterns = np.asarray(patterns, dtype=float)
    cols = [np.ones(patterns.shape[0])]
    cols.extend(patterns[:, j] for j in range(n_lists))
    for term in terms.pairs + terms.triples:
        cols.append(np.prod(patterns[:, list(term)], axis=1))
    return np.column_stack(cols)


def enumerate_hierarchical_models(n_lists=4):
    """Enumerate every hierarchical interaction structure.

    Models always contain all main effects, any subset of the pairwise
    interactions, and any subset of the three-way interactions whose
    pairwise sub-terms are all present.  For four lists this gives 113
    models.  Order is deterministic: ascending in the pair subset
    (bitmask over the sorted pair list), then in the triple subset, so
    the first model is main-effects-only.

    Parameters
    ----------
    n_lists : int

    Returns
    -------
    list of ModelTerms
    """
    if n_lists < 2:
        raise ConfigurationError("model enumeration needs at least two lists")
    pairs = list(itertools.combinations(range(n_lists), 2))
    triples = list(itertools.combinations(range(n_lists), 3))
    models = []
    for pair_mask in range(2 ** len(pairs)):
        chosen_pairs = tuple(p for i, p in enumerate(pairs) if pair_mask >> i & 1)
        have = set(chosen_pairs)
        supported = [
            t for t in triples
            if all(p in have for p in itertools.combinations(t, 2))
        ]
        for tri_mask in range(2 ** len(supported)):
            chosen_triples = tuple(
                t for i, t in enumerate(supported) if tri_mask >> i & 1
            )
            models.append(ModelTerms(pairs=chosen_pairs, triples=chosen_triples))
    return models


def _check_rank(x, labels):
    """Raise DataError naming the first non-estimable column."""
    r = scipy.linalg.qr(x, mode="r", pivoting=True)
    r_matrix, pivot = r[0], r[1]
    diag = np.abs(np.diag(r_matrix))
    n, p = x.shape
    tol = (diag[0] if diag.size else 0.0) * max(n, p) * np.finfo(float).eps
    rank = int((diag > tol).sum()) if diag.size else 0
    if rank < p:
        offender = labels[pivot[rank]] if rank < len(pivot) else labels[-1]
        raise DataError(
            f"term {offender} is not estimable from the data (rank-deficient design)"
        )


def _gaussian_ic(rss, m, n_params):
    """AIC/BIC from the profile log-likelihood with the ML variance."""
    sigma2_ml = rss / m
    if sigma2_ml <= 0:
        # Interpolating fit; profile likelihood is unbounded.
        raise NumericalError("zero residual variance, information criteria undefined")
    neg2ll = m * math.log(2 * math.pi * sigma2_ml) + m
    k = n_params + 1  # the variance counts as a parameter
    return sigma2_ml, neg2ll + 2 * k, neg2ll + math.log(m) * k


@dataclass(frozen=True)
class MarkRegressionFit:
    """OLS fit of log marks on list indicators.

    Parameters
    ----------
    terms : ModelTerms
    labels : tuple of str
        Design column labels aligned with ``coef``.
    coef : tuple of float
    sigma2 : float
        Unbiased residual variance (denominator m - n_params); used in
        the log-normal back-transform.
    sigma2_ml : float
        Maximum-likelihood variance (denominator m); used in the
        information criteria.
    n_obs : int
    aic : float
    bic : float
    d0 : float
        Predicted mean mark at the all-zero pattern,
        ``exp(coef[0] + sigma2 / 2)``.
    """

    terms: ModelTerms
    labels: tuple
    coef: tuple
    sigma2: float
    sigma2_ml: float
    n_obs: int
    aic: float
    bic: float
    d0: float

    @property
    def n_params(self):
        return len(self.coef)


def fit_mark_regression(dataset, terms="main"):
    """Regress log marks on list indicators by ordinary least squares.

    At the all-zero pattern every indicator and product vanishes, so
    the predicted log mark is the intercept and the implied mean mark
    is the log-normal back-transform exp(b0 + sigma2 / 2) with the
    unbiased residual variance.

    Parameters
    ----------
    dataset : Dataset
    terms : ModelTerms or {"main", "pairwise"}

    Returns
    -------
    MarkRegressionFit

    Raises
    ------
    DataError
        If there are not more observations than terms, or the design is
        rank deficient (the offending term is named).
    """
    terms = _resolve_terms(terms, dataset.n_lists)
    labels = terms.labels(dataset.n_lists)
    p = len(labels)
    m = dataset.m
    if m <= p:
        raise DataError(f"need more than {p} observations to fit {p} terms, have {m}")
    x = design_matrix(dataset.patterns, terms, dataset.n_lists)
    _check_rank(x, labels)
    y = dataset.log_marks
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    rss = float(resid @ resid)
    sigma2 = rss / (m - p)
    sigma2_ml, aic, bic = _gaussian_ic(rss, m, p)
    d0 = math.exp(coef[0] + 0.5 * sigma2)
    return MarkRegressionFit(
        terms=terms,
        labels=labels,
        coef=tuple(float(c) for c in coef),
        sigma2=sigma2,
        sigma2_ml=sigma2_ml,
        n_obs=m,
        aic=aic,
        bic=bic,
        d0=d0,
    )


def cell_patterns(n_lists):
    """All observable capture patterns, in canonical cell order.

    The order is binary ascending with the last list as the least
    significant bit, starting from (0, ..., 0, 1); the all-zero pattern
    is excluded because it is unobservable.

    Parameters
    ----------
    n_lists : int

    Returns
    -------
    tuple of tuple of int
    """
    cells = itertools.product((0, 1), repeat=n_lists)
    return tuple(c for c in cells if any(c))


@dataclass(frozen=True)
class LogLinearFit:
    """Poisson fit to the observable capture-pattern cell counts.

    Parameters
    ----------
    terms : ModelTerms
    labels : tuple of str
    coef : tuple of float
    counts : tuple of float
        Cell counts in ``cell_patterns`` order (zero cells retained).
    fitted : tuple of float
        Fitted cell means, same order; all positive.
    deviance : float
    n_iterations : int
    aic : float
    bic : float
        BIC uses the number of cells (2^R - 1) as the sample size.
    n0 : float
        Predicted count of the unobservable all-zero cell,
        ``exp(coef[0])``.
    """

    terms: ModelTerms
    labels: tuple
    coef: tuple
    counts: tuple
    fitted: tuple
    deviance: float
    n_iterations: int
    aic: float
    bic: float
    n0: float

    @property
    def n_params(self):
        return len(self.coef)

    @property
    def n_cells(self):
        return len(self.counts)


def _poisson_deviance(y, mu):
    # Overshooting steps can push mu to inf; the NaN result is caught
    # by the step-halving finite check.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
        return float(2.0 * np.sum(term - (y - mu)))


def fit_loglinear_cells(counts, n_lists, terms="main"):
    """Fit a Poisson model to per-cell counts by Fisher scoring.

    Accepts arbitrary nonnegative counts (not necessarily integers), in
    ``cell_patterns(n_lists)`` order.  Starts from all-zero
    coefficients, halves the step when the deviance would increase, and
    stops when the relative deviance change drops below 1e-10.

    Parameters
    ----------
    counts : array-like, shape (2^n_lists - 1,)
    n_lists : int
    terms : ModelTerms or {"main", "pairwise"}

    Returns
    -------
    LogLinearFit

    Raises
    ------
    DataError
        Rank-deficient design (more parameters than estimable).
    NumericalError
        Fisher scoring divergence or failure to converge.
    """
    terms = _resolve_terms(terms, n_lists)
    patterns = np.asarray(cell_patterns(n_lists), dtype=float)
    y = np.asarray(counts, dtype=float)
    if y.shape != (patterns.shape[0],):
        raise DataError(
            f"expected {patterns.shape[0]} cell counts for {n_lists} lists, "
            f"got {y.shape}"
        )
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        raise DataError("cell counts must be finite and nonnegative")
    labels = terms.labels(n_lists)
    x = design_matrix(patterns, terms, n_lists)
    _check_rank(x, labels)

    gamma = np.zeros(x.shape[1])
    mu = np.exp(x @ gamma)
    dev = _poisson_deviance(y, mu)
    for iteration in range(1, _IRLS_MAX_ITER + 1):
        xtwx = x.T @ (x * mu[:, None])
        score = x.T @ (y - mu)
        try:
            step = np.linalg.solve(xtwx, score)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Fisher scoring system became singular") from exc
        for _ in range(30):
            candidate = gamma + step
            with np.errstate(over="ignore"):
                mu_new = np.exp(x @ candidate)
            dev_new = _poisson_deviance(y, mu_new)
            if np.isfinite(dev_new) and dev_new <= dev + 1e-12:
                break
            step = step / 2
        else:
            raise NumericalError("step halving failed, fit is diverging")
        converged = abs(dev - dev_new) <= _IRLS_TOL * max(abs(dev_new), 1.0)
        gamma, mu, dev = candidate, mu_new, dev_new
        if converged:
            break
    else:
        raise NumericalError(f"no convergence in {_IRLS_MAX_ITER} iterations")

    if not np.all(np.isfinite(gamma)):
        raise NumericalError("fitted coefficients are not finite")
    n0 = float(np.exp(gamma[0]))
    if not math.isfinite(n0):
        raise NumericalError("predicted missing-cell count is not finite")
    # Full Poisson log-likelihood, gamma function term included, so the
    # criteria are comparable across any fitting route.
    loglik = float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))
    p = x.shape[1]
    aic = -2.0 * loglik + 2.0 * p
    bic = -2.0 * loglik + math.log(y.size) * p
    return LogLinearFit(
        terms=terms,
        labels=labels,
        coef=tuple(float(c) for c in gamma),
        counts=tuple(float(v) for v in y),
        fitted=tuple(float(v) for v in mu),
        deviance=dev,
        n_iterations=iteration,
        aic=aic,
        bic=bic,
        n0=n0,
    )


def fit_loglinear_counts(dataset, terms="main"):
    """Fit the Poisson cell-count model to a dataset's patterns.

    Tabulates the dataset into the 2^R - 1 observable cells (cells with
    no occurrences are kept as zero counts) and delegates to
    ``fit_loglinear_cells``.

    Parameters
    ----------
    dataset : Dataset
    terms : ModelTerms or {"main", "pairwise"}

    Returns
    -------
    LogLinearFit
    """
    if dataset.m == 0:
        raise DataError("estimate needs at least one observed incident")
    cells = cell_patterns(dataset.n_lists)
    index = {pattern: i for i, pattern in enumerate(cells)}
    counts = np.zeros(len(cells))
    for row in dataset.patterns:
        counts[index[tuple(int(v) for v in row)]] += 1
    return fit_loglinear_cells(counts, dataset.n_lists, terms)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of information-criterion selection over the model family.

    Parameters
    ----------
    criterion : str
        "aic" or "bic".
    mark : MarkRegressionFit or None
        Winning mark model (None if every candidate was rejected).
    counts : LogLinearFit or None
        Winning cell-count model (None if every candidate was rejected).
    estimate : BaselineEstimate
    n_candidates : int
    n_rejected_mark : int
    n_rejected_counts : int
    """

    criterion: str
    mark: object
    counts: object
    estimate: BaselineEstimate
    n_candidates: int
    n_rejected_mark: int
    n_rejected_counts: int


def _ic_value(fit, criterion):
    return fit.aic if criterion == "aic" else fit.bic


def _selection_key(fit, criterion):
    """Ranking key: criterion value, then fewer parameters, then term order."""
    return (_ic_value(fit, criterion), fit.n_params, fit.terms.order_key())


def select_by_ic(dataset, criterion="bic", candidates=None):
    """Select mark and count models by information criterion.

    Fits every candidate structure separately for the mark regression
    and the cell-count model, ranks each family by the criterion (ties
    broken by fewer parameters, then lexicographic term order), and
    combines the winners into n0 * d0.  Candidates whose fit is
    rejected (rank deficiency, too few observations, divergence) are
    skipped and counted.

    Parameters
    ----------
    dataset : Dataset
    criterion : {"aic", "bic"}
    candidates : list of ModelTerms, optional
        Defaults to the full hierarchical family for the dataset's
        number of lists.

    Returns
    -------
    SelectionResult
        ``estimate.status == "unavailable"`` if an entire family was
        rejected.
    """
    criterion = str(criterion).lower()
    if criterion not in ("aic", "bic"):
        raise ConfigurationError(f"criterion must be 'aic' or 'bic', got {criterion!r}")
    if candidates is None:
        candidates = enumerate_hierarchical_models(dataset.n_lists)
    if not candidates:
        raise ConfigurationError("no candidate models supplied")

    best_mark, best_counts = None, None
    rejected_mark = rejected_counts = 0
    for terms in candidates:
        try:
            fit = fit_mark_regression(dataset, terms)
        except (DataError, NumericalError):
            rejected_mark += 1
        else:
            if best_mark is None or _selection_key(fit, criterion) < _selection_key(
                best_mark, criterion
            ):
                best_mark = fit
        try:
            fit = fit_loglinear_counts(dataset, terms)
        except (DataError, NumericalError):
            rejected_counts += 1
        else:
            if best_counts is None or _selection_key(fit, criterion) < _selection_key(
                best_counts, criterion
            ):
                best_counts = fit

    if best_mark is None or best_counts is None:
        failed = []
        if best_mark is None:
            failed.append("mark")
        if best_counts is None:
            failed.append("count")
        estimate = BaselineEstimate(
            math.nan, math.nan, math.nan,
            status="unavailable",
            note=f"every candidate {' and '.join(failed)} model was rejected",
        )
    else:
        n0, d0 = best_counts.n0, best_mark.d0
        estimate = BaselineEstimate(n0, d0, n0 * d0)
    return SelectionResult(
        criterion=criterion,
        mark=best_mark,
        counts=best_counts,
        estimate=estimate,
        n_candidates=len(candidates),
        n_rejected_mark=rejected_mark,
        n_rejected_counts=rejected_counts,
    )
