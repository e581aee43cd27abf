"""Persistence for posterior draws: CSV for the draw series, JSON for
context, NPZ for optional parameter and imputation snapshots.

The CSV/JSON pair is the durable interface: ``load_draws`` rebuilds a
:class:`~markedmse.sampler.PosteriorDraws` from a directory written by
``save_draws``, and refuses truncated or inconsistent files.  Floats
are written with ``repr`` so values survive a round trip exactly and
repeated runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .sampler import PosteriorDraws

__all__ = ["write_draws_csv", "write_trace_csv", "save_draws", "load_draws"]

_FORMAT_VERSION = 1


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def write_draws_csv(draws, dest):
    """Write the per-draw functionals as a wide CSV.

    Columns: ``draw`` (1-based retained index), ``iteration`` (absolute
    sweep number), then ``n0_<label>``, ``ytot_<label>``, ``d0_<label>``
    per stratum.  An undefined mean imputed mark (no missed incidents
    in that draw) is an empty cell.
    """
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_draws_csv(draws, fh)
            return
    writer = csv.writer(dest, lineterminator="\n")
    header = ["draw", "iteration"]
    for label in draws.stratum_labels:
        header += [f"n0_{label}", f"ytot_{label}", f"d0_{label}"]
    writer.writerow(header)
    for t in range(draws.n_retained):
        row = [str(t + 1), str(int(draws.iterations_kept[t]))]
        for g in range(draws.n_strata):
            row += [str(int(draws.n0[t, g])), _fmt(draws.y_tot[t, g]), _fmt(draws.d0[t, g])]
        writer.writerow(row)


def write_trace_csv(draws, dest):
    """Write the monitored series: log missed incidents and log missed
    marks (all strata pooled) per retained draw."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_trace_csv(draws, fh)
            return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(["draw", "iteration", "log_missing_incidents", "log_missing_marks"])
    log_n = draws.log_missing_incidents
    log_y = draws.log_missing_marks
    for t in range(draws.n_retained):
        writer.writerow(
            [str(t + 1), str(int(draws.iterations_kept[t])), repr(float(log_n[t])), repr(float(log_y[t]))]
        )


def _meta_dict(draws):
    return {
        "format_version": _FORMAT_VERSION,
        "stratum_labels": list(draws.stratum_labels),
        "m_by_stratum": [int(v) for v in draws.m_by_stratum],
        "observed_mark_sums": [float(v) for v in draws.observed_mark_sums],
        "n_retained": int(draws.n_retained),
        "alpha_acceptance": [
            None if math.isnan(float(v)) else float(v) for v in draws.alpha_acceptance
        ],
        "n_clamped": int(draws.n_clamped),
        "config": draws.config,
        "settings": draws.settings,
        "has_params": bool(draws.has_params),
        "has_imputed": draws.imputed is not None,
    }


def save_draws(draws, directory, stem="draws"):
    """Write ``<stem>.csv`` and ``<stem>_meta.json`` (plus parameter and
    imputation NPZ files when present) into ``directory``.

    Returns the list of paths written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []

    csv_path = directory / f"{stem}.csv"
    write_draws_csv(draws, csv_path)
    paths.append(csv_path)

    meta_path = directory / f"{stem}_meta.json"
    meta_path.write_text(json.dumps(_meta_dict(draws), indent=2, sort_keys=True) + "\n")
    paths.append(meta_path)

    if draws.has_params:
        params_path = directory / f"{stem}_params.npz"
        np.savez_compressed(
            params_path,
            iterations_kept=draws.iterations_kept,
            pi=draws.pi,
            p=draws.p,
            mu=draws.mu,
            sigma2=draws.sigma2,
            lam=draws.lam,
            alpha=draws.alpha,
        )
        paths.append(params_path)

    if draws.imputed is not None:
        flat, offsets = _pack_ragged(draws.imputed, draws.n_strata)
        imputed_path = directory / f"{stem}_imputed.npz"
        np.savez_compressed(imputed_path, values=flat, offsets=offsets)
        paths.append(imputed_path)

    return paths


def _pack_ragged(imputed, n_strata):
    chunks = [x for per_draw in imputed for x in per_draw]
    sizes = np.array([len(x) for x in chunks], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = np.concatenate(chunks) if chunks else np.empty(0)
    return flat, offsets


def _unpack_ragged(values, offsets, n_draws, n_strata):
    out = []
    idx = 0
    for _ in range(n_draws):
        per_draw = []
        for _ in range(n_strata):
            lo, hi = offsets[idx], offsets[idx + 1]
            per_draw.append(values[lo:hi].copy())
            idx += 1
        out.append(per_draw)
    return out


def load_draws(directory, stem="draws"):
    """Rebuild posterior draws from ``save_draws`` output.

    Raises DataError on missing files, truncated draw series, or any
    mismatch between the CSV and its metadata.
    """
    directory = Path(directory)
    csv_path = directory / f"{stem}.csv"
    meta_path = directory / f"{stem}_meta.json"
    if not csv_path.exists():
        raise DataError(f"draws file not found: {csv_path}")
    if not meta_path.exists():
        raise DataError(f"draws metadata not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as err:
        raise DataError(f"unreadable draws metadata: {err}") from None

    labels = tuple(meta["stratum_labels"])
    n_strata = len(labels)
    n_retained = int(meta["n_retained"])

    expected_header = ["draw", "iteration"]
    for label in labels:
        expected_header += [f"n0_{label}", f"ytot_{label}", f"d0_{label}"]

    iterations = np.empty(n_retained, dtype=np.int64)
    n0 = np.empty((n_retained, n_strata), dtype=np.int64)
    y_tot = np.empty((n_retained, n_strata))
    d0 = np.empty((n_retained, n_strata))
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise DataError(f"draws CSV header does not match metadata in {csv_path}")
        t = 0
        for row in reader:
            if t >= n_retained:
                raise DataError(f"draws CSV has more rows than metadata declares: {csv_path}")
            if len(row) != len(expected_header):
                raise DataError(f"draws CSV row {t + 1} is malformed in {csv_path}")
            try:
                iterations[t] = int(row[1])
                for g in range(n_strata):
                    n0[t, g] = int(row[2 + 3 * g])
                    y_tot[t, g] = float(row[3 + 3 * g])
                    cell = row[4 + 3 * g]
                    d0[t, g] = math.nan if cell == "" else float(cell)
            except ValueError as err:
                raise DataError(f"draws CSV row {t + 1}: {err}") from None
            t += 1
    if t != n_retained:
        raise DataError(f"draws CSV is truncated: expected {n_retained} rows, found {t}")

    draws = PosteriorDraws(
        stratum_labels=labels,
        m_by_stratum=np.asarray(meta["m_by_stratum"], dtype=np.int64),
        observed_mark_sums=np.asarray(meta["observed_mark_sums"], dtype=float),
        iterations_kept=iterations,
        n0=n0,
        y_tot=y_tot,
        d0=d0,
        alpha_acceptance=np.asarray(
            [math.nan if v is None else v for v in meta["alpha_acceptance"]], dtype=float
        ),
        n_clamped=int(meta["n_clamped"]),
        config=meta["config"],
        settings=meta["settings"],
    )

    params_path = directory / f"{stem}_params.npz"
    if meta.get("has_params"):
        if not params_path.exists():
            raise DataError(f"metadata declares parameter snapshots but {params_path} is missing")
        with np.load(params_path) as npz:
            for name in ("pi", "p", "mu", "sigma2", "lam", "alpha"):
                setattr(draws, name, npz[name])
            if not np.array_equal(npz["iterations_kept"], iterations):
                raise DataError("parameter snapshots disagree with the draw series")

    imputed_path = directory / f"{stem}_imputed.npz"
    if meta.get("has_imputed"):
        if not imputed_path.exists():
            raise DataError(f"metadata declares imputed marks but {imputed_path} is missing")
        with np.load(imputed_path) as npz:
            values, offsets = npz["values"], npz["offsets"]
        if len(offsets) != n_retained * n_strata + 1:
            raise DataError("imputed-mark offsets disagree with the draw series")
        draws.imputed = _unpack_ragged(values, offsets, n_retained, n_strata)

    return draws
