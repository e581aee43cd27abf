"""Incident records, datasets, capture-pattern tables, and CSV ingest.

The observed unit is an incident: a positive integer-or-real "mark"
(here, a fatality count) together with a binary capture pattern saying
which of R overlapping lists documented it.  All-zero patterns are
unobservable by construction and are rejected on ingest.  Datasets
carry a stratum index per incident plus the ordered stratum labels, so
estimators can run per stratum without re-deriving the grouping.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "IncidentRecord",
    "Dataset",
    "PatternTable",
    "CsvSchema",
    "IngestResult",
    "MONTH_LABELS",
    "pattern_table",
    "collapse_lists",
    "stratify",
    "parse_incident_csv",
    "write_incident_csv",
    "write_pattern_csv",
]

logger = logging.getLogger(__name__)

MONTH_LABELS = (
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
)


@dataclass(frozen=True)
class IncidentRecord:
    """One observed incident.

    Parameters
    ----------
    id : str
        Caller-supplied identifier; not required to be unique.
    pattern : tuple of int
        Binary capture pattern over the R lists, at least one entry 1.
    mark : float
        Positive mark (fatality count) attached to the incident.
    stratum : int
        Index into the dataset's stratum labels.
    date : datetime.date or None
        Event date, needed only for date-based stratification.
    """

    id: str
    pattern: tuple
    mark: float
    stratum: int = 0
    date: dt.date | None = None

    def __post_init__(self):
        pattern = tuple(int(s) for s in self.pattern)
        if not pattern or any(s not in (0, 1) for s in pattern):
            raise DataError(f"record {self.id!r}: pattern must be nonempty 0/1, got {self.pattern!r}")
        if not any(pattern):
            raise DataError(f"record {self.id!r}: all-zero capture pattern is unobservable")
        object.__setattr__(self, "pattern", pattern)
        mark = float(self.mark)
        if not (mark > 0.0 and math.isfinite(mark)):
            raise DataError(f"record {self.id!r}: mark must be positive and finite, got {self.mark!r}")
        object.__setattr__(self, "mark", mark)
        if not (isinstance(self.stratum, (int, np.integer)) and self.stratum >= 0):
            raise DataError(f"record {self.id!r}: stratum must be a nonnegative integer")
        object.__setattr__(self, "stratum", int(self.stratum))

    @property
    def log_mark(self):
        return math.log(self.mark)


class Dataset:
    """Immutable collection of incident records with stratum structure.

    Parameters
    ----------
    records : sequence of IncidentRecord
    stratum_labels : tuple of str, optional
        Ordered labels; the stratum index of every record must be a
        valid index into this tuple.  Defaults to a single stratum.
    n_lists : int, optional
        Number of capture lists R.  Required when ``records`` is empty,
        inferred (and cross-checked) otherwise.

    Attributes
    ----------
    patterns, marks, log_marks, strata : ndarray
        Read-only per-record arrays in record order.
    """

    def __init__(self, records, stratum_labels=("all",), n_lists=None):
        records = tuple(records)
        labels = tuple(str(s) for s in stratum_labels)
        if not labels:
            raise DataError("at least one stratum label is required")
        if len(set(labels)) != len(labels):
            raise DataError("stratum labels must be distinct")
        if records:
            r = len(records[0].pattern)
            if n_lists is not None and n_lists != r:
                raise DataError(f"n_lists={n_lists} but records have {r} lists")
            n_lists = r
        elif n_lists is None:
            raise DataError("n_lists is required for an empty dataset")
        if n_lists < 1:
            raise DataError("need at least one capture list")
        for rec in records:
            if len(rec.pattern) != n_lists:
                raise DataError(f"record {rec.id!r}: pattern length {len(rec.pattern)} != {n_lists}")
            if rec.stratum >= len(labels):
                raise DataError(f"record {rec.id!r}: stratum index {rec.stratum} out of range")

        self._records = records
        self._labels = labels
        self._n_lists = int(n_lists)
        self.patterns = np.array([rec.pattern for rec in records], dtype=np.int8).reshape(
            len(records), n_lists
        )
        self.marks = np.array([rec.mark for rec in records], dtype=float)
        self.log_marks = np.log(self.marks) if records else np.empty(0)
        self.strata = np.array([rec.stratum for rec in records], dtype=np.intp)
        for arr in (self.patterns, self.marks, self.log_marks, self.strata):
            arr.setflags(write=False)

    @property
    def records(self):
        return self._records

    @property
    def stratum_labels(self):
        return self._labels

    @property
    def n_lists(self):
        return self._n_lists

    @property
    def n_strata(self):
        return len(self._labels)

    @property
    def m(self):
        """Number of observed incidents."""
        return len(self._records)

    @property
    def m_by_stratum(self):
        return np.bincount(self.strata, minlength=self.n_strata)

    @property
    def mark_sum(self):
        return float(self.marks.sum())

    @property
    def mark_sums_by_stratum(self):
        return np.bincount(self.strata, weights=self.marks, minlength=self.n_strata)

    def __len__(self):
        return len(self._records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self._records == other._records
            and self._labels == other._labels
            and self._n_lists == other._n_lists
        )

    def __repr__(self):
        return (
            f"Dataset(m={self.m}, n_lists={self.n_lists}, "
            f"n_strata={self.n_strata}, mark_sum={self.mark_sum:g})"
        )


def _display_order(pattern):
    # singles first, then pairs, triples, ...; within a block, the
    # pattern with the earliest lists first (descending binary value)
    value = int("".join(str(s) for s in pattern), 2)
    return (sum(pattern), -value)


@dataclass(frozen=True)
class PatternTable:
    """Capture-pattern frequency table over the observed incidents."""

    n_lists: int
    rows: tuple  # ((pattern, count), ...) in display order

    @property
    def total(self):
        return sum(count for _, count in self.rows)

    def count(self, pattern):
        pattern = tuple(int(s) for s in pattern)
        return dict(self.rows).get(pattern, 0)

    def as_dict(self):
        return dict(self.rows)


def pattern_table(dataset, stratum=None):
    """Tabulate capture-pattern frequencies, optionally for one stratum.

    Patterns with zero count are omitted.  Rows are ordered by number
    of capturing lists, then by earliest involved list.
    """
    counts = {}
    for rec in dataset.records:
        if stratum is not None and rec.stratum != stratum:
            continue
        counts[rec.pattern] = counts.get(rec.pattern, 0) + 1
    rows = tuple(sorted(counts.items(), key=lambda kv: _display_order(kv[0])))
    return PatternTable(n_lists=dataset.n_lists, rows=rows)


def collapse_lists(dataset, groups):
    """Merge capture lists by OR, yielding a dataset with fewer lists.

    Parameters
    ----------
    dataset : Dataset
    groups : sequence of sequence of int
        Partition of ``range(dataset.n_lists)`` (0-based).  The order
        of the groups defines the new list order; a merged list records
        an incident if any member list did.
    """
    groups = [tuple(int(j) for j in g) for g in groups]
    flat = [j for g in groups for j in g]
    if sorted(flat) != list(range(dataset.n_lists)):
        raise DataError(
            f"groups must partition the {dataset.n_lists} list indices exactly, got {groups!r}"
        )
    if any(not g for g in groups):
        raise DataError("empty list group")
    new_records = [
        IncidentRecord(
            id=rec.id,
            pattern=tuple(max(rec.pattern[j] for j in g) for g in groups),
            mark=rec.mark,
            stratum=rec.stratum,
            date=rec.date,
        )
        for rec in dataset.records
    ]
    return Dataset(new_records, stratum_labels=dataset.stratum_labels, n_lists=len(groups))


def stratify(dataset, scheme):
    """Re-stratify a dataset by a named scheme.

    Parameters
    ----------
    dataset : Dataset
    scheme : {"single", "year", "month"}
        ``single`` pools everything into one stratum.  ``year`` makes
        one stratum per calendar year present, in chronological order.
        ``month`` makes twelve strata by calendar month, pooled across
        years; months with no incidents keep their (empty) stratum.

    Returns
    -------
    Dataset
    """
    if scheme == "single":
        labels = ("all",)
        index = {None: 0}

        def key(rec):
            return None

    elif scheme in ("year", "month"):
        missing = sum(1 for rec in dataset.records if rec.date is None)
        if missing:
            raise DataError(f"scheme {scheme!r} needs a date on every record; {missing} missing")
        if scheme == "year":
            years = sorted({rec.date.year for rec in dataset.records})
            if not years:
                raise DataError("cannot stratify an empty dataset by year")
            labels = tuple(str(y) for y in years)
            index = {y: i for i, y in enumerate(years)}

            def key(rec):
                return rec.date.year

        else:
            labels = MONTH_LABELS
            index = {m: m - 1 for m in range(1, 13)}

            def key(rec):
                return rec.date.month

    else:
        raise DataError(f"unknown stratification scheme {scheme!r}")

    new_records = [
        IncidentRecord(
            id=rec.id, pattern=rec.pattern, mark=rec.mark,
            stratum=index[key(rec)], date=rec.date,
        )
        for rec in dataset.records
    ]
    return Dataset(new_records, stratum_labels=labels, n_lists=dataset.n_lists)


@dataclass(frozen=True)
class CsvSchema:
    """Column naming for incident CSV files.

    ``list_cols=None`` autodetects capture columns named
    ``<list_prefix><k>`` with integer ``k``, ordered by ``k``.
    """

    id_col: str = "id"
    date_col: str = "date"
    stratum_col: str = "stratum"
    mark_col: str = "y"
    list_prefix: str = "s_"
    list_cols: tuple | None = None


@dataclass
class IngestResult:
    """Outcome of parsing an incident CSV: the dataset plus, for every
    rejected row, its 1-based data-row number and the reason."""

    dataset: Dataset
    rejected: list = field(default_factory=list)

    @property
    def n_rejected(self):
        return len(self.rejected)


def _detect_lists(header, schema):
    if schema.list_cols is not None:
        cols = list(schema.list_cols)
        missing = [c for c in cols if c not in header]
        if missing:
            raise DataError(f"capture columns missing from header: {missing}")
        return cols
    found = []
    for name in header:
        if name.startswith(schema.list_prefix):
            suffix = name[len(schema.list_prefix):]
            if suffix.isdigit():
                found.append((int(suffix), name))
    if not found:
        raise DataError(f"no capture columns with prefix {schema.list_prefix!r} in header")
    found.sort()
    return [name for _, name in found]


def parse_incident_csv(source, schema=None, strict=False, stratum_order=None):
    """Parse an incident CSV into a dataset, reporting rejected rows.

    Parameters
    ----------
    source : path or open text file
    schema : CsvSchema, optional
    strict : bool
        If true, the first bad row raises DataError instead of being
        collected in the result.
    stratum_order : sequence of str, optional
        Explicit stratum label order.  Default is first-appearance
        order; a label outside an explicit order is a fatal error.

    Returns
    -------
    IngestResult

    Notes
    -----
    Structural problems (missing or duplicated columns) raise DataError
    regardless of ``strict``.  Row-level problems (missing or
    nonpositive mark, malformed pattern cell, all-zero pattern,
    malformed date) reject only that row.  An empty body yields a valid
    dataset with ``m == 0`` and logs a warning.
    """
    schema = schema or CsvSchema()
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return parse_incident_csv(fh, schema=schema, strict=strict, stratum_order=stratum_order)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file: no header row") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    col = {name: i for i, name in enumerate(header)}
    for required in (schema.id_col, schema.mark_col):
        if required not in col:
            raise DataError(f"required column {required!r} missing from header")
    list_cols = _detect_lists(header, schema)
    has_date = schema.date_col in col
    has_stratum = schema.stratum_col in col

    if stratum_order is not None:
        labels = [str(s) for s in stratum_order]
        label_index = {s: i for i, s in enumerate(labels)}
    else:
        labels = []
        label_index = {}

    records = []
    rejected = []
    n_rows = 0

    def reject(row_no, reason):
        if strict:
            raise DataError(f"data row {row_no}: {reason}")
        rejected.append((row_no, reason))

    for row_no, row in enumerate(reader, start=1):
        n_rows += 1
        if len(row) != len(header):
            reject(row_no, f"expected {len(header)} fields, got {len(row)}")
            continue
        raw_mark = row[col[schema.mark_col]].strip()
        if not raw_mark:
            reject(row_no, "missing mark")
            continue
        try:
            mark = float(raw_mark)
        except ValueError:
            reject(row_no, f"mark is not a number: {raw_mark!r}")
            continue
        if not (mark > 0.0 and math.isfinite(mark)):
            reject(row_no, f"mark must be positive, got {raw_mark}")
            continue

        pattern = []
        bad_cell = None
        for name in list_cols:
            cell = row[col[name]].strip()
            if cell not in ("0", "1"):
                bad_cell = f"capture column {name!r} must be 0 or 1, got {cell!r}"
                break
            pattern.append(int(cell))
        if bad_cell:
            reject(row_no, bad_cell)
            continue
        if not any(pattern):
            reject(row_no, "all-zero capture pattern")
            continue

        date = None
        if has_date:
            raw_date = row[col[schema.date_col]].strip()
            if raw_date:
                try:
                    date = dt.date.fromisoformat(raw_date)
                except ValueError:
                    reject(row_no, f"malformed date: {raw_date!r}")
                    continue

        if has_stratum:
            label = row[col[schema.stratum_col]].strip()
            if label not in label_index:
                if stratum_order is not None:
                    raise DataError(
                        f"data row {row_no}: stratum {label!r} not in the supplied stratum order"
                    )
                label_index[label] = len(labels)
                labels.append(label)
            stratum = label_index[label]
        else:
            stratum = 0

        records.append(
            IncidentRecord(
                id=row[col[schema.id_col]].strip(),
                pattern=tuple(pattern),
                mark=mark,
                stratum=stratum,
                date=date,
            )
        )

    if not labels:
        labels = ["all"]
    if n_rows == 0:
        logger.warning("incident CSV has a header but no data rows")
    dataset = Dataset(records, stratum_labels=tuple(labels), n_lists=len(list_cols))
    return IngestResult(dataset=dataset, rejected=rejected)


def _format_mark(mark):
    return str(int(mark)) if float(mark).is_integer() else repr(float(mark))


def write_incident_csv(dataset, dest, schema=None):
    """Write a dataset as CSV, inverse of :func:`parse_incident_csv`.

    Reparsing with ``stratum_order=dataset.stratum_labels`` reproduces
    the dataset exactly, including strata that hold no incidents.
    """
    schema = schema or CsvSchema()
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_incident_csv(dataset, fh, schema=schema)
            return
    writer = csv.writer(dest, lineterminator="\n")
    list_cols = list(schema.list_cols or (f"{schema.list_prefix}{j + 1}" for j in range(dataset.n_lists)))
    writer.writerow([schema.id_col, schema.date_col, schema.stratum_col, schema.mark_col, *list_cols])
    for rec in dataset.records:
        writer.writerow(
            [
                rec.id,
                rec.date.isoformat() if rec.date else "",
                dataset.stratum_labels[rec.stratum],
                _format_mark(rec.mark),
                *rec.pattern,
            ]
        )


def write_pattern_csv(table, dest):
    """Write a pattern table as CSV with columns pattern,count."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_pattern_csv(table, fh)
            return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(["pattern", "count"])
    for pattern, count in table.rows:
        writer.writerow(["".join(str(s) for s in pattern), count])


def dataset_to_csv_text(dataset):
    """Serialize a dataset to a CSV string (convenience for tests/demos)."""
    buf = io.StringIO()
    write_incident_csv(dataset, buf)
    return buf.getvalue()
