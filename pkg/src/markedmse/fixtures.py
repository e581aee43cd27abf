"""Deterministic synthetic incident corpus used by the demos and tests.

The corpus reproduces the marginal shape of a four-list casualty
dataset: 1,562 observed incidents whose capture-pattern frequencies
and total fatality count (25,712) are fixed, with dates spread over
the calendar years 2014 through 2025 so that both date-based
stratification schemes are exercised.  Marks are drawn from a fixed
seed and then nudged so the total is exact, so every call returns the
identical dataset.
"""

from __future__ import annotations

import datetime as dt

import numpy as np

from .data import Dataset, IncidentRecord, write_incident_csv
from .distributions import RandomStream

__all__ = ["DEMO_PATTERN_COUNTS", "DEMO_TOTAL_MARK", "demo_incidents", "write_demo_csv"]

# capture-pattern frequencies of the demo corpus (total 1,562)
DEMO_PATTERN_COUNTS = (
    ((1, 0, 0, 0), 771),
    ((0, 1, 0, 0), 35),
    ((0, 0, 1, 0), 97),
    ((0, 0, 0, 1), 236),
    ((1, 1, 0, 0), 72),
    ((1, 0, 1, 0), 109),
    ((1, 0, 0, 1), 119),
    ((0, 1, 1, 0), 3),
    ((0, 1, 0, 1), 33),
    ((0, 0, 1, 1), 28),
    ((1, 1, 1, 0), 1),
    ((1, 1, 0, 1), 28),
    ((1, 0, 1, 1), 23),
    ((0, 1, 1, 1), 5),
    ((1, 1, 1, 1), 2),
)

DEMO_TOTAL_MARK = 25_712

_SEED = 904_201
_FIRST_YEAR, _N_YEARS = 2014, 12


def _demo_marks(n):
    # integer marks >= 1 with an exact fixed total
    gen = RandomStream(_SEED).gen
    marks = np.maximum(1, np.rint(np.exp(gen.normal(2.2, 1.05, size=n)))).astype(np.int64)
    deficit = DEMO_TOTAL_MARK - int(marks.sum())
    order = np.argsort(marks, kind="stable")[::-1]
    i = 0
    while deficit != 0:
        j = order[i % n]
        if deficit > 0:
            marks[j] += deficit
            deficit = 0
        else:
            give = min(-deficit, int(marks[j]) - 1)
            marks[j] -= give
            deficit += give
            i += 1
    return marks


def demo_incidents():
    """Build the demo corpus as a single-stratum :class:`Dataset`."""
    n = sum(count for _, count in DEMO_PATTERN_COUNTS)
    marks = _demo_marks(n)
    records = []
    i = 0
    for pattern, count in DEMO_PATTERN_COUNTS:
        for _ in range(count):
            date = dt.date(
                _FIRST_YEAR + i % _N_YEARS,
                1 + (i // _N_YEARS) % 12,
                1 + (7 * i) % 28,
            )
            records.append(
                IncidentRecord(
                    id=f"inc-{i + 1:04d}",
                    pattern=pattern,
                    mark=float(marks[i]),
                    stratum=0,
                    date=date,
                )
            )
            i += 1
    return Dataset(records, stratum_labels=("all",))


def write_demo_csv(path):
    """Write the demo corpus to ``path`` as an incident CSV."""
    write_incident_csv(demo_incidents(), path)
