"""Patient-level cohort splitting with a temporal hold-out."""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import date, datetime

from .errors import ConfigError
from .records import RT_DEMOGRAPHIC, TabularRecord


@dataclass
class CohortSplit:
    train: list[str]
    val: list[str]
    test: list[str]


def first_record_date(records: list[TabularRecord]) -> date | None:
    dates = [
        datetime.fromisoformat(r.timestamp).date()
        for r in records
        if r.timestamp and r.record_type != RT_DEMOGRAPHIC
    ]
    return min(dates) if dates else None


def split_cohort(
    patients: dict[str, list[TabularRecord]],
    test_fraction: float = 0.07,
    val_fraction: float = 0.02,
    cutoff_date: date | None = None,
    seed: int = 0,
) -> tuple[CohortSplit, dict[str, list[TabularRecord]]]:
    """Split patients into train/val/test sets.

    The newest ``test_fraction`` of patients by first-record date form the
    test set; the remainder is randomly split, with ``val_fraction`` of it
    going to validation.  Development (train+val) records dated after
    ``cutoff_date`` are removed from the returned record map; test records
    are untouched.  Patients sharing a date are ordered by patient id so the
    split is deterministic, and the random split is seeded.
    """
    if not patients:
        raise ConfigError("empty cohort")

    ordered = sorted(
        patients,
        key=lambda pid: (first_record_date(patients[pid]) or date.min, pid),
    )
    n_test = round(len(ordered) * test_fraction)
    test = sorted(ordered[len(ordered) - n_test :]) if n_test else []
    remaining = ordered[: len(ordered) - n_test]

    rng = random.Random(seed)
    shuffled = sorted(remaining)
    rng.shuffle(shuffled)
    n_val = round(len(shuffled) * val_fraction)
    val = sorted(shuffled[:n_val])
    train = sorted(shuffled[n_val:])

    filtered: dict[str, list[TabularRecord]] = {}
    for pid, recs in patients.items():
        if cutoff_date is not None and pid not in test:
            recs = [
                r
                for r in recs
                if r.record_type == RT_DEMOGRAPHIC
                or not r.timestamp
                or datetime.fromisoformat(r.timestamp).date() <= cutoff_date
            ]
        filtered[pid] = recs

    return CohortSplit(train=train, val=val, test=test), filtered
