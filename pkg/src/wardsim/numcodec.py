"""Nonuniform logit-space discretization of numeric laboratory values.

Equally spaced percentile bins waste resolution where it matters: abnormal
values crowd the distribution tails.  The codec therefore places bin
centers uniformly in logit space between logit(eps) and logit(1 - eps) and
maps them through the logistic function to percentile ranks, which packs
bins densely near the 0th and 100th percentiles.  Per (test, unit) pair the
percentile ranks are materialized as nearest-rank percentile values, so
every encodable and decodable value is a member of the source data.

Model inputs are normalized with the logit-space coordinate of the closest
percentile value rather than the percentile rank itself, which would lose
precision near the extremes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .errors import CodecError, UnknownCodeError

DEFAULT_N_BINS = 601
DEFAULT_EPS = 1e-7


@dataclass(frozen=True)
class LogitGrid:
    """Bin centers in logit space (``z``) and percentile-rank space (``p``)."""

    eps: float
    n_bins: int
    z: np.ndarray
    p: np.ndarray

    @property
    def z_min(self) -> float:
        return float(self.z[0])

    @property
    def z_max(self) -> float:
        return float(self.z[-1])


def build_logit_grid(n_bins: int = DEFAULT_N_BINS, eps: float = DEFAULT_EPS) -> LogitGrid:
    """Build the discretization grid.

    ``z_i`` interpolates linearly from logit(eps) to logit(1 - eps); the
    symmetric form ``z_i = logit(eps) * (N - 2i + 1) / (N - 1)`` is used so
    that the grid is exactly antisymmetric and, for odd ``n_bins``, the
    middle bin sits exactly at z = 0 (percentile rank 50).
    """
    if n_bins < 2:
        raise CodecError(f"n_bins must be >= 2, got {n_bins}")
    if not (0.0 < eps < 0.5):
        raise CodecError(f"eps must lie in (0, 0.5), got {eps}")
    a = float(logit(eps))
    i = np.arange(1, n_bins + 1, dtype=np.float64)
    z = a * (n_bins + 1 - 2 * i) / (n_bins - 1)
    p = 100.0 * expit(z)
    return LogitGrid(eps=eps, n_bins=n_bins, z=z, p=p)


def nearest_rank_percentiles(values: list[str], grid: LogitGrid) -> list[str]:
    """Percentile values by the nearest-rank method, preserving decimal text.

    For percentile rank ``p`` over ``n`` sorted values the selected element
    has rank ``ceil(p / 100 * n)`` clamped to [1, n], so the result is
    always a member of the input.
    """
    if not values:
        raise CodecError("cannot fit percentiles on empty input")
    order = sorted(range(len(values)), key=lambda k: float(values[k]))
    n = len(values)
    out = []
    for p in grid.p:
        rank = min(max(ceil(p / 100.0 * n), 1), n)
        out.append(values[order[rank - 1]])
    return out


@dataclass
class FittedValues:
    """One (code, unit) percentile list with float cache."""

    strings: list[str]
    floats: np.ndarray
    count: int

    @classmethod
    def from_strings(cls, strings: list[str], count: int) -> "FittedValues":
        return cls(strings, np.asarray([float(s) for s in strings], dtype=np.float64), count)


@dataclass
class PercentileTable:
    """Per-(test, unit) percentile values plus the per-test canonical unit."""

    grid: LogitGrid
    values: dict[tuple[str, str], FittedValues] = field(default_factory=dict)
    canonical_unit: dict[str, str] = field(default_factory=dict)
    constant_pairs: list[tuple[str, str]] = field(default_factory=list)

    def has(self, code: str, unit: str) -> bool:
        return (code, unit) in self.values

    def has_code(self, code: str) -> bool:
        return code in self.canonical_unit

    def fitted(self, code: str, unit: str) -> FittedValues:
        try:
            return self.values[(code, unit)]
        except KeyError:
            raise UnknownCodeError(code, f"no percentile table for unit {unit!r}")

    def encode_value(self, x: float, code: str, unit: str) -> tuple[float, int]:
        """Normalize ``x`` to [0, 1]; returns (normalized value, 1-based bin index).

        The bin is the argmin of |v_i - x| (smallest index on ties) and the
        normalized value is the affine image of its logit-space coordinate.
        """
        fitted = self.fitted(code, unit)
        idx = int(np.argmin(np.abs(fitted.floats - x)))
        z = self.grid.z
        normalized = float((z[idx] - z[0]) / (z[-1] - z[0]))
        return normalized, idx + 1

    def encode_many(self, xs: np.ndarray, code: str, unit: str, chunk: int = 4096) -> np.ndarray:
        """Vectorized bin lookup; returns 1-based bin indices."""
        fitted = self.fitted(code, unit)
        xs = np.asarray(xs, dtype=np.float64)
        bins = np.empty(len(xs), dtype=np.int64)
        for lo in range(0, len(xs), chunk):
            seg = xs[lo : lo + chunk]
            bins[lo : lo + len(seg)] = np.argmin(
                np.abs(seg[:, None] - fitted.floats[None, :]), axis=1
            )
        return bins + 1

    def decode_bin(self, bin_index: int, code: str) -> tuple[str, str]:
        """Map a 1-based bin index back to (decimal value string, canonical unit)."""
        if code not in self.canonical_unit:
            raise UnknownCodeError(code)
        if not (1 <= bin_index <= self.grid.n_bins):
            raise CodecError(f"bin index {bin_index} outside [1, {self.grid.n_bins}]")
        unit = self.canonical_unit[code]
        fitted = self.values[(code, unit)]
        return fitted.strings[bin_index - 1], unit

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.values):
            fitted = self.values[key]
            h.update(repr(key).encode())
            h.update("\x1f".join(fitted.strings).encode())
        return h.hexdigest()


def collect_numeric_observations(timelines) -> dict[tuple[str, str], list[str]]:
    """Gather numeric lab results per (test code, unit) from built timelines."""
    observations: dict[tuple[str, str], list[str]] = {}
    for timeline in timelines:
        lab = None
        for e in timeline.entries:
            if e.record_type == "lab_test":
                lab = e.token
            elif e.record_type == "lab_result" and e.kind == "numeric":
                observations.setdefault((lab, e.unit or ""), []).append(e.value)
    return observations


def fit_percentile_tables(
    observations: dict[tuple[str, str], list[str]], grid: LogitGrid
) -> PercentileTable:
    """Fit per-(code, unit) percentile lists from training observations.

    The canonical unit of each test is its most frequently observed unit
    (ties broken lexicographically).  Pairs with a single distinct value
    still get a (constant) table and are flagged in ``constant_pairs``.
    """
    table = PercentileTable(grid=grid)
    unit_counts: dict[str, list[tuple[int, str]]] = {}
    for (code, unit), values in sorted(observations.items()):
        if not values:
            continue
        table.values[(code, unit)] = FittedValues.from_strings(
            nearest_rank_percentiles(values, grid), len(values)
        )
        if len({float(v) for v in values}) < 2:
            table.constant_pairs.append((code, unit))
        unit_counts.setdefault(code, []).append((len(values), unit))
    for code, counts in unit_counts.items():
        counts.sort(key=lambda t: (-t[0], t[1]))
        table.canonical_unit[code] = counts[0][1]
    return table


# ---------------------------------------------------------------------------
# Artifact serialization

_HEADER = "# wardsim-percentiles v1"


def save_percentile_tables(table: PercentileTable, path: str | Path) -> None:
    lines = [f"{_HEADER} n_bins={table.grid.n_bins} eps={table.grid.eps!r}"]
    for (code, unit), fitted in sorted(table.values.items()):
        canonical = "1" if table.canonical_unit.get(code) == unit else "0"
        lines.append(
            "\t".join([code, unit, canonical, str(fitted.count), ",".join(fitted.strings)])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_percentile_tables(path: str | Path) -> PercentileTable:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(_HEADER):
        raise CodecError(f"{path}: not a wardsim percentile table")
    params = dict(kv.split("=") for kv in text[0][len(_HEADER) :].split())
    grid = build_logit_grid(int(params["n_bins"]), float(params["eps"]))
    table = PercentileTable(grid=grid)
    for line in text[1:]:
        if not line.strip():
            continue
        code, unit, canonical, count, values = line.split("\t")
        table.values[(code, unit)] = FittedValues.from_strings(values.split(","), int(count))
        if canonical == "1":
            table.canonical_unit[code] = unit
    return table
