"""Fidelity and calibration metrics over real and simulated futures.

All functions operate on future fragments represented as lists of
:class:`~wardsim.montecarlo.TimedEntry`, the common currency for real
futures and generated continuations.  Every scalar metric here has an
independent brute-force twin in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError
from .montecarlo import TimedEntry
from .records import RT_DIAGNOSIS, RT_LAB_RESULT, RT_LAB_TEST, RT_MEDICATION
from .timeline import CATEGORICAL, NUMERIC

CATEGORY_RECORD_TYPES = {
    "diagnosis": (RT_DIAGNOSIS,),
    "medication": (RT_MEDICATION,),
    "lab_test": (RT_LAB_TEST,),
}


def fragment_length(timed: list[TimedEntry]) -> int:
    """Entry count of a future fragment, temporal headers included."""
    return len(timed) + len({t.structure_minutes for t in timed})


def temporal_entry_count(timed: list[TimedEntry]) -> int:
    return len({t.structure_minutes for t in timed})


def _codes_in(timed: list[TimedEntry], category: str):
    kinds = CATEGORY_RECORD_TYPES[category]
    for t in timed:
        if t.entry.record_type in kinds and t.entry.token is not None:
            yield t.entry.token


# ---------------------------------------------------------------------------
# Major codes and prevalence


@dataclass
class MajorCodeSet:
    codes: dict[str, list[str]] = field(default_factory=dict)
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    share: float = 0.9

    def category(self, name: str) -> list[str]:
        return self.codes.get(name, [])


def major_codes(futures: list[list[TimedEntry]], share: float = 0.90) -> MajorCodeSet:
    """Most frequent codes covering ``share`` of each category's volume.

    The set is the minimal prefix of the frequency-sorted code list whose
    cumulative share reaches the target; ties break lexicographically.
    """
    out = MajorCodeSet(share=share)
    for category in CATEGORY_RECORD_TYPES:
        counts: dict[str, int] = {}
        for timed in futures:
            for code in _codes_in(timed, category):
                counts[code] = counts.get(code, 0) + 1
        total = sum(counts.values())
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        chosen = []
        cumulative = 0
        for code, n in ordered:
            if total and cumulative / total >= share:
                break
            chosen.append(code)
            cumulative += n
        out.codes[category] = chosen
        out.counts[category] = counts
    return out


def event_frequency(
    futures: list[list[TimedEntry]], category: str, codes: list[str]
) -> np.ndarray:
    """Per-code share of the category's total event volume."""
    counts = {c: 0 for c in codes}
    total = 0
    for timed in futures:
        for code in _codes_in(timed, category):
            total += 1
            if code in counts:
                counts[code] += 1
    if total == 0:
        return np.zeros(len(codes))
    return np.asarray([counts[c] / total for c in codes], dtype=np.float64)


def per_timeline_rate(
    futures: list[list[TimedEntry]], category: str, codes: list[str]
) -> np.ndarray:
    """Fraction of timelines where each code appears at least once."""
    if not futures:
        raise EvaluationError("empty timeline set")
    hits = np.zeros(len(codes))
    index = {c: i for i, c in enumerate(codes)}
    for timed in futures:
        seen = set(_codes_in(timed, category)) & index.keys()
        for code in seen:
            hits[index[code]] += 1
    return hits / len(futures)


def pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise EvaluationError("Pearson r needs at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    denominator = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denominator == 0:
        return math.nan
    return float(xc @ yc) / denominator


def pearson_ci(r: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Fisher z interval."""
    from scipy.stats import norm

    if n <= 3 or not math.isfinite(r) or abs(r) >= 1.0:
        return (math.nan, math.nan)
    z = math.atanh(r)
    half = norm.ppf(0.5 + level / 2) / math.sqrt(n - 3)
    return (math.tanh(z - half), math.tanh(z + half))


def agreement(real: np.ndarray, simulated: np.ndarray) -> dict:
    r = pearson_r(real, simulated)
    lo, hi = pearson_ci(r, len(real))
    return {"r": r, "ci": (lo, hi), "n": len(real)}


# ---------------------------------------------------------------------------
# Laboratory structure


def cooccurrence(futures: list[list[TimedEntry]], tests: list[str]) -> np.ndarray:
    """Symmetric matrix of P(both tests appear in the same timeline).

    Normalized by the number of timelines, so the diagonal is the
    single-test timeline frequency.
    """
    index = {c: i for i, c in enumerate(tests)}
    matrix = np.zeros((len(tests), len(tests)))
    for timed in futures:
        present = sorted({index[c] for c in _codes_in(timed, "lab_test") if c in index})
        for a in present:
            for b in present:
                matrix[a, b] += 1
    if futures:
        matrix /= len(futures)
    return matrix


def lab_correlations(
    futures: list[list[TimedEntry]],
    tests: list[str],
    min_pair_fraction: float = 0.005,
) -> np.ndarray:
    """Pearson correlation of numeric results sharing a specimen time.

    Pairs rarer than ``min_pair_fraction`` of the total lab order volume
    are left blank (NaN), as are pairs with fewer than two observations.
    """
    index = {c: i for i, c in enumerate(tests)}
    total_orders = sum(
        1 for timed in futures for t in timed if t.entry.record_type == RT_LAB_TEST
    )
    pairs: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for timed in futures:
        by_minute: dict[int, dict[int, float]] = {}
        for t in timed:
            if (
                t.entry.record_type == RT_LAB_RESULT
                and t.entry.kind == NUMERIC
                and t.lab_code in index
            ):
                by_minute.setdefault(t.structure_minutes, {})[index[t.lab_code]] = float(t.entry.value)
        for values in by_minute.values():
            keys = sorted(values)
            for i, a in enumerate(keys):
                for b in keys[i + 1 :]:
                    pairs.setdefault((a, b), []).append((values[a], values[b]))
    matrix = np.full((len(tests), len(tests)), np.nan)
    threshold = max(2, math.ceil(min_pair_fraction * total_orders))
    for (a, b), observations in pairs.items():
        if len(observations) < threshold:
            continue
        xs = np.asarray([o[0] for o in observations])
        ys = np.asarray([o[1] for o in observations])
        r = pearson_r(xs, ys)
        matrix[a, b] = matrix[b, a] = r
    return matrix


def numeric_values(futures: list[list[TimedEntry]], test: str) -> np.ndarray:
    out = [
        float(t.entry.value)
        for timed in futures
        for t in timed
        if t.entry.record_type == RT_LAB_RESULT and t.entry.kind == NUMERIC and t.lab_code == test
    ]
    return np.asarray(out, dtype=np.float64)


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |ECDF_a - ECDF_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise EvaluationError("KS statistic needs nonempty samples")
    points = np.concatenate([a, b])
    fa = np.searchsorted(a, points, side="right") / len(a)
    fb = np.searchsorted(b, points, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def temporal_dynamics(futures: list[list[TimedEntry]]) -> dict:
    lengths = np.asarray([fragment_length(t) for t in futures])
    temporal = np.asarray([temporal_entry_count(t) for t in futures])
    return {"lengths": lengths, "temporal_entries": temporal}


# ---------------------------------------------------------------------------
# Coverage


@dataclass
class CoverageCurve:
    levels: np.ndarray  # nominal levels in percent, 0..100
    empirical: np.ndarray
    mae: float
    mae_ci: tuple[float, float] = (math.nan, math.nan)


def coverage_curve(
    real_lengths: np.ndarray,
    simulated_lengths: list[np.ndarray],
    n_bootstrap: int = 1000,
    rng: np.random.Generator | None = None,
) -> CoverageCurve:
    """Empirical vs nominal central-interval coverage of timeline lengths.

    For nominal level c, the interval is the central c% of each prompt's
    simulated lengths; empirical coverage is the fraction of prompts whose
    real length falls inside.  The MAE over the 21 nominal levels
    quantifies the mismatch; its CI comes from a prompt-level bootstrap.
    """
    if len(real_lengths) != len(simulated_lengths):
        raise EvaluationError("one simulated length vector per prompt required")
    levels = np.arange(0, 101, 5, dtype=np.float64)
    n = len(real_lengths)
    inside = np.zeros((len(levels), n), dtype=bool)
    for j, (real, sims) in enumerate(zip(real_lengths, simulated_lengths)):
        sims = np.asarray(sims, dtype=np.float64)
        lows = np.percentile(sims, (100.0 - levels) / 2.0)
        highs = np.percentile(sims, (100.0 + levels) / 2.0)
        inside[:, j] = (lows <= real) & (real <= highs)
    empirical = inside.mean(axis=1)
    mae = float(np.mean(np.abs(empirical - levels / 100.0)))
    ci = (math.nan, math.nan)
    if n_bootstrap and n > 1:
        rng = rng or np.random.default_rng(0)
        maes = np.empty(n_bootstrap)
        for k in range(n_bootstrap):
            pick = rng.integers(0, n, size=n)
            emp = inside[:, pick].mean(axis=1)
            maes[k] = np.mean(np.abs(emp - levels / 100.0))
        ci = (float(np.percentile(maes, 2.5)), float(np.percentile(maes, 97.5)))
    return CoverageCurve(levels=levels, empirical=empirical, mae=mae, mae_ci=ci)


# ---------------------------------------------------------------------------
# Calibration and discrimination


def loess_curve(
    x: np.ndarray, y: np.ndarray, span: float = 0.2, grid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Locally weighted degree-1 regression with tricube weights.

    ``span`` is the fraction of points entering each local fit.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    if grid is None:
        grid = np.unique(xs)
    k = max(2, math.ceil(span * len(xs)))
    smoothed = np.empty(len(grid))
    for i, x0 in enumerate(grid):
        distances = np.abs(xs - x0)
        idx = np.argpartition(distances, min(k - 1, len(xs) - 1))[:k]
        d = distances[idx]
        dmax = d.max()
        w = (1 - (d / dmax) ** 3) ** 3 if dmax > 0 else np.ones_like(d)
        xw, yw = xs[idx], ys[idx]
        sw = w.sum()
        xbar = (w * xw).sum() / sw
        ybar = (w * yw).sum() / sw
        sxx = (w * (xw - xbar) ** 2).sum()
        slope = (w * (xw - xbar) * (yw - ybar)).sum() / sxx if sxx > 1e-12 else 0.0
        smoothed[i] = ybar + slope * (x0 - xbar)
    return grid, smoothed


def observed_expected(outcomes: np.ndarray, predictions: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.sum() == 0:
        return math.nan
    return float(np.sum(outcomes) / np.sum(predictions))


def auroc(outcomes: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUROC (ties contribute one half)."""
    outcomes = np.asarray(outcomes)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(outcomes.sum())
    n_neg = len(outcomes) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average 1-based rank
        i = j
    pos_rank_sum = ranks[outcomes == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(outcomes: np.ndarray, scores: np.ndarray) -> float:
    """Area under the precision-recall curve by step integration."""
    outcomes = np.asarray(outcomes)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(outcomes.sum())
    if n_pos == 0 or n_pos == len(outcomes):
        return math.nan
    order = np.argsort(-scores, kind="mergesort")
    y = outcomes[order]
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    boundary = np.append(s[1:] != s[:-1], True)  # last index of each tie group
    tp_b, fp_b = tp[boundary], fp[boundary]
    recall = tp_b / n_pos
    precision = tp_b / (tp_b + fp_b)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


@dataclass
class CalibrationReport:
    n: int
    loess_x: np.ndarray
    loess_y: np.ndarray
    bin_centers: np.ndarray
    bin_predicted: np.ndarray
    bin_observed: np.ndarray
    bin_counts: np.ndarray
    oe_ratio: float
    oe_ci: tuple[float, float]
    auroc: float
    auroc_ci: tuple[float, float]
    auprc: float
    auprc_ci: tuple[float, float]


def _bootstrap_ci(metric, outcomes, predictions, n_boot, rng) -> tuple[float, float]:
    n = len(outcomes)
    values = []
    for _ in range(n_boot):
        pick = rng.integers(0, n, size=n)
        v = metric(outcomes[pick], predictions[pick])
        if not math.isnan(v):
            values.append(v)
    if not values:
        return (math.nan, math.nan)
    return (float(np.percentile(values, 2.5)), float(np.percentile(values, 97.5)))


def calibration(
    outcomes: np.ndarray,
    predictions: np.ndarray,
    span: float = 0.2,
    n_bootstrap: int = 1000,
    rng: np.random.Generator | None = None,
) -> CalibrationReport:
    """LOESS calibration curve, 10-bin empirical curve, O/E, AUROC, AUPRC.

    Discrimination metrics are NaN for single-class outcomes; bootstrap CIs
    are percentile intervals over resampled prompts.
    """
    outcomes = np.asarray(outcomes, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    rng = rng or np.random.default_rng(0)
    loess_x, loess_y = loess_curve(predictions, outcomes, span=span)
    edges = np.linspace(0, 1, 11)
    bin_index = np.clip(np.digitize(predictions, edges[1:-1]), 0, 9)
    centers, predicted, observed, counts = [], [], [], []
    for b in range(10):
        mask = bin_index == b
        centers.append((edges[b] + edges[b + 1]) / 2)
        counts.append(int(mask.sum()))
        predicted.append(float(predictions[mask].mean()) if mask.any() else math.nan)
        observed.append(float(outcomes[mask].mean()) if mask.any() else math.nan)
    oe = observed_expected(outcomes, predictions)
    report = CalibrationReport(
        n=len(outcomes),
        loess_x=loess_x,
        loess_y=loess_y,
        bin_centers=np.asarray(centers),
        bin_predicted=np.asarray(predicted),
        bin_observed=np.asarray(observed),
        bin_counts=np.asarray(counts),
        oe_ratio=oe,
        oe_ci=_bootstrap_ci(observed_expected, outcomes, predictions, n_bootstrap, rng),
        auroc=auroc(outcomes, predictions),
        auroc_ci=_bootstrap_ci(auroc, outcomes, predictions, n_bootstrap, rng),
        auprc=auprc(outcomes, predictions),
        auprc_ci=_bootstrap_ci(auprc, outcomes, predictions, n_bootstrap, rng),
    )
    return report


# ---------------------------------------------------------------------------
# Noncontextual baseline


def baseline_sample(
    reference: list, n: int, rng: np.random.Generator
) -> list:
    """Size-matched draw without replacement from the reference corpus."""
    if n > len(reference):
        raise EvaluationError(f"cannot draw {n} from a reference of {len(reference)}")
    idx = rng.choice(len(reference), size=n, replace=False)
    return [reference[i] for i in idx]
