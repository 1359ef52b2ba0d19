"""Brute-force reference implementations used only as test oracles.

Everything here is deliberately naive (loops, exhaustive scans) and
independent of the library's code paths.
"""

from __future__ import annotations

import math
from datetime import date, datetime, time, timedelta


# ---------------------------------------------------------------------------
# Calendar


def age_components_by_iteration(ts: datetime, birthdate: date) -> tuple[int, int, int, int, int]:
    """Walk month anniversaries one at a time to decompose an age."""
    months = 0
    anchor = birthdate
    while True:
        nxt = add_one_month_clipped(birthdate, months + 1)
        if datetime.combine(nxt, time.min) > ts:
            break
        months += 1
        anchor = nxt
    days = (ts.date() - anchor).days
    return months // 12, months % 12, days, ts.hour, ts.minute


def add_one_month_clipped(birthdate: date, months: int) -> date:
    total = birthdate.year * 12 + (birthdate.month - 1) + months
    year, month = divmod(total, 12)
    month += 1
    day = birthdate.day
    while True:
        try:
            return date(year, month, day)
        except ValueError:
            day -= 1


# ---------------------------------------------------------------------------
# Nearest-rank percentile and argmin bin


def nearest_rank_value(sorted_values: list[float], p: float) -> float:
    n = len(sorted_values)
    rank = math.ceil(p / 100.0 * n)
    rank = min(max(rank, 1), n)
    return sorted_values[rank - 1]


def argmin_bin(values: list[float], x: float) -> int:
    """Exhaustive scan; first index with minimal |v - x| (0-based)."""
    best, best_d = 0, abs(values[0] - x)
    for i, v in enumerate(values):
        d = abs(v - x)
        if d < best_d:
            best, best_d = i, d
    return best


# ---------------------------------------------------------------------------
# Time bins


def enumerate_day_bins(limit_days: int, bounds: list[int], widths: list[int]) -> list[tuple[int, int]]:
    """Assign every whole-day offset to a bin by scanning, then dedupe."""
    bins = []
    for d in range(1, limit_days):
        prev = 0
        for bound, width in zip(bounds, widths):
            seg_lo, seg_hi = prev + 1, min(bound + 1, limit_days)
            if seg_lo <= d < seg_hi:
                k = (d - seg_lo) // width
                lo = seg_lo + k * width
                hi = min(lo + width, seg_hi)
                bins.append((lo, hi))
                break
            prev = bound
    out = []
    for b in bins:
        if not out or out[-1] != b:
            out.append(b)
    return out


# ---------------------------------------------------------------------------
# Statistics


def pearson_r(xs: list[float], ys: list[float]) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def ks_statistic(a: list[float], b: list[float]) -> float:
    """Sup ECDF distance evaluated at every observed point."""
    sa, sb = sorted(a), sorted(b)
    points = sa + sb
    best = 0.0
    for p in points:
        fa = sum(1 for v in sa if v <= p) / len(sa)
        fb = sum(1 for v in sb if v <= p) / len(sb)
        best = max(best, abs(fa - fb))
    return best


def observed_expected(outcomes: list[int], predictions: list[float]) -> float:
    return sum(outcomes) / sum(predictions)


def auroc_pairwise(outcomes: list[int], scores: list[float]) -> float:
    """Count concordant positive/negative pairs; ties score one half."""
    pos = [s for s, y in zip(scores, outcomes) if y == 1]
    neg = [s for s, y in zip(scores, outcomes) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def auprc_step(outcomes: list[int], scores: list[float]) -> float:
    """Step integration of the precision-recall curve over score thresholds."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], outcomes[i]))
    n_pos = sum(outcomes)
    area = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and scores[order[j]] == scores[order[i]]:
            tp += outcomes[order[j]]
            fp += 1 - outcomes[order[j]]
            j += 1
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return area
