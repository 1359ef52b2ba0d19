from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from wardsim.errors import EvaluationError
from wardsim.metrics import (
    agreement,
    auprc,
    auroc,
    baseline_sample,
    calibration,
    cooccurrence,
    coverage_curve,
    event_frequency,
    fragment_length,
    ks_statistic,
    lab_correlations,
    loess_curve,
    major_codes,
    numeric_values,
    observed_expected,
    pearson_r,
    per_timeline_rate,
    temporal_dynamics,
)
from wardsim.montecarlo import TimedEntry, walk_entries
from wardsim.records import RT_DEMOGRAPHIC, RT_LAB_TEST, TabularRecord, group_by_patient
from wardsim.synthworld import SynthWorld
from wardsim.timeline import TimelineEntry, build_timeline


def _entry(record_type, token=None, value=None, unit=None, kind=None):
    kind = kind or ("numeric" if value is not None else "categorical")
    return TimelineEntry(kind, record_type, token=token, value=value, unit=unit)


def _timed(minutes, record_type, token=None, value=None, unit=None, lab_code=None):
    return TimedEntry(minutes, _entry(record_type, token, value, unit), lab_code, minutes)


def _frag(codes, minutes_start=0):
    return [
        _timed(minutes_start + i, "medication" if c.startswith("M") else "diagnosis", token=c)
        for i, c in enumerate(codes)
    ]


def test_major_codes_cumulative_cutoff():
    # counts 50/30/15/5: the 90% cutoff needs the first three codes
    futures = [_frag(["A"] * 50 + ["B"] * 30 + ["C"] * 15 + ["D"] * 5)]
    major = major_codes(futures, share=0.90)
    assert major.category("diagnosis") == ["A", "B", "C"]


def test_major_codes_single_and_ties():
    futures = [_frag(["A"])]
    major = major_codes(futures)
    assert major.category("diagnosis") == ["A"]
    tied = [_frag(["B"] * 3 + ["A"] * 3 + ["C"] * 3)]
    a = major_codes(tied)
    b = major_codes(tied)
    assert a.category("diagnosis") == b.category("diagnosis")
    assert a.category("diagnosis")[0] == "A"  # lexicographic tie-break


def test_event_frequency_and_agreement():
    real = [_frag(["A", "A", "B", "C"])]
    sim = [_frag(["A", "A", "A", "A", "B", "B", "C", "C"])]
    codes = ["A", "B", "C"]
    f_real = event_frequency(real, "diagnosis", codes)
    np.testing.assert_allclose(f_real, [0.5, 0.25, 0.25])
    assert f_real.sum() <= 1.0
    report = agreement(f_real, event_frequency(sim, "diagnosis", codes))
    assert report["r"] == pytest.approx(
        oracles.pearson_r(list(f_real), list(event_frequency(sim, "diagnosis", codes))), abs=1e-12
    )
    identical = agreement(f_real, f_real)
    assert identical["r"] == pytest.approx(1.0)


def test_pearson_matches_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(3, 30))
        x = rng.normal(size=n)
        y = rng.normal(size=n) + 0.5 * x
        assert pearson_r(x, y) == pytest.approx(oracles.pearson_r(list(x), list(y)), abs=1e-9)


def test_pearson_needs_two_points():
    with pytest.raises(EvaluationError):
        pearson_r(np.array([1.0]), np.array([2.0]))


def test_per_timeline_rate_ignores_multiplicity():
    futures = [_frag(["A", "A", "A"]), _frag(["B"]), _frag(["A"]), *[_frag(["C"]) for _ in range(7)]]
    rates = per_timeline_rate(futures, "diagnosis", ["A", "B", "C"])
    np.testing.assert_allclose(rates, [0.2, 0.1, 0.7])
    with pytest.raises(EvaluationError):
        per_timeline_rate([], "diagnosis", ["A"])


def _lab_frag(pairs, minutes=0):
    """pairs: list of (minute, code, value)"""
    out = []
    for minute, code, value in pairs:
        out.append(_timed(minute, RT_LAB_TEST, token=code))
        out.append(_timed(minute, "lab_result", value=value, lab_code=code))
    return out


def test_cooccurrence_hand_count():
    futures = [
        _lab_frag([(0, "HB", "13"), (0, "NA", "140")]),
        _lab_frag([(0, "HB", "12")]),
        _lab_frag([(0, "NA", "141")]),
        _lab_frag([(0, "HB", "11"), (5, "NA", "138")]),
    ]
    m = cooccurrence(futures, ["HB", "NA"])
    np.testing.assert_allclose(m, [[0.75, 0.5], [0.5, 0.75]])
    assert np.allclose(m, m.T)


def test_cooccurrence_always_together():
    futures = [_lab_frag([(0, "HB", "13"), (0, "NA", "140")]) for _ in range(5)]
    m = cooccurrence(futures, ["HB", "NA"])
    np.testing.assert_allclose(m, 1.0)


def test_lab_correlations_same_specimen_pairing():
    rng = np.random.default_rng(1)
    futures = []
    for _ in range(60):
        x = rng.normal(10, 2)
        futures.append(_lab_frag([(100, "X", repr(x)), (100, "Y", repr(2 * x))]))
    m = lab_correlations(futures, ["X", "Y"], min_pair_fraction=0.0)
    assert m[0, 1] == pytest.approx(1.0, abs=1e-12)  # y = 2x exactly


def test_lab_correlations_rare_pair_blank():
    futures = [
        *[_lab_frag([(0, "X", "1.0")]) for _ in range(400)],
        _lab_frag([(0, "X", "1.0"), (0, "Y", "2.0")]),
        _lab_frag([(0, "X", "2.0"), (0, "Y", "4.0")]),
        _lab_frag([(0, "X", "3.0"), (0, "Y", "6.0")]),
    ]
    m = lab_correlations(futures, ["X", "Y"], min_pair_fraction=0.005)
    # 3 pairs < 0.5% of ~406 orders... threshold is max(2, ceil(0.005*406)) = 3 -> kept
    assert m[0, 1] == pytest.approx(1.0)
    m2 = lab_correlations(futures, ["X", "Y"], min_pair_fraction=0.02)
    assert math.isnan(m2[0, 1])


def test_mch_identity_correlation_on_synth_world():
    world = SynthWorld()
    rows, _ = world.generate_corpus(80, rng=3)
    futures = []
    for recs in group_by_patient(rows).values():
        timeline = build_timeline(recs)
        futures.append(walk_entries(timeline.entries))
    m = lab_correlations(futures, ["LHB", "LRBC", "LMCH"], min_pair_fraction=0.0)
    implied = []
    generated = []
    for timed in futures:
        by_minute = {}
        for t in timed:
            if t.entry.record_type == "lab_result" and t.entry.kind == "numeric":
                by_minute.setdefault(t.structure_minutes, {})[t.lab_code] = float(t.entry.value)
        for values in by_minute.values():
            if {"LHB", "LRBC", "LMCH"} <= values.keys():
                implied.append(values["LHB"] / values["LRBC"] * 1000)
                generated.append(values["LMCH"])
    assert pearson_r(np.asarray(implied), np.asarray(generated)) > 0.999
    assert not math.isnan(m[0, 2])


def test_ks_statistic_matches_bruteforce():
    rng = np.random.default_rng(2)
    for _ in range(300):
        a = rng.normal(size=int(rng.integers(2, 40)))
        b = rng.normal(loc=rng.normal(), size=int(rng.integers(2, 40)))
        assert ks_statistic(a, b) == pytest.approx(oracles.ks_statistic(list(a), list(b)), abs=1e-12)


def test_ks_extremes():
    assert ks_statistic(np.arange(10), np.arange(10)) == 0.0
    assert ks_statistic(np.zeros(5), np.ones(5)) == 1.0


def test_temporal_dynamics_counts():
    futures = [
        _lab_frag([(0, "X", "1"), (0, "Y", "2"), (10, "X", "3")]),
        _lab_frag([(5, "X", "1")]),
    ]
    d = temporal_dynamics(futures)
    # first fragment: 6 events + 2 time points; second: 2 events + 1
    np.testing.assert_array_equal(d["lengths"], [8, 3])
    np.testing.assert_array_equal(d["temporal_entries"], [2, 1])
    assert ks_statistic(d["lengths"], d["lengths"]) == 0.0


def test_coverage_curve_self_consistency():
    rng = np.random.default_rng(3)
    n_prompts, n_sims = 400, 200
    sims = [rng.poisson(30, size=n_sims) for _ in range(n_prompts)]
    real = np.asarray([rng.poisson(30) for _ in range(n_prompts)])
    curve = coverage_curve(real, sims, n_bootstrap=100, rng=rng)
    assert curve.mae <= 0.05
    assert curve.levels[0] == 0 and curve.levels[-1] == 100
    assert (np.diff(curve.empirical) >= -1e-12).all()  # monotone in nominal level
    assert curve.empirical[-1] >= 0.95  # min..max interval catches nearly all


def test_coverage_nominal_100_catches_in_range_reals():
    sims = [np.asarray([1, 2, 3, 4, 5])] * 3
    real = np.asarray([1, 5, 3])
    curve = coverage_curve(real, sims, n_bootstrap=0)
    assert curve.empirical[-1] == 1.0


def test_observed_expected_direct_sum():
    outcomes = np.asarray([1, 0, 1])
    preds = np.asarray([0.5, 0.5, 0.5])
    assert observed_expected(outcomes, preds) == pytest.approx(2 / 1.5)
    assert observed_expected(outcomes, preds) == pytest.approx(
        oracles.observed_expected([1, 0, 1], [0.5, 0.5, 0.5])
    )


def test_auroc_separable_and_oracle():
    outcomes = np.asarray([0, 0, 1, 1])
    scores = np.asarray([0.1, 0.2, 0.8, 0.9])
    assert auroc(outcomes, scores) == 1.0
    rng = np.random.default_rng(4)
    for _ in range(300):
        n = int(rng.integers(4, 40))
        y = rng.integers(0, 2, size=n)
        if y.sum() in (0, n):
            continue
        s = np.round(rng.random(size=n), 1)  # coarse scores force ties
        assert auroc(y, s) == pytest.approx(
            oracles.auroc_pairwise(list(y), list(s)), abs=1e-9
        )


def test_auprc_step_integration_oracle():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = int(rng.integers(4, 40))
        y = rng.integers(0, 2, size=n)
        if y.sum() in (0, n):
            continue
        s = np.round(rng.random(size=n), 1)
        assert auprc(y, s) == pytest.approx(
            oracles.auprc_step(list(y), list(s)), abs=1e-9
        )


def test_loess_reproduces_a_line():
    x = np.linspace(0, 1, 50)
    y = 2.0 * x + 0.25
    grid, smoothed = loess_curve(x, y, span=0.2)
    np.testing.assert_allclose(smoothed, 2.0 * grid + 0.25, atol=1e-9)


def test_calibration_report():
    rng = np.random.default_rng(6)
    preds = rng.uniform(0, 1, size=600)
    outcomes = (rng.random(600) < preds).astype(float)
    report = calibration(outcomes, preds, n_bootstrap=200, rng=rng)
    assert 0.85 < report.oe_ratio < 1.15
    assert report.oe_ci[0] < report.oe_ratio < report.oe_ci[1]
    assert 0.5 < report.auroc <= 1.0
    assert report.bin_counts.sum() == 600
    # well-calibrated data: bins track the diagonal loosely
    mask = report.bin_counts > 20
    assert np.nanmax(np.abs(report.bin_predicted[mask] - report.bin_observed[mask])) < 0.2


def test_calibration_single_class_is_nan():
    preds = np.asarray([0.2, 0.4, 0.6])
    outcomes = np.zeros(3)
    report = calibration(outcomes, preds, n_bootstrap=10)
    assert math.isnan(report.auroc) and math.isnan(report.auprc)


def test_baseline_sampler():
    rng = np.random.default_rng(7)
    reference = list(range(100))
    whole = baseline_sample(reference, 100, rng)
    assert sorted(whole) == reference
    a = baseline_sample(reference, 10, np.random.default_rng(1))
    b = baseline_sample(reference, 10, np.random.default_rng(1))
    assert a == b
    with pytest.raises(EvaluationError):
        baseline_sample(reference, 101, rng)


def test_baseline_prevalence_converges():
    rng = np.random.default_rng(8)
    reference = rng.normal(size=20_000)
    draw = np.asarray(baseline_sample(list(reference), 5000, rng))
    assert ks_statistic(reference, draw) <= 0.05
