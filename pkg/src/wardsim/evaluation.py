"""End-to-end evaluation: prompt sampling, simulation, fidelity, calibration.

The protocol mirrors the evaluation design: prompts are cut daily at noon,
each prompt is simulated ``n_sim`` times at the longest horizon, and every
shorter horizon reuses the same simulations through time filtering.
Fidelity metrics compare the set of real futures against simulated sets
assembled by drawing one simulation per prompt, repeated ``repeats`` times
to yield 95% intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decoding import DecodeEngine, GenerationConfig
from .metrics import (
    CalibrationReport,
    CoverageCurve,
    agreement,
    calibration,
    cooccurrence,
    coverage_curve,
    event_frequency,
    fragment_length,
    ks_statistic,
    lab_correlations,
    major_codes,
    numeric_values,
    pearson_r,
    per_timeline_rate,
    temporal_dynamics,
)
from .montecarlo import (
    EventSpec,
    PredictionRecord,
    PromptSample,
    TimedEntry,
    detect_event,
    sample_prompts,
    walk_entries,
)
from .timeline import PatientTimeline

MINUTES_PER_DAY = 1440


@dataclass
class PromptRun:
    sample: PromptSample
    sim_futures: list[list[TimedEntry]]
    truncated: list[bool]


@dataclass
class FidelitySummary:
    """Per-repeat metric distributions summarized as mean and 95% interval."""

    prevalence_r: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    per_timeline_r: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    cooccurrence_r: tuple[float, float, float] | None = None
    correlation_r: tuple[float, float, float] | None = None
    median_ks: tuple[float, float, float] | None = None
    length_ks: tuple[float, float, float] | None = None
    temporal_ks: tuple[float, float, float] | None = None


@dataclass
class EvaluationResult:
    horizons_days: list[int]
    n_prompts: int
    n_sim: int
    records: dict[tuple[str, int], list[PredictionRecord]]
    calibrations: dict[tuple[str, int], CalibrationReport]
    coverage: dict[int, CoverageCurve]
    fidelity: dict[int, FidelitySummary]
    real_lengths: dict[int, np.ndarray]
    sim_lengths: dict[int, list[np.ndarray]]
    samples: list[PromptSample]
    truncated_total: int = 0


def _interval(values: list[float]) -> tuple[float, float, float]:
    arr = np.asarray([v for v in values if not math.isnan(v)])
    if len(arr) == 0:
        return (math.nan, math.nan, math.nan)
    return (float(arr.mean()), float(np.percentile(arr, 2.5)), float(np.percentile(arr, 97.5)))


def _within(timed: list[TimedEntry], cut: int, horizon_minutes: int) -> list[TimedEntry]:
    return [t for t in timed if cut < t.minutes <= cut + horizon_minutes]


def run_prompts(
    engine: DecodeEngine,
    samples: list[PromptSample],
    n_sim: int,
    max_horizon_days: int,
    seed: int,
    max_steps: int = 7000,
    chunk_size: int = 64,
    workers: int = 1,
    stop_tokens: tuple[str, ...] = (),
    log=None,
) -> list[PromptRun]:
    """Simulate every prompt once at the longest horizon."""
    runs = []
    for i, sample in enumerate(samples):
        config = GenerationConfig(
            horizon_minutes=max_horizon_days * MINUTES_PER_DAY,
            n_sim=n_sim,
            seed=seed + i,
            max_steps=max_steps,
            chunk_size=chunk_size,
            workers=workers,
            stop_tokens=stop_tokens,
        )
        result = engine.simulate_many(sample.prompt, config, cut_minutes=sample.cut_minutes)
        sim_futures = [
            walk_entries(t.generated, start_minutes=sample.cut_minutes) for t in result.timelines
        ]
        runs.append(
            PromptRun(
                sample=sample,
                sim_futures=sim_futures,
                truncated=[t.info.truncated for t in result.timelines],
            )
        )
        if log and (i + 1) % 20 == 0:
            log(f"simulated {i + 1}/{len(samples)} prompts")
    return runs


def fidelity_at_horizon(
    runs: list[PromptRun],
    horizon_days: int,
    repeats: int,
    rng: np.random.Generator,
    max_major_tests: int = 40,
) -> FidelitySummary:
    """Real-vs-simulated fidelity with one-sim-per-prompt repeat sets."""
    h = horizon_days * MINUTES_PER_DAY
    real_sets = [_within(r.sample.future, r.sample.cut_minutes, h) for r in runs]
    sims_per_prompt = [
        [_within(f, r.sample.cut_minutes, h) for f in r.sim_futures] for r in runs
    ]
    major = major_codes(real_sets)
    summary = FidelitySummary()

    majors_lab = major.category("lab_test")[:max_major_tests]
    real_freq = {
        cat: event_frequency(real_sets, cat, major.category(cat))
        for cat in ("diagnosis", "medication", "lab_test")
    }
    real_rate = {
        cat: per_timeline_rate(real_sets, cat, major.category(cat))
        for cat in ("diagnosis", "medication", "lab_test")
    }
    real_cooc = cooccurrence(real_sets, majors_lab)
    real_corr = lab_correlations(real_sets, majors_lab)
    real_dyn = temporal_dynamics(real_sets)
    real_values = {t: numeric_values(real_sets, t) for t in majors_lab}

    collected: dict[str, list[float]] = {
        f"prev_{cat}": [] for cat in ("diagnosis", "medication", "lab_test")
    }
    collected.update({f"rate_{cat}": [] for cat in ("diagnosis", "medication", "lab_test")})
    collected.update({"cooc": [], "corr": [], "ks": [], "len_ks": [], "temp_ks": []})

    for _ in range(repeats):
        sim_set = [sims[int(rng.integers(0, len(sims)))] for sims in sims_per_prompt]
        for cat in ("diagnosis", "medication", "lab_test"):
            codes = major.category(cat)
            if len(codes) >= 2:
                freq = event_frequency(sim_set, cat, codes)
                collected[f"prev_{cat}"].append(pearson_r(real_freq[cat], freq))
                rate = per_timeline_rate(sim_set, cat, codes)
                collected[f"rate_{cat}"].append(pearson_r(real_rate[cat], rate))
        if len(majors_lab) >= 2:
            cooc = cooccurrence(sim_set, majors_lab)
            triu = np.triu_indices(len(majors_lab))
            collected["cooc"].append(pearson_r(real_cooc[triu], cooc[triu]))
            corr = lab_correlations(sim_set, majors_lab)
            both = ~np.isnan(real_corr) & ~np.isnan(corr)
            pairs = np.triu_indices(len(majors_lab), k=1)
            mask = both[pairs]
            if mask.sum() >= 2:
                collected["corr"].append(
                    pearson_r(real_corr[pairs][mask], corr[pairs][mask])
                )
        ks_values = []
        for t in majors_lab:
            rv = real_values[t]
            sv = numeric_values(sim_set, t)
            if len(rv) >= 5 and len(sv) >= 5:
                ks_values.append(ks_statistic(rv, sv))
        if ks_values:
            collected["ks"].append(float(np.median(ks_values)))
        sim_dyn = temporal_dynamics(sim_set)
        collected["len_ks"].append(ks_statistic(real_dyn["lengths"], sim_dyn["lengths"]))
        collected["temp_ks"].append(
            ks_statistic(real_dyn["temporal_entries"], sim_dyn["temporal_entries"])
        )

    for cat in ("diagnosis", "medication", "lab_test"):
        if collected[f"prev_{cat}"]:
            summary.prevalence_r[cat] = _interval(collected[f"prev_{cat}"])
            summary.per_timeline_r[cat] = _interval(collected[f"rate_{cat}"])
    if collected["cooc"]:
        summary.cooccurrence_r = _interval(collected["cooc"])
    if collected["corr"]:
        summary.correlation_r = _interval(collected["corr"])
    if collected["ks"]:
        summary.median_ks = _interval(collected["ks"])
    summary.length_ks = _interval(collected["len_ks"])
    summary.temporal_ks = _interval(collected["temp_ks"])
    return summary


def evaluate_runs(
    runs: list[PromptRun],
    events: list[EventSpec],
    horizons_days: list[int],
    repeats: int = 256,
    seed: int = 0,
    fidelity_horizons: list[int] | None = None,
) -> EvaluationResult:
    """Prediction records, calibration, coverage, and fidelity summaries."""
    rng = np.random.default_rng(seed)
    records: dict[tuple[str, int], list[PredictionRecord]] = {}
    calibrations = {}
    coverage = {}
    fidelity = {}
    real_lengths = {}
    sim_lengths = {}

    for h_days in horizons_days:
        h = h_days * MINUTES_PER_DAY
        for spec in events:
            key = (spec.name, h_days)
            records[key] = []
            for run in runs:
                cut = run.sample.cut_minutes
                hits = sum(
                    detect_event(f, spec, h, cut) for f in run.sim_futures
                )
                outcome = detect_event(run.sample.future, spec, h, cut)
                records[key].append(
                    PredictionRecord(
                        prompt_id=f"{run.sample.patient_id}/adm{run.sample.admission_index}/day{run.sample.day_index}",
                        event=spec.name,
                        horizon_days=h_days,
                        p_hat=hits / len(run.sim_futures),
                        outcome=outcome,
                        n_sim=len(run.sim_futures),
                        n_event=hits,
                        n_truncated=sum(run.truncated),
                    )
                )
            outcomes = np.asarray([r.outcome for r in records[key]], dtype=float)
            preds = np.asarray([r.p_hat for r in records[key]])
            if outcomes.sum() > 0 and outcomes.sum() < len(outcomes):
                calibrations[key] = calibration(outcomes, preds, rng=rng, n_bootstrap=200)

        real_lengths[h_days] = np.asarray(
            [run.sample.future_length(h) for run in runs], dtype=np.float64
        )
        sim_lengths[h_days] = [
            np.asarray(
                [fragment_length(_within(f, run.sample.cut_minutes, h)) for f in run.sim_futures],
                dtype=np.float64,
            )
            for run in runs
        ]
        coverage[h_days] = coverage_curve(
            real_lengths[h_days], sim_lengths[h_days], n_bootstrap=200, rng=rng
        )
        if fidelity_horizons is None or h_days in fidelity_horizons:
            fidelity[h_days] = fidelity_at_horizon(runs, h_days, repeats, rng)

    return EvaluationResult(
        horizons_days=horizons_days,
        n_prompts=len(runs),
        n_sim=len(runs[0].sim_futures) if runs else 0,
        records=records,
        calibrations=calibrations,
        coverage=coverage,
        fidelity=fidelity,
        real_lengths=real_lengths,
        sim_lengths=sim_lengths,
        samples=[r.sample for r in runs],
        truncated_total=sum(sum(r.truncated) for r in runs),
    )


def select_prompts(
    timelines: list[PatientTimeline],
    max_prompts: int | None,
    rng: np.random.Generator,
    max_days: int = 30,
) -> list[PromptSample]:
    samples = sample_prompts(timelines, max_days=max_days)
    if max_prompts is not None and len(samples) > max_prompts:
        idx = sorted(rng.choice(len(samples), size=max_prompts, replace=False))
        samples = [samples[i] for i in idx]
    return samples
