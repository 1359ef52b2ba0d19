"""Dry run of the end-to-end calibration experiment (acceptance criterion 8)."""

import time

import numpy as np
import torch

from wardsim.decoding import DecodeEngine
from wardsim.evaluation import evaluate_runs, run_prompts, select_prompts
from wardsim.metrics import auroc
from wardsim.model import ModelConfig, TimelineModel, init_parameters
from wardsim.montecarlo import EventSpec
from wardsim.numcodec import build_logit_grid, collect_numeric_observations, fit_percentile_tables
from wardsim.records import group_by_patient
from wardsim.synthworld import SynthWorld, last_marker_state
from wardsim.timeline import build_timeline
from wardsim.training import TrainingSchedule, train
from wardsim.vocab import build_vocabulary, tokenize_timeline

torch.set_num_threads(max(1, torch.get_num_threads()))
print("threads:", torch.get_num_threads(), flush=True)

t0 = time.monotonic()
world = SynthWorld()
rows_train, _ = world.generate_corpus(5000, rng=1)
rows_test, _ = world.generate_corpus(400, rng=2)
print(f"corpus: {len(rows_train)} train rows ({time.monotonic()-t0:.0f}s)", flush=True)

train_timelines = [build_timeline(r, append_eot=True) for r in group_by_patient(rows_train).values()]
test_timelines = [build_timeline(r) for r in group_by_patient(rows_test).values()]
vocab = build_vocabulary(train_timelines, n_bins=601)
ptable = fit_percentile_tables(collect_numeric_observations(train_timelines), build_logit_grid(601, 1e-7))
print(f"vocab {len(vocab)} groups {vocab.group_sizes()} ({time.monotonic()-t0:.0f}s)", flush=True)

tokenized = [tokenize_timeline(t, vocab, ptable) for t in train_timelines]
lengths = [len(t) for t in tokenized]
print(f"entries/timeline: median {int(np.median(lengths))} p95 {int(np.percentile(lengths, 95))} max {max(lengths)}", flush=True)

val_n = 250
model = TimelineModel(ModelConfig.desk_scale(vocab_size=len(vocab), n_subtokens=vocab.n_subtokens))
init_parameters(model, seed=0)
schedule = TrainingSchedule(max_epochs=12, patience=4)
history = train(model, tokenized[val_n:], tokenized[:val_n], schedule, seed=0,
                log=lambda m: print(f"  {m} ({time.monotonic()-t0:.0f}s)", flush=True))
print(f"training done ({time.monotonic()-t0:.0f}s)", flush=True)

engine = DecodeEngine(model, vocab, ptable)
events = [
    EventSpec(name="death", kind="token-match", token="[DSC_EXP]"),
    EventSpec(name="discharge", kind="token-match", token="[DSC]"),
    EventSpec(name="hyponatremia", kind="lab-threshold", codes=frozenset({"LNA"}), threshold=135.0, unit="mmol/L"),
    EventSpec(name="hypokalemia", kind="lab-threshold", codes=frozenset({"LK"}), threshold=3.5, unit="mmol/L"),
    EventSpec(name="neutropenia", kind="lab-threshold", codes=frozenset({"LANC"}), threshold=500.0, unit="/uL"),
    EventSpec(name="anti_mrsa", kind="code-prefix", prefixes=("J01XX08", "J01XX09", "J01XA"), record_types=("medication",)),
    EventSpec(name="prbc", kind="code-prefix", prefixes=("B05AX01",), record_types=("medication",)),
    EventSpec(name="pltc", kind="code-prefix", prefixes=("B05AX02",), record_types=("medication",)),
]

rng = np.random.default_rng(7)
samples = select_prompts(test_timelines, 200, rng)
print(f"{len(samples)} prompts", flush=True)
runs = run_prompts(engine, samples, n_sim=128, max_horizon_days=7, seed=100,
                   chunk_size=64, log=lambda m: print(f"  {m} ({time.monotonic()-t0:.0f}s)", flush=True))
result = evaluate_runs(runs, events, [1, 2, 3, 7], repeats=32, seed=0, fidelity_horizons=[7])
print(f"simulation+eval done ({time.monotonic()-t0:.0f}s)", flush=True)

print("\n=== calibration vs analytic ===")
for (event_name, h), records in sorted(result.records.items()):
    spec = next(e for e in events if e.name == event_name)
    analytic = []
    for run, rec in zip(runs, records):
        state = last_marker_state(run.sample.prompt.entries)
        analytic.append(world.analytic_event_prob(spec, h, state))
    analytic = np.asarray(analytic)
    p_hat = np.asarray([r.p_hat for r in records])
    outcomes = np.asarray([float(r.outcome) for r in records])
    mean_p = analytic.mean()
    mae = np.mean(np.abs(p_hat - analytic))
    oe = outcomes.sum() / p_hat.sum() if p_hat.sum() > 0 else float("nan")
    oe_analytic = outcomes.sum() / analytic.sum()
    try:
        auc = auroc(outcomes, p_hat)
    except Exception:
        auc = float("nan")
    bayes_auc = auroc(outcomes, analytic) if 0 < outcomes.sum() < len(outcomes) else float("nan")
    print(f"{event_name:12s} h={h}: mean_p={mean_p:.3f} mae={mae:.4f} O/E={oe:.3f} "
          f"(analytic O/E={oe_analytic:.3f}) AUROC={auc:.3f} (bayes {bayes_auc:.3f})", flush=True)

print("\n=== fidelity (7d) ===")
fid = result.fidelity[7]
print("prevalence_r:", fid.prevalence_r)
print("cooccurrence_r:", fid.cooccurrence_r, "correlation_r:", fid.correlation_r)
print("median_ks:", fid.median_ks, "length_ks:", fid.length_ks)
print("coverage mae:", {h: c.mae for h, c in result.coverage.items()})
print(f"truncated: {result.truncated_total}")
print(f"TOTAL {time.monotonic()-t0:.0f}s")
