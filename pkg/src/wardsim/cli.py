"""Umbrella command line: synth -> build-vocab -> fit-percentiles -> train ->
generate / predict / evaluate / serve."""

from __future__ import annotations

import json
import sys
from functools import wraps
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .cohort import split_cohort
from .errors import WardsimError
from .manifest import RunManifest, hash_content
from .records import group_by_patient, read_records, write_records
from .timeline import build_timeline, to_tabular

DEFAULT_HORIZONS = [1, 7]


def _fail(error: str, detail: str = "", code: int = 2):
    click.echo(json.dumps({"error": error, "detail": detail}), err=True)
    sys.exit(code)


def wardsim_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except WardsimError as exc:
            _fail(type(exc).__name__, str(exc))

    return wrapper


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}


def _load_timelines(data: str, append_eot: bool = False, delimiter: str = "\t"):
    records = read_records(data, delimiter=delimiter)
    timelines = []
    for patient_records in group_by_patient(records).values():
        timelines.append(build_timeline(patient_records, append_eot=append_eot))
    return timelines


def _model_config(preset: str, vocab, overrides: dict):
    from .model import ModelConfig

    factory = {
        "desk": ModelConfig.desk_scale,
        "paper": ModelConfig.paper_scale,
        "tiny": ModelConfig.tiny,
    }.get(preset)
    if factory is None:
        _fail("ConfigError", f"unknown preset {preset!r}")
    kw = dict(vocab_size=len(vocab), n_subtokens=vocab.n_subtokens)
    config = factory(**kw)
    for key, value in (overrides or {}).items():
        if not hasattr(config, key):
            _fail("ConfigError", f"unknown model option {key!r}")
        setattr(config, key, value)
    return config


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML run configuration.")
@click.pass_context
def main(ctx, config_path):
    """Patient-timeline simulation engine."""
    ctx.obj = _load_config(config_path)


@main.command()
@click.option("--patients", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.pass_obj
@wardsim_errors
def synth(config, patients, seed, out):
    """Generate a synthetic EHR corpus with known event probabilities."""
    from .synthworld import SynthWorld, SynthWorldConfig

    world_config = SynthWorldConfig(**config.get("world", {})) if config.get("world") else SynthWorldConfig()
    world = SynthWorld(world_config)
    manifest = RunManifest.start("synth", seed=seed, config_hash=hash_content(config.get("world", {})))
    rows, cohort = world.generate_corpus(patients, rng=seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(rows, out_dir / "records.tsv")
    manifest.counts = {"patients": patients, "records": len(rows)}
    manifest.finish().write(out_dir)
    click.echo(json.dumps({"records": len(rows), "patients": patients, "out": str(out_dir)}))


@main.command("build-vocab")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--n-bins", type=int, default=601, show_default=True)
@click.pass_obj
@wardsim_errors
def build_vocab(config, data, out, n_bins):
    """Build the unified vocabulary from a training corpus."""
    from .timecodec import TimeBinScheme, TimeCodec
    from .vocab import build_vocabulary, save_vocabulary

    scheme = TimeBinScheme(**config.get("time_scheme", {})) if config.get("time_scheme") else TimeBinScheme()
    manifest = RunManifest.start("build-vocab")
    timelines = _load_timelines(data, append_eot=True)
    vocab = build_vocabulary(timelines, n_bins=n_bins, timecodec=TimeCodec(scheme))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_vocabulary(vocab, out_dir / "vocab.tsv")
    manifest.vocab_hash = vocab.content_hash()
    manifest.counts = {"timelines": len(timelines), **vocab.group_sizes()}
    manifest.finish().write(out_dir)
    click.echo(json.dumps({"vocab_size": len(vocab), "groups": vocab.group_sizes()}))


@main.command("fit-percentiles")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--eps", type=float, default=1e-7, show_default=True)
@wardsim_errors
def fit_percentiles(data, vocab_path, out, eps):
    """Fit per-(test, unit) percentile tables for the numeric codec."""
    from .numcodec import (
        build_logit_grid,
        collect_numeric_observations,
        fit_percentile_tables,
        save_percentile_tables,
    )
    from .vocab import load_vocabulary

    vocab = load_vocabulary(vocab_path)
    timelines = _load_timelines(data)
    grid = build_logit_grid(vocab.n_bins, eps)
    table = fit_percentile_tables(collect_numeric_observations(timelines), grid)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_percentile_tables(table, out_dir / "percentiles.tsv")
    manifest = RunManifest.start("fit-percentiles")
    manifest.counts = {"pairs": len(table.values)}
    manifest.finish().write(out_dir)
    click.echo(
        json.dumps(
            {"pairs": len(table.values), "constant_pairs": len(table.constant_pairs)}
        )
    )


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--model-dir", "model_dir", type=click.Path(), required=True,
              help="Directory holding vocab.tsv/percentiles.tsv; receives checkpoint.pt.")
@click.option("--preset", type=click.Choice(["desk", "paper", "tiny"]), default="desk", show_default=True)
@click.option("--epochs", type=int, default=None, help="Override max epochs.")
@click.option("--seed", type=int, default=0)
@click.option("--test-fraction", type=float, default=0.0, show_default=True)
@click.option("--val-fraction", type=float, default=0.05, show_default=True)
@click.pass_obj
@wardsim_errors
def train(config, data, model_dir, preset, epochs, seed, test_fraction, val_fraction):
    """Train the timeline model on a cleaned corpus."""
    import torch

    from .model import TimelineModel, init_parameters
    from .numcodec import load_percentile_tables
    from .reporting import plot_training_history
    from .training import TrainingSchedule, save_checkpoint
    from .training import train as train_loop
    from .vocab import load_vocabulary, tokenize_timeline

    model_dir = Path(model_dir)
    vocab = load_vocabulary(model_dir / "vocab.tsv")
    ptable = load_percentile_tables(model_dir / "percentiles.tsv")
    records = read_records(data)
    patients = group_by_patient(records)
    split, filtered = split_cohort(
        patients, test_fraction=test_fraction, val_fraction=val_fraction, seed=seed
    )
    train_tok = [
        tokenize_timeline(build_timeline(filtered[pid], append_eot=True), vocab, ptable)
        for pid in split.train
    ]
    val_tok = [
        tokenize_timeline(build_timeline(filtered[pid], append_eot=True), vocab, ptable)
        for pid in split.val
    ]

    schedule_kw = dict(config.get("schedule", {}))
    if epochs is not None:
        schedule_kw["max_epochs"] = epochs
    schedule = TrainingSchedule(**schedule_kw)
    model = TimelineModel(_model_config(preset, vocab, config.get("model", {})))
    init_parameters(model, seed=seed)
    torch.set_num_threads(int(config.get("torch_threads", torch.get_num_threads())))

    manifest = RunManifest.start(
        "train", seed=seed, vocab_hash=vocab.content_hash(),
        config_hash=hash_content(model.config.to_dict()),
    )
    history = train_loop(
        model,
        train_tok,
        val_tok,
        schedule,
        seed=seed,
        vocab_hash=vocab.content_hash(),
        log=lambda msg: click.echo(msg, err=True),
    )
    save_checkpoint(model_dir / "checkpoint.pt", model, vocab.content_hash(), history)
    plot_training_history(history, model_dir)
    manifest.counts = {
        "train_patients": len(train_tok),
        "val_patients": len(val_tok),
        "epochs": len(history.epochs),
        "best_epoch": history.best_epoch,
        "stopped_early": history.stopped_early,
    }
    manifest.checkpoint_id = str(model_dir / "checkpoint.pt")
    manifest.finish().write(model_dir)
    click.echo(
        json.dumps(
            {
                "epochs": len(history.epochs),
                "best_val_loss": history.best_val_loss,
                "stopped_early": history.stopped_early,
            }
        )
    )


def _load_engine(model_dir: str):
    from .api import ServiceBundle

    return ServiceBundle.load(model_dir)


def _first_timeline(path: str):
    timelines = _load_timelines(path)
    if len(timelines) != 1:
        _fail("ConfigError", f"prompt file must hold exactly one patient, got {len(timelines)}")
    return timelines[0]


@main.command()
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--prompt", type=click.Path(exists=True), required=True)
@click.option("--horizon-days", type=float, default=7.0, show_default=True)
@click.option("--n-sim", type=int, default=256, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.option("--stop-on-discharge", is_flag=True, default=False)
@wardsim_errors
def generate(model_dir, prompt, horizon_days, n_sim, seed, out, stop_on_discharge):
    """Simulate future timelines for one prompt; writes tabular files."""
    from .decoding import GenerationConfig

    bundle = _load_engine(model_dir)
    timeline = _first_timeline(prompt)
    config = GenerationConfig(
        horizon_minutes=int(horizon_days * 1440),
        n_sim=n_sim,
        seed=seed,
        stop_tokens=("[DSC]",) if stop_on_discharge else (),
    )
    manifest = RunManifest.start(
        "generate", seed=seed, vocab_hash=bundle.vocab_hash, config_hash=bundle.config_hash,
        checkpoint_id=bundle.checkpoint_id,
    )
    result = bundle.engine.simulate_many(timeline, config)
    out_dir = Path(out)
    sims_dir = out_dir / "sims"
    sims_dir.mkdir(parents=True, exist_ok=True)
    for i, gen in enumerate(result.timelines):
        write_records(to_tabular(gen.full_timeline()), sims_dir / f"sim_{i:04d}.tsv")
    manifest.counts = {
        "n_sim": n_sim,
        "truncated": result.n_truncated,
        "mean_generated_entries": float(np.mean([len(t.generated) for t in result.timelines])),
        "wall_seconds": result.wall_seconds,
    }
    manifest.finish().write(out_dir)
    click.echo(json.dumps(manifest.counts))


@main.command()
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--prompt", type=click.Path(exists=True), required=True)
@click.option("--events", "events_path", type=click.Path(exists=True), required=True)
@click.option("--horizon-days", type=float, default=7.0, show_default=True)
@click.option("--n-sim", type=int, default=256, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@wardsim_errors
def predict(model_dir, prompt, events_path, horizon_days, n_sim, seed, out):
    """Monte Carlo event probabilities for one prompt."""
    from .decoding import GenerationConfig
    from .montecarlo import binomial_interval, detect_event, load_event_specs, walk_entries
    from .reporting import write_table

    bundle = _load_engine(model_dir)
    timeline = _first_timeline(prompt)
    specs = load_event_specs(events_path)
    config = GenerationConfig(horizon_minutes=int(horizon_days * 1440), n_sim=n_sim, seed=seed)
    manifest = RunManifest.start(
        "predict", seed=seed, vocab_hash=bundle.vocab_hash, config_hash=bundle.config_hash,
        checkpoint_id=bundle.checkpoint_id,
    )
    result = bundle.engine.simulate_many(timeline, config)
    horizon = int(horizon_days * 1440)
    rows = []
    estimates = {}
    for spec in specs:
        hits = sum(
            detect_event(
                walk_entries(t.generated, start_minutes=result.cut_minutes),
                spec,
                horizon,
                result.cut_minutes,
            )
            for t in result.timelines
        )
        lo, hi = binomial_interval(hits, n_sim)
        estimates[spec.name] = {"p_hat": hits / n_sim, "ci95": [lo, hi], "n_event": hits}
        rows.append([spec.name, f"{hits / n_sim:.6f}", f"{lo:.6f}", f"{hi:.6f}", hits, n_sim])
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_table(out_dir / "predictions.tsv", ["event", "p_hat", "ci_low", "ci_high", "n_event", "n_sim"], rows)
    (out_dir / "predictions.json").write_text(json.dumps(estimates, indent=2) + "\n", encoding="utf-8")
    manifest.counts = {"n_sim": n_sim, "truncated": result.n_truncated, "events": len(specs)}
    manifest.finish().write(out_dir)
    click.echo(json.dumps(estimates))


@main.command()
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--real", "real_path", type=click.Path(exists=True), required=True,
              help="Held-out tabular timelines providing prompts and real futures.")
@click.option("--events", "events_path", type=click.Path(exists=True), required=True)
@click.option("--horizon-days", "horizons", type=int, multiple=True, default=(1, 7), show_default=True)
@click.option("--n-sim", type=int, default=256, show_default=True)
@click.option("--max-prompts", type=int, default=None)
@click.option("--repeats", type=int, default=256, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@wardsim_errors
def evaluate(model_dir, real_path, events_path, horizons, n_sim, max_prompts, repeats, seed, out):
    """Full fidelity/calibration battery; writes tables and figures."""
    from .evaluation import evaluate_runs, run_prompts, select_prompts
    from .montecarlo import load_event_specs
    from .reporting import (
        plot_calibration,
        plot_coverage,
        plot_length_distributions,
        write_table,
    )
    from .metrics import temporal_dynamics

    bundle = _load_engine(model_dir)
    specs = load_event_specs(events_path)
    timelines = _load_timelines(real_path)
    rng = np.random.default_rng(seed)
    manifest = RunManifest.start(
        "evaluate", seed=seed, vocab_hash=bundle.vocab_hash, config_hash=bundle.config_hash,
        checkpoint_id=bundle.checkpoint_id,
    )
    samples = select_prompts(timelines, max_prompts, rng)
    if not samples:
        _fail("EvaluationError", "no prompts could be sampled from the provided timelines")
    horizons = sorted(set(horizons))
    runs = run_prompts(
        bundle.engine,
        samples,
        n_sim=n_sim,
        max_horizon_days=max(horizons),
        seed=seed,
        log=lambda msg: click.echo(msg, err=True),
    )
    result = evaluate_runs(runs, specs, list(horizons), repeats=repeats, seed=seed)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"n_prompts": result.n_prompts, "n_sim": result.n_sim, "horizons": list(horizons)}
    pred_rows = []
    for (event, h), records in result.records.items():
        for r in records:
            pred_rows.append([r.prompt_id, event, h, f"{r.p_hat:.6f}", int(r.outcome), r.n_event, r.n_sim])
    write_table(
        out_dir / "predictions.tsv",
        ["prompt", "event", "horizon_days", "p_hat", "outcome", "n_event", "n_sim"],
        pred_rows,
    )
    calib_rows = []
    for (event, h), report in result.calibrations.items():
        plot_calibration(report, out_dir, f"{event}_{h}d")
        calib_rows.append(
            [
                event,
                h,
                f"{report.oe_ratio:.4f}",
                f"{report.oe_ci[0]:.4f}",
                f"{report.oe_ci[1]:.4f}",
                f"{report.auroc:.4f}",
                f"{report.auprc:.4f}",
                report.n,
            ]
        )
    write_table(
        out_dir / "calibration_summary.tsv",
        ["event", "horizon_days", "oe", "oe_lo", "oe_hi", "auroc", "auprc", "n"],
        calib_rows,
    )
    for h, curve in result.coverage.items():
        plot_coverage(curve, out_dir, f"coverage_{h}d")
        summary[f"coverage_mae_{h}d"] = curve.mae
    fid_rows = []
    for h, fid in result.fidelity.items():
        for cat, (mean, lo, hi) in fid.prevalence_r.items():
            fid_rows.append([h, f"prevalence_r_{cat}", f"{mean:.4f}", f"{lo:.4f}", f"{hi:.4f}"])
        for cat, (mean, lo, hi) in fid.per_timeline_r.items():
            fid_rows.append([h, f"per_timeline_r_{cat}", f"{mean:.4f}", f"{lo:.4f}", f"{hi:.4f}"])
        for label, triple in (
            ("cooccurrence_r", fid.cooccurrence_r),
            ("correlation_r", fid.correlation_r),
            ("median_ks", fid.median_ks),
            ("length_ks", fid.length_ks),
            ("temporal_ks", fid.temporal_ks),
        ):
            if triple:
                fid_rows.append([h, label, f"{triple[0]:.4f}", f"{triple[1]:.4f}", f"{triple[2]:.4f}"])
    write_table(out_dir / "fidelity.tsv", ["horizon_days", "metric", "mean", "lo95", "hi95"], fid_rows)
    h_max = max(horizons)
    real_dyn = temporal_dynamics(
        [
            [t for t in run.sample.future if t.minutes <= run.sample.cut_minutes + h_max * 1440]
            for run in runs
        ]
    )
    sim_dyn = temporal_dynamics([run.sim_futures[0] for run in runs])
    from .metrics import ks_statistic

    plot_length_distributions(
        real_dyn["lengths"],
        sim_dyn["lengths"],
        ks_statistic(real_dyn["lengths"], sim_dyn["lengths"]),
        out_dir,
        f"timeline_lengths_{h_max}d",
    )
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    manifest.counts = {
        "prompts": result.n_prompts,
        "n_sim": result.n_sim,
        "truncated": result.truncated_total,
    }
    manifest.finish().write(out_dir)
    click.echo(json.dumps(summary))


@main.command()
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@wardsim_errors
def serve(model_dir, host, port):
    """Run the HTTP service."""
    import uvicorn

    from .api import ServiceBundle, create_app

    bundle = ServiceBundle.load(model_dir)
    app = create_app(bundle)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
