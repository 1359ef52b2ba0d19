"""Evaluation reports: delimited tables plus rendered figures.

Every figure written here has a TSV twin carrying the plotted numbers, so
downstream tooling never has to scrape pixels.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import CalibrationReport, CoverageCurve


def write_table(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _finish(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_calibration(report: CalibrationReport, out_dir: str | Path, name: str) -> list[Path]:
    out_dir = Path(out_dir)
    rows = [
        [f"{x:.6f}", f"{y:.6f}"] for x, y in zip(report.loess_x, report.loess_y)
    ]
    paths = [write_table(out_dir / f"calibration_{name}_loess.tsv", ["predicted", "observed_smoothed"], rows)]
    bin_rows = [
        [f"{c:.3f}", "" if math.isnan(p) else f"{p:.6f}", "" if math.isnan(o) else f"{o:.6f}", n]
        for c, p, o, n in zip(
            report.bin_centers, report.bin_predicted, report.bin_observed, report.bin_counts
        )
    ]
    paths.append(
        write_table(
            out_dir / f"calibration_{name}_bins.tsv",
            ["bin_center", "mean_predicted", "observed_rate", "count"],
            bin_rows,
        )
    )

    fig, (ax, hist) = plt.subplots(
        2, 1, figsize=(5, 6), sharex=True, gridspec_kw={"height_ratios": [4, 1]}
    )
    ax.plot([0, 1], [0, 1], color="grey", linestyle="--", linewidth=1, label="ideal")
    ax.plot(report.loess_x, report.loess_y, color="tab:red", label="LOESS")
    ok = ~np.isnan(report.bin_predicted)
    ax.plot(
        report.bin_predicted[ok], report.bin_observed[ok], "o", color="tab:blue", label="10 bins"
    )
    ax.set_ylabel("observed rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(-0.02, 1.02)
    auroc_txt = "n/a" if math.isnan(report.auroc) else f"{report.auroc:.3f}"
    ax.set_title(f"{name}: O/E={report.oe_ratio:.3f}, AUROC={auroc_txt}")
    ax.legend(loc="upper left", fontsize=8)
    hist.bar(report.bin_centers, report.bin_counts, width=0.09, color="tab:grey")
    hist.set_xlabel("predicted probability")
    hist.set_ylabel("n")
    paths.append(_finish(fig, out_dir / f"calibration_{name}.png"))
    return paths


def plot_coverage(curve: CoverageCurve, out_dir: str | Path, name: str = "coverage") -> list[Path]:
    out_dir = Path(out_dir)
    rows = [
        [f"{lvl:.0f}", f"{emp:.6f}"] for lvl, emp in zip(curve.levels, curve.empirical)
    ]
    paths = [write_table(out_dir / f"{name}.tsv", ["nominal_percent", "empirical"], rows)]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], color="grey", linestyle="--", linewidth=1)
    ax.plot(curve.levels / 100.0, curve.empirical, "o-", color="tab:blue")
    lo, hi = curve.mae_ci
    ci = "" if math.isnan(lo) else f" (95% CI {lo:.4f}-{hi:.4f})"
    ax.set_title(f"coverage MAE {curve.mae:.4f}{ci}")
    ax.set_xlabel("nominal coverage")
    ax.set_ylabel("empirical coverage")
    paths.append(_finish(fig, out_dir / f"{name}.png"))
    return paths


def plot_agreement_scatter(
    real: np.ndarray, simulated: np.ndarray, r: float, out_dir: str | Path, name: str
) -> list[Path]:
    out_dir = Path(out_dir)
    rows = [[f"{a:.8f}", f"{b:.8f}"] for a, b in zip(real, simulated)]
    paths = [write_table(out_dir / f"prevalence_{name}.tsv", ["real", "simulated"], rows)]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    finite = np.asarray(real) > 0
    ax.loglog(np.asarray(real)[finite], np.asarray(simulated)[finite], ".", alpha=0.6)
    lims = ax.get_xlim()
    ax.plot(lims, lims, color="grey", linestyle="--", linewidth=1)
    ax.set_title(f"{name}: r={r:.4f}")
    ax.set_xlabel("real frequency")
    ax.set_ylabel("simulated frequency")
    paths.append(_finish(fig, out_dir / f"prevalence_{name}.png"))
    return paths


def plot_matrix(
    matrix: np.ndarray, labels: list[str], out_dir: str | Path, name: str, vmin=0.0, vmax=1.0
) -> list[Path]:
    out_dir = Path(out_dir)
    rows = [[labels[i], *(f"{v:.6f}" if not math.isnan(v) else "" for v in matrix[i])] for i in range(len(labels))]
    paths = [write_table(out_dir / f"{name}.tsv", ["test", *labels], rows)]
    fig, ax = plt.subplots(figsize=(5.5, 5))
    masked = np.ma.masked_invalid(matrix)
    im = ax.imshow(masked, vmin=vmin, vmax=vmax, cmap="viridis")
    ax.set_xticks(range(len(labels)))
    ax.set_yticks(range(len(labels)))
    step = max(1, len(labels) // 25)
    ax.set_xticklabels([l if i % step == 0 else "" for i, l in enumerate(labels)], rotation=90, fontsize=5)
    ax.set_yticklabels([l if i % step == 0 else "" for i, l in enumerate(labels)], fontsize=5)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(name)
    paths.append(_finish(fig, out_dir / f"{name}.png"))
    return paths


def plot_length_distributions(
    real: np.ndarray, simulated: np.ndarray, ks: float, out_dir: str | Path, name: str
) -> list[Path]:
    out_dir = Path(out_dir)
    paths = [
        write_table(
            out_dir / f"{name}.tsv",
            ["set", "values"],
            [["real", ",".join(map(str, real))], ["simulated", ",".join(map(str, simulated))]],
        )
    ]
    fig, ax = plt.subplots(figsize=(5, 4))
    upper = max(1, int(np.percentile(np.concatenate([real, simulated]), 99)))
    bins = np.linspace(0, upper, 40)
    ax.hist(real, bins=bins, alpha=0.5, density=True, label="real")
    ax.hist(simulated, bins=bins, alpha=0.5, density=True, label="simulated")
    ax.set_title(f"{name}: KS={ks:.4f}")
    ax.set_xlabel("entries per timeline")
    ax.legend()
    paths.append(_finish(fig, out_dir / f"{name}.png"))
    return paths


def plot_training_history(history, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    rows = [
        [e.epoch, f"{e.train_loss:.6f}", f"{e.val_loss:.6f}", f"{e.lr:.3e}", e.steps, f"{e.seconds:.1f}"]
        for e in history.epochs
    ]
    paths = [
        write_table(
            out_dir / "training_history.tsv",
            ["epoch", "train_loss", "val_loss", "lr", "steps", "seconds"],
            rows,
        )
    ]
    fig, ax = plt.subplots(figsize=(5, 4))
    epochs = [e.epoch for e in history.epochs]
    ax.plot(epochs, [e.train_loss for e in history.epochs], label="train")
    ax.plot(epochs, [e.val_loss for e in history.epochs], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross entropy")
    ax.legend()
    paths.append(_finish(fig, out_dir / "training_history.png"))
    return paths
