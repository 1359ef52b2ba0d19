"""Training loop: schedule, slicing, checkpoints, and fine-tuning."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, TrainingDivergedError
from .model import ModelConfig, SequenceBatch, TimelineModel, collate, init_parameters, resample_count
from .vocab import IGNORE_TARGET, TokenizedTimeline


@dataclass
class TrainingSchedule:
    """Learning-rate and batch-size schedule.

    Warmup ramps linearly to the peak over the first 5% of the scheduled
    run, cosine-anneals to the floor at 90%, and stays constant after.  The
    batch size steps 32 -> 64 -> 256 within the first 1%.  Fine-tuning uses
    a constant floor learning rate and the final batch size.
    """

    max_epochs: int = 100
    peak_lr: float = 3e-4
    floor_lr: float = 1e-5
    warmup_frac: float = 0.05
    anneal_end_frac: float = 0.90
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_ramp: tuple[tuple[float, int], ...] = ((0.0, 32), (0.005, 64), (0.01, 256))
    patience: int = 5
    micro_batch: int = 32
    constant_lr: float | None = None  # set for fine-tuning

    def lr_at(self, frac: float) -> float:
        if self.constant_lr is not None:
            return self.constant_lr
        if frac <= self.warmup_frac:
            return self.peak_lr * (frac / self.warmup_frac)
        if frac <= self.anneal_end_frac:
            span = (frac - self.warmup_frac) / (self.anneal_end_frac - self.warmup_frac)
            return self.floor_lr + (self.peak_lr - self.floor_lr) * 0.5 * (
                1.0 + math.cos(math.pi * span)
            )
        return self.floor_lr

    def batch_at(self, frac: float) -> int:
        size = self.batch_ramp[0][1]
        for threshold, b in self.batch_ramp:
            if frac >= threshold:
                size = b
        return size

    @classmethod
    def finetune(cls, max_epochs: int = 100, patience: int = 5) -> "TrainingSchedule":
        return cls(
            max_epochs=max_epochs,
            patience=patience,
            constant_lr=1e-5,
            batch_ramp=((0.0, 256),),
        )


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    steps: int
    seconds: float


@dataclass
class TrainingHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = -1
    best_val_loss: float = math.inf
    step_losses: list[float] = field(default_factory=list)


def slice_indices(length: int, d_seq: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of one training slice: a random window of d_seq - 2 entries
    with the two demographic rows prepended; short timelines pass through."""
    if length <= d_seq:
        return np.arange(length)
    window = d_seq - 2
    start = int(rng.integers(2, length - window + 1))
    return np.concatenate([np.arange(2), np.arange(start, start + window)])


def _slice_row(t: TokenizedTimeline, idx: np.ndarray, mask: np.ndarray | None):
    targets = t.targets[idx].copy()
    if mask is not None:
        targets[~mask[idx]] = IGNORE_TARGET
    return (
        t.kinds[idx],
        [t.subtokens[i] for i in idx],
        t.values[idx],
        t.ages[idx],
        t.in_admission[idx],
        targets,
    )


def _evaluate(model: TimelineModel, rows: list, micro_batch: int) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(rows), micro_batch):
            batch = collate(rows[lo : lo + micro_batch], pad_to=None)
            loss_sum, n = model.loss(batch, reduction="sum")
            total += float(loss_sum)
            count += n
    model.train()
    return total / max(count, 1)


def train(
    model: TimelineModel,
    corpus: list[TokenizedTimeline],
    validation: list[TokenizedTimeline],
    schedule: TrainingSchedule,
    seed: int = 0,
    checkpoint_dir: str | Path | None = None,
    vocab_hash: str = "",
    target_masks: dict[str, np.ndarray] | None = None,
    log=None,
) -> TrainingHistory:
    """Run the schedule to completion or early stop; returns the history.

    ``target_masks`` (patient id -> per-entry bool) restricts which targets
    contribute to the loss, which is how fine-tuning limits updates to the
    most recent period.  Training state is reproducible under a fixed seed.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=schedule.peak_lr,
        betas=schedule.betas,
        eps=schedule.eps,
        weight_decay=schedule.weight_decay,
    )
    d_seq = model.config.d_seq
    history = TrainingHistory()
    val_rows = [
        _slice_row(t, slice_indices(len(t), d_seq, np.random.default_rng(0)), None)
        for t in validation
    ]
    best_state = None
    bad_epochs = 0
    model.train()

    for epoch in range(schedule.max_epochs):
        started = time.monotonic()
        draws: list[tuple[int, np.ndarray]] = []
        for ti, t in enumerate(corpus):
            for _ in range(resample_count(len(t), d_seq)):
                draws.append((ti, slice_indices(len(t), d_seq, rng)))
        order = rng.permutation(len(draws))

        epoch_loss, epoch_count, steps = 0.0, 0, 0
        lr = schedule.lr_at(epoch / schedule.max_epochs)
        pos = 0
        while pos < len(draws):
            frac = (epoch + pos / len(draws)) / schedule.max_epochs
            lr = schedule.lr_at(frac)
            batch_size = schedule.batch_at(frac)
            for group in optimizer.param_groups:
                group["lr"] = lr
            chosen = order[pos : pos + batch_size]
            pos += len(chosen)

            optimizer.zero_grad(set_to_none=True)
            micro_rows: list[list] = []
            total_n = 0
            for mlo in range(0, len(chosen), schedule.micro_batch):
                rows = []
                for j in chosen[mlo : mlo + schedule.micro_batch]:
                    ti, idx = draws[j]
                    t = corpus[ti]
                    mask = (target_masks or {}).get(t.patient_id)
                    rows.append(_slice_row(t, idx, mask))
                micro_rows.append(rows)
                # targets are known without a forward pass; the count lets each
                # micro-batch backpropagate immediately at the right scale
                total_n += sum(int((row[5][1:] != IGNORE_TARGET).sum()) for row in rows)
            if total_n == 0:
                continue
            loss_total = 0.0
            for rows in micro_rows:
                batch = collate(rows)
                loss_sum, _ = model.loss(batch, reduction="sum")
                if not torch.isfinite(loss_sum):
                    raise TrainingDivergedError(steps, epoch, lr)
                (loss_sum / total_n).backward()
                loss_total += float(loss_sum.detach())
            optimizer.step()
            step_loss = loss_total / total_n
            history.step_losses.append(step_loss)
            epoch_loss += step_loss * total_n
            epoch_count += total_n
            steps += 1

        val_loss = _evaluate(model, val_rows, schedule.micro_batch) if val_rows else math.nan
        stats = EpochStats(
            epoch=epoch,
            train_loss=epoch_loss / max(epoch_count, 1),
            val_loss=val_loss,
            lr=lr,
            steps=steps,
            seconds=time.monotonic() - started,
        )
        history.epochs.append(stats)
        if log:
            log(
                f"epoch {epoch}: train {stats.train_loss:.4f} val {stats.val_loss:.4f} "
                f"lr {stats.lr:.2e} ({stats.steps} steps, {stats.seconds:.1f}s)"
            )
        if checkpoint_dir is not None:
            save_checkpoint(
                Path(checkpoint_dir) / f"epoch{epoch:03d}.pt", model, vocab_hash, history
            )

        if val_rows:
            if val_loss < history.best_val_loss - 1e-9:
                history.best_val_loss = val_loss
                history.best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= schedule.patience:
                    history.stopped_early = True
                    break

    if best_state is not None:
        model.load_state_dict(best_state)
    return history


def overfit_single_batch(
    model: TimelineModel,
    corpus: list[TokenizedTimeline],
    steps: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Sanity check: drive the loss down on one small batch; returns per-step losses."""
    torch.manual_seed(seed)
    rows = [_slice_row(t, np.arange(min(len(t), model.config.d_seq)), None) for t in corpus]
    batch = collate(rows)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.01)
    model.train()
    losses = []
    for _ in range(steps):
        optimizer.zero_grad(set_to_none=True)
        loss, _ = model.loss(batch)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    return losses


# ---------------------------------------------------------------------------
# Checkpoints

_CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path, model: TimelineModel, vocab_hash: str, history: TrainingHistory | None = None
) -> None:
    payload = {
        "version": _CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "vocab_hash": vocab_hash,
        "history": [vars(e) for e in history.epochs] if history else [],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path, expected_vocab_hash: str | None = None) -> TimelineModel:
    """Rebuild a model from a checkpoint; refuses on vocabulary-hash mismatch."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    if expected_vocab_hash is not None and payload["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError(
            "vocabulary hash mismatch: checkpoint was trained with a different vocabulary"
        )
    model = TimelineModel(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
