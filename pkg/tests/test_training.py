from __future__ import annotations

import numpy as np
import pytest
import torch

from wardsim.errors import CheckpointError
from wardsim.model import ModelConfig, TimelineModel, init_parameters
from wardsim.numcodec import build_logit_grid, collect_numeric_observations, fit_percentile_tables
from wardsim.records import group_by_patient
from wardsim.synthworld import SynthWorld
from wardsim.timeline import build_timeline
from wardsim.training import (
    TrainingSchedule,
    load_checkpoint,
    overfit_single_batch,
    save_checkpoint,
    train,
)
from wardsim.vocab import IGNORE_TARGET, build_vocabulary, tokenize_timeline


@pytest.fixture(scope="module")
def corpus():
    world = SynthWorld()
    rows, _ = world.generate_corpus(30, rng=8)
    timelines = [build_timeline(rs, append_eot=True) for rs in group_by_patient(rows).values()]
    vocab = build_vocabulary(timelines, n_bins=21)
    ptable = fit_percentile_tables(
        collect_numeric_observations(timelines), build_logit_grid(21, 1e-7)
    )
    tokenized = [tokenize_timeline(t, vocab, ptable) for t in timelines]
    return vocab, ptable, tokenized


def _tiny(vocab, d_seq=64, seed=0):
    config = ModelConfig.tiny(vocab_size=len(vocab), n_subtokens=vocab.n_subtokens)
    config.d_seq = d_seq
    model = TimelineModel(config)
    init_parameters(model, seed=seed)
    return model


def test_seeded_training_reproducible(corpus):
    vocab, _, tokenized = corpus
    schedule = TrainingSchedule(max_epochs=2, batch_ramp=((0.0, 8),), micro_batch=8)
    histories = []
    for _ in range(2):
        model = _tiny(vocab)
        history = train(model, tokenized[:10], tokenized[10:13], schedule, seed=7)
        histories.append([(e.train_loss, e.val_loss) for e in history.epochs])
    assert histories[0] == histories[1]


def test_training_decreases_loss_and_records_history(corpus):
    vocab, _, tokenized = corpus
    schedule = TrainingSchedule(max_epochs=3, batch_ramp=((0.0, 8),), micro_batch=8)
    model = _tiny(vocab)
    history = train(model, tokenized[:10], tokenized[10:13], schedule, seed=1)
    assert len(history.epochs) == 3
    assert history.epochs[-1].train_loss < history.epochs[0].train_loss
    assert history.best_epoch >= 0
    assert all(e.steps > 0 for e in history.epochs)


def test_early_stopping_on_stagnant_validation(corpus):
    vocab, _, tokenized = corpus
    # Zero learning rate: validation loss never improves after the first epoch.
    schedule = TrainingSchedule(
        max_epochs=20, patience=2, constant_lr=0.0, batch_ramp=((0.0, 8),), micro_batch=8
    )
    model = _tiny(vocab)
    history = train(model, tokenized[:6], tokenized[10:12], schedule, seed=0)
    assert history.stopped_early
    assert len(history.epochs) <= 4


def test_finetune_target_mask_restricts_updates(corpus):
    vocab, _, tokenized = corpus
    model = _tiny(vocab)
    # Mask everything: no supervised positions, so parameters never move.
    masks = {t.patient_id: np.zeros(len(t), dtype=bool) for t in tokenized}
    before = {k: v.clone() for k, v in model.state_dict().items()}
    schedule = TrainingSchedule.finetune(max_epochs=2)
    history = train(model, tokenized[:6], [], schedule, seed=0, target_masks=masks)
    after = model.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)
    assert all(e.steps == 0 or e.train_loss == 0 for e in history.epochs)


def test_overfit_single_batch_reaches_10_percent(corpus):
    vocab, _, tokenized = corpus
    short = sorted(tokenized, key=len)[:8]
    config = ModelConfig.desk_scale(vocab_size=len(vocab), n_subtokens=vocab.n_subtokens)
    config.d_seq = 64
    model = TimelineModel(config)
    init_parameters(model, 0)
    losses = overfit_single_batch(model, [t for t in short], steps=120)
    assert min(losses) < 0.1 * losses[0]


def test_checkpoint_round_trip_and_hash_guard(corpus, tmp_path):
    vocab, _, tokenized = corpus
    model = _tiny(vocab)
    path = tmp_path / "checkpoint.pt"
    save_checkpoint(path, model, vocab_hash="abc123")
    loaded = load_checkpoint(path, expected_vocab_hash="abc123")
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert torch.equal(a, b)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_vocab_hash="different")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")
