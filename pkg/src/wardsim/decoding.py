"""Constrained autoregressive timeline generation.

Decoding samples the full softmax at temperature 1.0 but drives structure
through logit masks: discharge requires an open admission, admission
requires none, result tokens require the immediately preceding emission to
be a lab-test code, consecutive time tokens are blocked, and a discharge
must be followed by exactly one disposition token.  Result tokens are
additionally restricted to those decodable for the pending test (numeric
bins only when a percentile table exists, rank tokens within the test's
observed rank count), so generated values are always members of the
training data.

Simulations for one prompt run as a lockstep batch: every live row appends
exactly one entry per step, so context lengths stay aligned and the
key-value cache, sliding-window compaction, and prefill are shared.  Each
simulation owns an independent RNG stream derived from the seed, which
makes the result multiset invariant to worker count.
"""

from __future__ import annotations

import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import tokens as tk
from .ages import AgeStamp
from .errors import GenerationError
from .model import SequenceBatch, TimelineModel, mean_attention
from .numcodec import PercentileTable
from .records import (
    RT_ADMISSION,
    RT_DEMOGRAPHIC,
    RT_DIAGNOSIS,
    RT_DISCHARGE,
    RT_DISPOSITION,
    RT_EOT,
    RT_LAB_RESULT,
    RT_LAB_TEST,
)
from .timecodec import encode_age
from .timeline import CATEGORICAL, NUMERIC, TEMPORAL, PatientTimeline, TimelineEntry
from .vocab import (
    GROUP_CODE,
    GROUP_NUMERIC,
    GROUP_RANK,
    GROUP_SPECIAL,
    GROUP_TIME,
    Vocabulary,
)


@dataclass(frozen=True)
class GenerationConfig:
    horizon_minutes: int = 7 * 1440
    n_sim: int = 256
    max_steps: int = 7000
    stop_tokens: tuple[str, ...] = ()
    seed: int = 0
    chunk_size: int = 64
    workers: int = 1
    use_cache: bool = True
    sliding_stride: int = 128
    record_attention: bool = False

    @property
    def horizon_days(self) -> float:
        return self.horizon_minutes / 1440.0


class TokenGroups:
    """Boolean id masks per vocabulary group, precomputed once."""

    def __init__(self, vocab: Vocabulary):
        n = len(vocab)
        self.n = n
        self.time = np.zeros(n, dtype=bool)
        self.time[list(vocab.group_range[GROUP_TIME])] = True
        self.numeric = np.zeros(n, dtype=bool)
        self.numeric[list(vocab.group_range[GROUP_NUMERIC])] = True
        self.rank = np.zeros(n, dtype=bool)
        self.rank[list(vocab.group_range[GROUP_RANK])] = True
        self.result_special = np.zeros(n, dtype=bool)
        for name in (tk.RESULT_POSITIVE, tk.RESULT_NEGATIVE, tk.RESULT_EQUIVOCAL):
            self.result_special[vocab.special_id[name]] = True
        self.result_any = self.numeric | self.rank | self.result_special
        self.disposition = np.zeros(n, dtype=bool)
        for name in (tk.DISCHARGE_ALIVE, tk.DISCHARGE_EXPIRED):
            self.disposition[vocab.special_id[name]] = True
        self.pad_id = vocab.special_id[tk.PAD]
        self.adm_id = vocab.special_id[tk.ADMISSION]
        self.dsc_id = vocab.special_id[tk.DISCHARGE]
        self.eot_id = vocab.special_id[tk.END_OF_TIMELINE]


def constraint_mask(
    logits: np.ndarray,
    groups: TokenGroups,
    admitted: bool,
    pending_results: np.ndarray | None,
    prev_time: bool,
    prev_discharge: bool,
) -> np.ndarray:
    """Apply the structural decoding rules to one logit row.

    ``pending_results`` is the allowed-result mask for the pending lab code,
    or None when no lab code immediately precedes.  Raises if every token
    would be masked (never silently unmasked).
    """
    out = logits.astype(np.float64, copy=True)
    out[groups.pad_id] = -np.inf
    if prev_discharge:
        keep = groups.disposition
        out[~keep] = -np.inf
        return out
    out[groups.disposition] = -np.inf
    if admitted:
        out[groups.adm_id] = -np.inf
    else:
        out[groups.dsc_id] = -np.inf
    if pending_results is None:
        out[groups.result_any] = -np.inf
    else:
        out[groups.result_any & ~pending_results] = -np.inf
    if prev_time:
        out[groups.time] = -np.inf
    if not np.isfinite(out).any():
        raise GenerationError("all tokens masked; generation cannot proceed")
    return out


@dataclass
class GenerationInfo:
    steps: int = 0
    stop_reason: str = ""
    truncated: bool = False
    labs_without_result: int = 0
    dropped_trailing_temporal: int = 0


@dataclass
class GeneratedTimeline:
    prompt: PatientTimeline
    generated: list[TimelineEntry]
    info: GenerationInfo
    attention: list[np.ndarray] | None = None

    def full_timeline(self) -> PatientTimeline:
        return PatientTimeline(
            self.prompt.patient_id,
            self.prompt.birthdate,
            self.prompt.sex_token,
            list(self.prompt.entries) + list(self.generated),
        )


@dataclass
class SimulationResult:
    prompt: PatientTimeline
    cut_minutes: int
    config: GenerationConfig
    timelines: list[GeneratedTimeline]
    wall_seconds: float = 0.0

    @property
    def n_truncated(self) -> int:
        return sum(t.info.truncated for t in self.timelines)


@dataclass
class _Sim:
    rng: np.random.Generator
    admitted: bool
    pending_lab: str | None
    prev_time: bool = False
    prev_discharge: bool = False
    stopping: bool = False
    cursor: int = 0
    steps: int = 0
    finished: str = ""  # empty while running; else the stop reason
    truncated: bool = False
    entries: list[TimelineEntry] = field(default_factory=list)
    pending_temporal: int | None = None
    next_input: tuple | None = None  # (kind, subtokens, value, age_vec, in_admission)
    labs_without_result: int = 0
    dropped_trailing_temporal: int = 0
    attention: list[np.ndarray] | None = None


class DecodeEngine:
    """Shared, read-only bundle of model + codecs driving all generation."""

    def __init__(self, model: TimelineModel, vocab: Vocabulary, ptable: PercentileTable):
        model.eval()
        self.model = model
        self.vocab = vocab
        self.ptable = ptable
        self.groups = TokenGroups(vocab)
        self._result_masks: dict[str, np.ndarray] = {}
        self.k_max = max((len(t.subtoken_ids) for t in vocab.tokens), default=1) or 1

    # -- state helpers -------------------------------------------------------

    def allowed_results(self, lab_code: str) -> np.ndarray:
        """Result tokens decodable for this lab code."""
        cached = self._result_masks.get(lab_code)
        if cached is not None:
            return cached
        mask = np.zeros(self.groups.n, dtype=bool)
        mask |= self.groups.result_special
        if self.ptable.has_code(lab_code):
            mask |= self.groups.numeric
        n_ranks = self.vocab.rank_table.n_ranks(lab_code)
        if n_ranks:
            rank_start = self.vocab.group_range[GROUP_RANK].start
            mask[rank_start : rank_start + n_ranks] = True
        self._result_masks[lab_code] = mask
        return mask

    def _prompt_state(self, prompt: PatientTimeline) -> tuple[bool, str | None, bool]:
        admitted = False
        for e in prompt.entries:
            if e.record_type == RT_ADMISSION:
                admitted = True
            elif e.record_type == RT_DISPOSITION:
                admitted = False
        last = prompt.entries[-1] if prompt.entries else None
        pending = last.token if last is not None and last.record_type == RT_LAB_TEST else None
        prev_dsc = last is not None and last.kind == CATEGORICAL and last.record_type == RT_DISCHARGE
        return admitted, pending, prev_dsc

    # -- public API ----------------------------------------------------------

    def generate(
        self, prompt: PatientTimeline, config: GenerationConfig, cut_minutes: int | None = None
    ) -> GeneratedTimeline:
        """One constrained continuation (equivalent to n_sim=1)."""
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(1)]
        return self._run_chunk(prompt, config, rngs, cut_minutes)[0]

    def simulate_many(
        self, prompt: PatientTimeline, config: GenerationConfig, cut_minutes: int | None = None
    ) -> SimulationResult:
        """n_sim independent continuations with per-simulation RNG streams.

        Simulations are processed in fixed chunks of ``chunk_size``; workers
        only parallelize across chunks, so results are identical for any
        worker count under a fixed seed.
        """
        started = _time.monotonic()
        streams = np.random.SeedSequence(config.seed).spawn(config.n_sim)
        chunks = []
        for lo in range(0, config.n_sim, config.chunk_size):
            chunks.append([np.random.default_rng(s) for s in streams[lo : lo + config.chunk_size]])
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(
                    pool.map(lambda rngs: self._run_chunk(prompt, config, rngs, cut_minutes), chunks)
                )
        else:
            results = [self._run_chunk(prompt, config, rngs, cut_minutes) for rngs in chunks]
        timelines = [t for chunk in results for t in chunk]
        cut = cut_minutes if cut_minutes is not None else prompt.last_age().total_minutes
        return SimulationResult(
            prompt=prompt,
            cut_minutes=cut,
            config=config,
            timelines=timelines,
            wall_seconds=_time.monotonic() - started,
        )

    def inspect(self, prompt: PatientTimeline) -> dict:
        """Masked next-token distribution and mean attention for the prompt."""
        from .vocab import tokenize_timeline

        tokenized = tokenize_timeline(prompt, self.vocab, self.ptable)
        buffers = _ContextBuffers(self, 1, self.model.config.d_seq)
        buffers.load_prompt(tokenized)
        batch = buffers.batch(0, buffers.length)
        with torch.no_grad():
            logits, _, attentions = self.model.forward(batch, return_attention=True)
        admitted, pending, prev_dsc = self._prompt_state(prompt)
        row = logits[0, buffers.length - 1].double().numpy()
        masked = constraint_mask(
            row,
            self.groups,
            admitted=admitted,
            pending_results=self.allowed_results(pending) if pending else None,
            prev_time=False,
            prev_discharge=prev_dsc,
        )
        probs = _softmax(masked)
        attn = mean_attention(attentions)[0, buffers.length - 1].numpy()
        return {
            "probabilities": probs,
            "attention": attn,
            "pending_lab": pending,
            "admitted": admitted,
        }

    # -- chunk execution -----------------------------------------------------

    def _run_chunk(
        self,
        prompt: PatientTimeline,
        config: GenerationConfig,
        rngs: list[np.random.Generator],
        cut_minutes: int | None,
    ) -> list[GeneratedTimeline]:
        from .vocab import tokenize_timeline

        d_seq = self.model.config.d_seq
        b = len(rngs)
        tokenized = tokenize_timeline(prompt, self.vocab, self.ptable)
        cursor = prompt.last_age().total_minutes
        cut = cut_minutes if cut_minutes is not None else cursor
        deadline = cut + config.horizon_minutes

        admitted, pending, prev_dsc = self._prompt_state(prompt)
        sims = [
            _Sim(
                rng=rng,
                admitted=admitted,
                pending_lab=pending,
                prev_discharge=prev_dsc,
                cursor=cursor,
                attention=[] if config.record_attention else None,
            )
            for rng in rngs
        ]

        buffers = _ContextBuffers(self, b, d_seq)
        buffers.load_prompt(tokenized)
        logits = self._prefill(buffers, config)

        for _ in range(config.max_steps):
            live = [i for i, s in enumerate(sims) if not s.finished]
            if not live:
                break
            rows = logits.double().numpy()
            for i in live:
                self._advance(sims[i], rows[i], prompt.birthdate, deadline, config)
            if all(s.finished for s in sims):
                break
            if buffers.length == d_seq:
                # the stride cannot exceed the non-demographic window
                buffers.compact(max(1, min(config.sliding_stride, d_seq - 3)))
                self._rebuild_cache(buffers, config)
            new_batch = buffers.append_step(sims)
            logits = self._forward_step(buffers, new_batch, config, sims)

        results = []
        for s in sims:
            if not s.finished:
                s.finished = "max_steps"
                s.truncated = True
            if s.pending_temporal is not None and s.pending_temporal == len(s.entries) - 1:
                s.entries.pop()
                s.dropped_trailing_temporal += 1
            info = GenerationInfo(
                steps=s.steps,
                stop_reason=s.finished,
                truncated=s.truncated,
                labs_without_result=s.labs_without_result,
                dropped_trailing_temporal=s.dropped_trailing_temporal,
            )
            results.append(GeneratedTimeline(prompt, s.entries, info, attention=s.attention))
        return results

    def _prefill(self, buffers: "_ContextBuffers", config: GenerationConfig) -> torch.Tensor:
        batch = buffers.batch(0, buffers.length, rows=1)
        with torch.no_grad():
            logits, cache, _ = self.model.forward(batch)
        if config.use_cache:
            buffers.cache = [
                (k.repeat(buffers.b, 1, 1, 1), v.repeat(buffers.b, 1, 1, 1)) for k, v in cache
            ]
        return logits[:, -1].repeat(buffers.b, 1)

    def _rebuild_cache(self, buffers: "_ContextBuffers", config: GenerationConfig) -> None:
        if not config.use_cache:
            buffers.cache = None
            return
        batch = buffers.batch(0, buffers.length)
        with torch.no_grad():
            _, cache, _ = self.model.forward(batch)
        buffers.cache = cache

    def _forward_step(
        self,
        buffers: "_ContextBuffers",
        new_batch: SequenceBatch,
        config: GenerationConfig,
        sims: list[_Sim],
    ) -> torch.Tensor:
        with torch.no_grad():
            if config.use_cache:
                logits, cache, attentions = self.model.forward(
                    new_batch,
                    past=buffers.cache,
                    position_offset=buffers.length - 1,
                    return_attention=config.record_attention,
                )
                buffers.cache = cache
            else:
                batch = buffers.batch(0, buffers.length)
                logits, _, attentions = self.model.forward(
                    batch, return_attention=config.record_attention
                )
        if config.record_attention and attentions:
            mean = mean_attention(attentions)
            for i, s in enumerate(sims):
                if not s.finished and s.attention is not None:
                    s.attention.append(mean[i, -1].numpy().copy())
        return logits[:, -1]

    # -- per-sim materialization ----------------------------------------------

    def _advance(
        self,
        sim: _Sim,
        logit_row: np.ndarray,
        birthdate,
        deadline: int,
        config: GenerationConfig,
    ) -> None:
        masked = constraint_mask(
            logit_row,
            self.groups,
            admitted=sim.admitted,
            pending_results=self.allowed_results(sim.pending_lab) if sim.pending_lab else None,
            prev_time=sim.prev_time,
            prev_discharge=sim.prev_discharge,
        )
        probs = _softmax(masked)
        token_id = int(np.searchsorted(np.cumsum(probs), sim.rng.random(), side="right"))
        token_id = min(token_id, len(probs) - 1)
        sim.steps += 1
        token = self.vocab.tokens[token_id]

        had_pending = sim.pending_lab
        entry: TimelineEntry | None = None
        sim.next_input = None
        if token.group == GROUP_TIME:
            delta = self.vocab.timecodec.decode_token(
                token.time_index, sim.rng, cursor_clock_minute=sim.cursor % 1440
            )
            target = sim.cursor + delta
            if target > deadline:
                sim.finished = "horizon"
            else:
                sim.cursor = target
                entry = TimelineEntry(
                    TEMPORAL,
                    RT_EOT,  # placeholder; backfilled by the next event
                    age=AgeStamp.from_total_minutes(target, birthdate),
                    in_admission=sim.admitted,
                )
                sim.pending_temporal = len(sim.entries)
                sim.next_input = (3, (), 0.0, encode_age(entry.age), sim.admitted)
        elif token.group == GROUP_NUMERIC:
            value, unit = self.ptable.decode_bin(token.bin_index, sim.pending_lab)
            entry = TimelineEntry(
                NUMERIC, RT_LAB_RESULT, value=value, unit=unit, in_admission=sim.admitted
            )
            normalized, _ = self.ptable.encode_value(float(value), sim.pending_lab, unit)
            sim.next_input = (2, (), normalized, None, sim.admitted)
        elif token.group == GROUP_RANK:
            value = self.vocab.rank_table.value_of(sim.pending_lab, token.rank)
            entry = TimelineEntry(CATEGORICAL, RT_LAB_RESULT, token=value, in_admission=sim.admitted)
            sim.next_input = (1, token.subtoken_ids, 0.0, None, sim.admitted)
        elif token.group == GROUP_SPECIAL:
            entry = self._special_entry(token.name, sim)
            if entry is not None:
                sim.next_input = (1, token.subtoken_ids, 0.0, None, entry.in_admission)
        else:  # medical code
            entry = TimelineEntry(
                CATEGORICAL,
                token.record_type,
                token=token.code,
                provisional=token.provisional,
                in_admission=sim.admitted,
            )
            sim.next_input = (1, token.subtoken_ids, 0.0, None, sim.admitted)

        if entry is not None:
            if entry.kind != TEMPORAL and sim.pending_temporal is not None:
                idx = sim.pending_temporal
                sim.entries[idx] = replace(sim.entries[idx], record_type=entry.record_type)
                sim.pending_temporal = None
            sim.entries.append(entry)

        if had_pending and not (entry is not None and entry.record_type == RT_LAB_RESULT):
            sim.labs_without_result += 1
        sim.pending_lab = (
            token.code if token.group == GROUP_CODE and token.record_type == RT_LAB_TEST else None
        )
        sim.prev_time = token.group == GROUP_TIME and not sim.finished
        if token.name in config.stop_tokens:
            sim.stopping = True
        if token.group == GROUP_SPECIAL and token.name == tk.END_OF_TIMELINE:
            sim.finished = "eot"
        if sim.stopping and not sim.prev_discharge and not sim.finished:
            sim.finished = "stop_token"

    def _special_entry(self, name: str, sim: _Sim) -> TimelineEntry | None:
        if name == tk.ADMISSION:
            sim.admitted = True
            return TimelineEntry(CATEGORICAL, RT_ADMISSION, token=name, in_admission=True)
        if name == tk.DISCHARGE:
            sim.prev_discharge = True
            return TimelineEntry(CATEGORICAL, RT_DISCHARGE, token=name, in_admission=True)
        if name in tk.DISPOSITION_TOKENS:
            sim.prev_discharge = False
            sim.admitted = False
            return TimelineEntry(CATEGORICAL, RT_DISPOSITION, token=name, in_admission=True)
        if name == tk.END_OF_TIMELINE:
            return TimelineEntry(CATEGORICAL, RT_EOT, token=name, in_admission=sim.admitted)
        if name in tk.RESULT_VALUE_BY_TOKEN:
            return TimelineEntry(
                CATEGORICAL,
                RT_LAB_RESULT,
                token=tk.RESULT_VALUE_BY_TOKEN[name],
                in_admission=sim.admitted,
            )
        if name in tk.SEX_TOKENS:
            return TimelineEntry(CATEGORICAL, RT_DEMOGRAPHIC, token=name, in_admission=sim.admitted)
        raise GenerationError(f"unexpected special token {name!r}")


class _ContextBuffers:
    """Aligned per-row context tensors plus the KV cache."""

    def __init__(self, engine: DecodeEngine, b: int, d_seq: int):
        self.engine = engine
        self.b = b
        self.d_seq = d_seq
        k = engine.k_max
        self.kinds = torch.zeros((b, d_seq), dtype=torch.int8)
        self.subtokens = torch.zeros((b, d_seq, k), dtype=torch.long)
        self.values = torch.zeros((b, d_seq), dtype=torch.float32)
        self.ages = torch.zeros((b, d_seq, 5), dtype=torch.float32)
        self.in_admission = torch.zeros((b, d_seq), dtype=torch.bool)
        self.length = 0
        self.cache: list[tuple[torch.Tensor, torch.Tensor]] | None = None

    def load_prompt(self, tokenized) -> None:
        n = len(tokenized.kinds)
        if n > self.d_seq:  # truncate from the left, keeping demographics
            keep = np.concatenate([np.arange(2), np.arange(n - (self.d_seq - 2), n)])
        else:
            keep = np.arange(n)
        t = len(keep)
        self.kinds[:, :t] = torch.from_numpy(tokenized.kinds[keep].astype(np.int8))
        for j, src in enumerate(keep):
            subs = tokenized.subtokens[src]
            if subs:
                self.subtokens[:, j, : len(subs)] = torch.tensor(subs, dtype=torch.long)
        self.values[:, :t] = torch.from_numpy(tokenized.values[keep])
        self.ages[:, :t] = torch.from_numpy(tokenized.ages[keep])
        self.in_admission[:, :t] = torch.from_numpy(tokenized.in_admission[keep])
        self.length = t

    def batch(self, lo: int, hi: int, rows: int | None = None) -> SequenceBatch:
        r = rows or self.b
        return SequenceBatch(
            self.kinds[:r, lo:hi],
            self.subtokens[:r, lo:hi],
            self.values[:r, lo:hi],
            self.ages[:r, lo:hi],
            self.in_admission[:r, lo:hi],
            torch.full((r, hi - lo), -100, dtype=torch.long),
        )

    def compact(self, stride: int) -> None:
        """Drop the oldest ``stride`` non-demographic positions."""
        keep_tail = slice(2 + stride, self.length)
        new_len = 2 + (self.length - (2 + stride))
        for tensor in (self.kinds, self.values, self.in_admission):
            tensor[:, 2:new_len] = tensor[:, keep_tail].clone()
        self.subtokens[:, 2:new_len] = self.subtokens[:, keep_tail].clone()
        self.ages[:, 2:new_len] = self.ages[:, keep_tail].clone()
        self.kinds[:, new_len:] = 0
        self.length = new_len

    def append_step(self, sims: list[_Sim]) -> SequenceBatch:
        """Write each sim's newest entry (or padding) at the next position."""
        pos = self.length
        self.kinds[:, pos] = 0
        self.subtokens[:, pos] = 0
        self.values[:, pos] = 0.0
        self.ages[:, pos] = 0.0
        self.in_admission[:, pos] = False
        for i, sim in enumerate(sims):
            if sim.finished or sim.next_input is None:
                continue
            kind, subs, value, age_vec, in_adm = sim.next_input
            sim.next_input = None
            self.kinds[i, pos] = kind
            if subs:
                self.subtokens[i, pos, : len(subs)] = torch.tensor(subs, dtype=torch.long)
            self.values[i, pos] = value
            if age_vec is not None:
                self.ages[i, pos] = torch.from_numpy(age_vec.astype(np.float32))
            self.in_admission[i, pos] = in_adm
        self.length = pos + 1
        return self.batch(pos, pos + 1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits[np.isfinite(logits)])
    exp = np.where(np.isfinite(shifted), np.exp(shifted), 0.0)
    return exp / exp.sum()
