"""Decoder-only transformer over timeline entries.

Three encoders lift heterogeneous entries into the model dimension: summed
subtoken embeddings for categorical entries, a two-layer feed-forward for
the normalized numeric value, and an identically shaped feed-forward for
the scaled 5-dimensional age.  Encoded vectors are L2-normalized, entries
recorded during an admission receive a learned admission vector, and the
result is layer-normalized before learned positional embeddings and the
pre-LN transformer stack.  One prediction head scores the entire unified
vocabulary (codes, numeric bins, and time tokens share a single softmax).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .vocab import IGNORE_TARGET


@dataclass
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    d_k: int = 32
    d_v: int = 32
    n_blocks: int = 4
    d_ff: int = 512
    d_seq: int = 256
    dropout: float = 0.1
    vocab_size: int = 0
    n_subtokens: int = 0

    def __post_init__(self):
        if self.n_heads * self.d_v != self.d_model:
            raise ConfigError(
                f"n_heads * d_v must equal d_model ({self.n_heads}*{self.d_v} != {self.d_model})"
            )
        if self.d_seq < 4:
            raise ConfigError("d_seq must be at least 4")

    @classmethod
    def paper_scale(cls, **kw) -> "ModelConfig":
        return cls(
            d_model=1024, n_heads=16, d_k=64, d_v=64, n_blocks=12, d_ff=3072, d_seq=2048, **kw
        )

    @classmethod
    def desk_scale(cls, **kw) -> "ModelConfig":
        return cls(d_model=128, n_heads=4, d_k=32, d_v=32, n_blocks=4, d_ff=512, d_seq=256, **kw)

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        return cls(
            d_model=16, n_heads=2, d_k=8, d_v=8, n_blocks=2, d_ff=32, d_seq=12, dropout=0.0, **kw
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SequenceBatch:
    """Padded entry tensors; padding rows have kind 0 and IGNORE targets."""

    kinds: torch.Tensor  # (B, T) int8: 0 pad, 1 categorical, 2 numeric, 3 temporal
    subtokens: torch.Tensor  # (B, T, K) long, 0-padded
    values: torch.Tensor  # (B, T) float
    ages: torch.Tensor  # (B, T, 5) float
    in_admission: torch.Tensor  # (B, T) bool
    targets: torch.Tensor  # (B, T) long

    def __len__(self) -> int:
        return self.kinds.shape[0]

    @property
    def seq_len(self) -> int:
        return self.kinds.shape[1]

    def to(self, dtype: torch.dtype) -> "SequenceBatch":
        return SequenceBatch(
            self.kinds,
            self.subtokens,
            self.values.to(dtype),
            self.ages.to(dtype),
            self.in_admission,
            self.targets,
        )


def collate(
    rows: list[tuple[np.ndarray, list[tuple[int, ...]], np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    pad_to: int | None = None,
) -> SequenceBatch:
    """Stack per-timeline arrays (kinds, subtokens, values, ages, in_adm, targets)."""
    max_t = pad_to or max(len(r[0]) for r in rows)
    max_k = max((len(s) for r in rows for s in r[1]), default=1) or 1
    b = len(rows)
    kinds = torch.zeros((b, max_t), dtype=torch.int8)
    subtokens = torch.zeros((b, max_t, max_k), dtype=torch.long)
    values = torch.zeros((b, max_t), dtype=torch.float32)
    ages = torch.zeros((b, max_t, 5), dtype=torch.float32)
    in_adm = torch.zeros((b, max_t), dtype=torch.bool)
    targets = torch.full((b, max_t), IGNORE_TARGET, dtype=torch.long)
    for i, (k, subs, v, a, adm, tgt) in enumerate(rows):
        t = len(k)
        kinds[i, :t] = torch.from_numpy(k.astype(np.int8))
        for j, s in enumerate(subs):
            if s:
                subtokens[i, j, : len(s)] = torch.tensor(s, dtype=torch.long)
        values[i, :t] = torch.from_numpy(v.astype(np.float32))
        ages[i, :t] = torch.from_numpy(a.astype(np.float32))
        in_adm[i, :t] = torch.from_numpy(adm)
        targets[i, :t] = torch.from_numpy(tgt)
    return SequenceBatch(kinds, subtokens, values, ages, in_adm, targets)


class EntryEncoder(nn.Module):
    """Two feed-forward layers lifting a small input to d_model."""

    def __init__(self, in_dim: int, d_model: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, d_model)
        self.fc2 = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.d_k = config.d_k
        self.d_v = config.d_v
        self.wq = nn.Linear(config.d_model, config.n_heads * config.d_k)
        self.wk = nn.Linear(config.d_model, config.n_heads * config.d_k)
        self.wv = nn.Linear(config.d_model, config.n_heads * config.d_v)
        self.wo = nn.Linear(config.n_heads * config.d_v, config.d_model)

    def forward(
        self,
        x: torch.Tensor,
        past: tuple[torch.Tensor, torch.Tensor] | None = None,
        return_attention: bool = False,
    ):
        """Attend causally; ``past`` holds cached (k, v) from earlier positions."""
        b, t, _ = x.shape
        q = self.wq(x).view(b, t, self.n_heads, self.d_k).transpose(1, 2)
        k = self.wk(x).view(b, t, self.n_heads, self.d_k).transpose(1, 2)
        v = self.wv(x).view(b, t, self.n_heads, self.d_v).transpose(1, 2)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        past_len = k.shape[2] - t
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.d_k)
        if t > 1:
            total = k.shape[2]
            mask = torch.ones(t, total, dtype=torch.bool, device=x.device)
            mask = torch.tril(mask, diagonal=past_len)
            att = att.masked_fill(~mask, float("-inf"))
        att = F.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).contiguous().view(b, t, self.n_heads * self.d_v)
        y = self.wo(y)
        return y, (k, v), (att if return_attention else None)


class Block(nn.Module):
    """Pre-LN transformer block; dropout sits on the residual branches."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.fc1 = nn.Linear(config.d_model, config.d_ff)
        self.fc2 = nn.Linear(config.d_ff, config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, past=None, return_attention=False):
        y, cache, att = self.attn(self.ln1(x), past=past, return_attention=return_attention)
        x = x + self.dropout(y)
        x = x + self.dropout(self.fc2(F.gelu(self.fc1(self.ln2(x)))))
        return x, cache, att


class TimelineModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.vocab_size <= 0 or config.n_subtokens <= 0:
            raise ConfigError("vocab_size and n_subtokens must be set")
        self.config = config
        self.subtoken_embedding = nn.Embedding(config.n_subtokens, config.d_model, padding_idx=0)
        self.numeric_encoder = EntryEncoder(1, config.d_model)
        self.temporal_encoder = EntryEncoder(5, config.d_model)
        self.admission_encoding = nn.Parameter(torch.zeros(config.d_model))
        self.entry_norm = nn.LayerNorm(config.d_model)
        self.positional = nn.Parameter(torch.zeros(config.d_seq, config.d_model))
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_blocks))
        self.final_norm = nn.LayerNorm(config.d_model)
        self.head = nn.Linear(config.d_model, config.vocab_size)

    # -- encoding ----------------------------------------------------------

    def encode_raw(self, batch: SequenceBatch) -> torch.Tensor:
        """Per-entry encodings after L2 normalization, before anything else.

        A zero encoding (possible for zero-valued inputs while the encoder
        biases are zero) passes through unnormalized; dividing by the norm
        there would make the backward pass explode.
        """
        dtype = self.head.weight.dtype
        cat = self.subtoken_embedding(batch.subtokens).sum(dim=2)
        num = self.numeric_encoder(batch.values.to(dtype).unsqueeze(-1))
        tem = self.temporal_encoder(batch.ages.to(dtype))
        kinds = batch.kinds.unsqueeze(-1)
        x = torch.where(kinds == 1, cat, torch.where(kinds == 2, num, tem))
        norm = x.norm(dim=-1, keepdim=True)
        return x / torch.where(norm > 1e-6, norm, torch.ones_like(norm))

    def encode_inputs(self, batch: SequenceBatch, position_offset: int = 0) -> torch.Tensor:
        """Stack input: L2-normalized encodings + admission vector, layer norm,
        then learned positional embeddings."""
        x = self.encode_raw(batch)
        x = x + batch.in_admission.unsqueeze(-1) * self.admission_encoding
        x = self.entry_norm(x)
        t = x.shape[1]
        if position_offset + t > self.config.d_seq:
            raise ConfigError(f"sequence of {position_offset + t} exceeds d_seq={self.config.d_seq}")
        return x + self.positional[position_offset : position_offset + t]

    # -- forward -----------------------------------------------------------

    def forward(
        self,
        batch: SequenceBatch,
        past: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
        position_offset: int = 0,
        return_attention: bool = False,
    ):
        """Logits over the vocabulary at every position.

        Returns (logits, new_cache, attentions); ``attentions`` is a list of
        (B, heads, T, T_total) tensors per block when requested.
        """
        x = self.encode_inputs(batch, position_offset)
        new_cache = []
        attentions = []
        for i, block in enumerate(self.blocks):
            x, cache, att = block(
                x, past=past[i] if past else None, return_attention=return_attention
            )
            new_cache.append(cache)
            if return_attention:
                attentions.append(att)
        x = self.final_norm(x)
        return self.head(x), new_cache, attentions

    def loss(self, batch: SequenceBatch, reduction: str = "mean") -> tuple[torch.Tensor, int]:
        """Next-entry cross entropy; targets are shifted one position left."""
        logits, _, _ = self.forward(batch)
        flat = logits[:, :-1].reshape(-1, self.config.vocab_size)
        tgt = batch.targets[:, 1:].reshape(-1)
        n = int((tgt != IGNORE_TARGET).sum())
        loss = F.cross_entropy(flat, tgt, ignore_index=IGNORE_TARGET, reduction=reduction)
        return loss, n


def mean_attention(attentions: list[torch.Tensor]) -> torch.Tensor:
    """Arithmetic mean over blocks and heads, for visualization."""
    return torch.stack([a.mean(dim=1) for a in attentions]).mean(dim=0)


def init_parameters(model: TimelineModel, seed: int = 0) -> None:
    """Initialize weights N(0, 0.02), biases 0, layer norms 1; residual output
    projections are additionally scaled by 1/n_res (n_res residual layers)."""
    gen = torch.Generator().manual_seed(seed)
    n_res = 2 * model.config.n_blocks
    residual_projections = set()
    for block in model.blocks:
        residual_projections.add(id(block.attn.wo.weight))
        residual_projections.add(id(block.fc2.weight))
    for module in model.modules():
        if isinstance(module, nn.Linear):
            module.weight.data.normal_(0.0, 0.02, generator=gen)
            if id(module.weight) in residual_projections:
                module.weight.data.mul_(1.0 / n_res)
            if module.bias is not None:
                module.bias.data.zero_()
        elif isinstance(module, nn.Embedding):
            module.weight.data.normal_(0.0, 0.02, generator=gen)
            if module.padding_idx is not None:
                module.weight.data[module.padding_idx].zero_()
        elif isinstance(module, nn.LayerNorm):
            module.weight.data.fill_(1.0)
            module.bias.data.zero_()
    model.admission_encoding.data.normal_(0.0, 0.02, generator=gen)
    model.positional.data.normal_(0.0, 0.02, generator=gen)


def resample_count(l_seq: int, d_seq: int) -> int:
    """Training draws per timeline: longer timelines are resampled in
    proportion to length, capped at 10; short ones are seen once."""
    if l_seq <= d_seq:
        return 1
    return min(10, l_seq // d_seq)
