"""Unified vocabulary and timeline vectorization.

The vocabulary is the model's full output space, partitioned into disjoint,
contiguous id groups: predefined special tokens, medical-code tokens,
frequency-rank tokens for nonnumeric lab results, numeric percentile bins,
and time-progression tokens.  Medical codes decompose into positional
subtokens that are embedded separately and summed, so the embedding table
stays small and any coding system plugs in through a scheme definition.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tokens as tk
from .errors import ConfigError, SchemeError, TokenizationError, UnknownCodeError
from .numcodec import PercentileTable
from .records import (
    RT_DIAGNOSIS,
    RT_LAB_RESULT,
    RT_LAB_TEST,
    RT_MEDICATION,
)
from .timecodec import MINUTES_PER_DAY, TimeCodec, encode_age
from .timeline import CATEGORICAL, NUMERIC, TEMPORAL, PatientTimeline, TimelineEntry

GROUP_SPECIAL = "special"
GROUP_CODE = "code"
GROUP_RANK = "rank"
GROUP_NUMERIC = "numeric"
GROUP_TIME = "time"

IGNORE_TARGET = -100


# ---------------------------------------------------------------------------
# Subtoken schemes


@dataclass(frozen=True)
class SubtokenScheme:
    """Positional decomposition of one code system.

    Each segment is (offset, length, template); the template renders the
    sliced characters inside a padded pattern (``{}`` marks the content) so
    subtokens from different positions never collide.  ``segments=None``
    treats the whole code as a single subtoken.
    """

    prefix: str
    segments: tuple[tuple[int, int, str], ...] | None = None
    min_length: int = 1

    def __post_init__(self):
        if self.segments is not None:
            covered = []
            for offset, length, template in self.segments:
                if offset < 0 or length <= 0 or "{}" not in template:
                    raise SchemeError(f"bad segment ({offset}, {length}, {template!r})")
                covered.extend(range(offset, offset + length))
            if sorted(covered) != list(range(len(covered))):
                raise SchemeError("segments must cover the code contiguously without overlap")


# Default schemes mirroring the hierarchical structure of the source
# coding systems (7-character ATC, 3-5 character ICD-10).
ATC_SCHEME = SubtokenScheme(
    prefix=tk.SUB_MEDICATION,
    segments=((0, 1, "{}**"), (1, 2, "{}****"), (3, 1, "{}"), (4, 1, "**{}"), (5, 2, "*{}")),
)
ICD10_SCHEME = SubtokenScheme(
    prefix=tk.SUB_DIAGNOSIS,
    segments=((0, 1, "{}****"), (1, 2, "*{}**"), (3, 1, "***{}*"), (4, 1, "****{}")),
    min_length=3,
)


def degenerate_scheme(prefix: str) -> SubtokenScheme:
    return SubtokenScheme(prefix=prefix, segments=None)


DEFAULT_SCHEMES = {
    RT_DIAGNOSIS: ICD10_SCHEME,
    RT_MEDICATION: ATC_SCHEME,
    RT_LAB_TEST: degenerate_scheme(tk.SUB_LAB),
}


def decompose_code(code: str, scheme: SubtokenScheme, provisional: bool = False) -> list[str]:
    """Split a code into its subtoken strings (record-kind prefix first)."""
    if len(code) < scheme.min_length:
        raise TokenizationError(f"code {code!r} shorter than scheme minimum {scheme.min_length}")
    parts = [scheme.prefix]
    if scheme.segments is None:
        parts.append(f"[{code}]")
    else:
        if scheme.segments and len(code) > max(o + n for o, n, _ in scheme.segments):
            raise TokenizationError(f"code {code!r} longer than scheme coverage")
        for offset, length, template in scheme.segments:
            piece = code[offset : offset + length]
            if not piece:
                continue
            parts.append("[" + template.format(piece) + "]")
    if provisional:
        parts.append(tk.SUB_PROVISIONAL)
    return parts


# ---------------------------------------------------------------------------
# Nonnumeric result ranking


@dataclass
class NonNumericRankTable:
    """Per lab code, distinct nonnumeric results ordered by descending frequency."""

    ranked: dict[str, list[str]] = field(default_factory=dict)

    def rank_of(self, code: str, value: str) -> int:
        """1-based rank of a result for its test code."""
        try:
            return self.ranked[code].index(value) + 1
        except (KeyError, ValueError):
            raise UnknownCodeError(code, f"nonnumeric result {value!r} not ranked")

    def value_of(self, code: str, rank: int) -> str | None:
        values = self.ranked.get(code, [])
        if 1 <= rank <= len(values):
            return values[rank - 1]
        return None

    def n_ranks(self, code: str) -> int:
        return len(self.ranked.get(code, []))

    @property
    def max_rank(self) -> int:
        return max((len(v) for v in self.ranked.values()), default=0)


def rank_nonnumeric_results(timelines: list[PatientTimeline]) -> NonNumericRankTable:
    """Build the rank table from cleaned timelines.

    Results already covered by the predefined (+)/(-)/(+/-) tokens are
    skipped.  Frequency ties break lexicographically so rebuilding on the
    same corpus is deterministic.
    """
    counts: dict[str, Counter] = {}
    for timeline in timelines:
        pending = None
        for entry in timeline.entries:
            if entry.record_type == RT_LAB_TEST:
                pending = entry.token
            elif entry.record_type == RT_LAB_RESULT and entry.kind == CATEGORICAL:
                if pending is not None and entry.token not in tk.RESULT_TOKEN_BY_VALUE:
                    counts.setdefault(pending, Counter())[entry.token] += 1
    table = NonNumericRankTable()
    for code, counter in counts.items():
        table.ranked[code] = [v for v, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]
    return table


def rank_token_name(rank: int) -> str:
    return f"[TOP{rank}]"


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass(frozen=True)
class VocabToken:
    id: int
    group: str
    name: str
    record_type: str | None = None
    code: str | None = None
    provisional: bool = False
    rank: int = 0
    bin_index: int = 0  # 1-based numeric bin
    time_index: int = -1
    subtoken_ids: tuple[int, ...] = ()


@dataclass
class Vocabulary:
    """Immutable after build; all lookups are precomputed."""

    tokens: list[VocabToken]
    subtoken_index: dict[str, int]  # embedding indices; 0 reserved for padding
    rank_table: NonNumericRankTable
    n_bins: int
    timecodec: TimeCodec
    special_id: dict[str, int] = field(default_factory=dict)
    code_id: dict[tuple[str, str, bool], int] = field(default_factory=dict)
    group_range: dict[str, range] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_subtokens(self) -> int:
        return len(self.subtoken_index) + 1  # + padding slot

    def group_sizes(self) -> dict[str, int]:
        return {g: len(r) for g, r in self.group_range.items()}

    def numeric_id(self, bin_index: int) -> int:
        return self.group_range[GROUP_NUMERIC].start + bin_index - 1

    def time_id(self, time_index: int) -> int:
        return self.group_range[GROUP_TIME].start + time_index

    def rank_id(self, rank: int) -> int:
        return self.group_range[GROUP_RANK].start + rank - 1

    def token_for_code(self, record_type: str, code: str, provisional: bool = False) -> int:
        try:
            return self.code_id[(record_type, code, provisional)]
        except KeyError:
            raise UnknownCodeError(code, f"record type {record_type}, provisional={provisional}")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(f"{t.id}\x1f{t.group}\x1f{t.name}\x1f{t.subtoken_ids}\n".encode())
        h.update(repr(sorted(self.subtoken_index.items())).encode())
        return h.hexdigest()


def build_vocabulary(
    timelines: list[PatientTimeline],
    schemes: dict[str, SubtokenScheme] | None = None,
    n_bins: int = 601,
    timecodec: TimeCodec | None = None,
) -> Vocabulary:
    """Construct the unified vocabulary from a training corpus.

    Ids are contiguous and grouped: special tokens first, then all observed
    medical codes (provisional diagnoses distinct from confirmed ones), then
    nonnumeric rank tokens, numeric bins, and time-progression tokens.
    Rebuilding on the same corpus yields identical id assignment.
    """
    if not timelines:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    schemes = dict(DEFAULT_SCHEMES, **(schemes or {}))
    timecodec = timecodec or TimeCodec()

    observed: set[tuple[str, str, bool]] = set()
    for timeline in timelines:
        for e in timeline.entries:
            if e.kind == CATEGORICAL and e.record_type in (RT_DIAGNOSIS, RT_MEDICATION, RT_LAB_TEST):
                observed.add((e.record_type, e.token, e.provisional))
    rank_table = rank_nonnumeric_results(timelines)

    subtoken_index: dict[str, int] = {}

    def intern(parts: list[str]) -> tuple[int, ...]:
        ids = []
        for s in parts:
            if s not in subtoken_index:
                subtoken_index[s] = len(subtoken_index) + 1
            ids.append(subtoken_index[s])
        return tuple(ids)

    vocab_tokens: list[VocabToken] = []

    def add(token: VocabToken) -> None:
        vocab_tokens.append(token)

    group_range: dict[str, range] = {}
    start = 0
    for name in tk.SPECIAL_TOKENS:
        add(VocabToken(len(vocab_tokens), GROUP_SPECIAL, name, subtoken_ids=intern([name])))
    group_range[GROUP_SPECIAL] = range(start, len(vocab_tokens))

    start = len(vocab_tokens)
    code_id: dict[tuple[str, str, bool], int] = {}
    for record_type, code, provisional in sorted(observed):
        scheme = schemes.get(record_type, degenerate_scheme("[ANY]"))
        name = f"{scheme.prefix}{code}" + (tk.SUB_PROVISIONAL if provisional else "")
        token = VocabToken(
            len(vocab_tokens),
            GROUP_CODE,
            name,
            record_type=record_type,
            code=code,
            provisional=provisional,
            subtoken_ids=intern(decompose_code(code, scheme, provisional)),
        )
        code_id[(record_type, code, provisional)] = token.id
        add(token)
    group_range[GROUP_CODE] = range(start, len(vocab_tokens))

    start = len(vocab_tokens)
    for rank in range(1, rank_table.max_rank + 1):
        name = rank_token_name(rank)
        add(VocabToken(len(vocab_tokens), GROUP_RANK, name, rank=rank, subtoken_ids=intern([name])))
    group_range[GROUP_RANK] = range(start, len(vocab_tokens))

    start = len(vocab_tokens)
    for b in range(1, n_bins + 1):
        add(VocabToken(len(vocab_tokens), GROUP_NUMERIC, f"[BIN{b}]", bin_index=b))
    group_range[GROUP_NUMERIC] = range(start, len(vocab_tokens))

    start = len(vocab_tokens)
    for i, label in enumerate(timecodec.labels()):
        add(VocabToken(len(vocab_tokens), GROUP_TIME, label, time_index=i))
    group_range[GROUP_TIME] = range(start, len(vocab_tokens))

    vocab = Vocabulary(
        tokens=vocab_tokens,
        subtoken_index=subtoken_index,
        rank_table=rank_table,
        n_bins=n_bins,
        timecodec=timecodec,
        special_id={name: i for i, name in enumerate(tk.SPECIAL_TOKENS)},
        code_id=code_id,
        group_range=group_range,
    )
    return vocab


# ---------------------------------------------------------------------------
# Entry vectorization


@dataclass(frozen=True)
class EntryVectors:
    """Model input for one timeline entry."""

    kind: int  # 1 categorical, 2 numeric, 3 temporal
    subtoken_ids: tuple[int, ...] = ()
    value: float = 0.0
    age_vector: tuple[float, ...] = ()
    in_admission: bool = False


KIND_CATEGORICAL = 1
KIND_NUMERIC = 2
KIND_TEMPORAL = 3


def categorical_token_id(entry: TimelineEntry, vocab: Vocabulary, lab_code: str | None) -> int:
    """Vocabulary id of a categorical entry (results resolved via their test code)."""
    if entry.record_type == RT_LAB_RESULT:
        if entry.token in tk.RESULT_TOKEN_BY_VALUE:
            return vocab.special_id[tk.RESULT_TOKEN_BY_VALUE[entry.token]]
        if lab_code is None:
            raise TokenizationError("lab result without a preceding test code")
        return vocab.rank_id(vocab.rank_table.rank_of(lab_code, entry.token))
    if entry.token in vocab.special_id:
        return vocab.special_id[entry.token]
    return vocab.token_for_code(entry.record_type, entry.token, entry.provisional)


def tokenize_entry(
    entry: TimelineEntry,
    vocab: Vocabulary,
    ptable: PercentileTable,
    lab_code: str | None = None,
) -> EntryVectors:
    """Convert one entry into its model input vector.

    Categorical entries become subtoken embedding indices, numeric entries a
    single normalized value, and temporal entries the scaled 5-dimensional
    age.  ``lab_code`` is the preceding test code, required for result
    entries.  Unknown codes raise :class:`UnknownCodeError`.
    """
    if entry.kind == CATEGORICAL:
        token_id = categorical_token_id(entry, vocab, lab_code)
        return EntryVectors(
            KIND_CATEGORICAL,
            subtoken_ids=vocab.tokens[token_id].subtoken_ids,
            in_admission=entry.in_admission,
        )
    if entry.kind == NUMERIC:
        if lab_code is None:
            raise TokenizationError("numeric result without a preceding test code")
        normalized, _ = ptable.encode_value(float(entry.value), lab_code, entry.unit or "")
        return EntryVectors(KIND_NUMERIC, value=normalized, in_admission=entry.in_admission)
    if entry.kind == TEMPORAL:
        return EntryVectors(
            KIND_TEMPORAL,
            age_vector=tuple(encode_age(entry.age)),
            in_admission=entry.in_admission,
        )
    raise TokenizationError(f"unknown entry kind {entry.kind!r}")


@dataclass
class TokenizedTimeline:
    """Arrays aligned with the timeline's entries, ready for batching."""

    patient_id: str
    kinds: np.ndarray  # int8
    subtokens: list[tuple[int, ...]]
    values: np.ndarray  # float32
    ages: np.ndarray  # float32 (n, 5)
    in_admission: np.ndarray  # bool
    targets: np.ndarray  # int64 vocab ids, IGNORE_TARGET where unsupervised
    overflow_progressions: int = 0

    def __len__(self) -> int:
        return len(self.kinds)


def tokenize_timeline(
    timeline: PatientTimeline, vocab: Vocabulary, ptable: PercentileTable
) -> TokenizedTimeline:
    """Vectorize a whole timeline, including per-entry prediction targets.

    Target ids: categorical entries use their vocabulary id, numeric entries
    the id of their percentile bin, and temporal entries the id of the
    time-progression token from the previous temporal entry.  The first
    temporal entry has no progression and is excluded from the loss, as are
    progressions beyond the horizon limit (counted in
    ``overflow_progressions``).
    """
    n = len(timeline.entries)
    kinds = np.zeros(n, dtype=np.int8)
    subtokens: list[tuple[int, ...]] = []
    values = np.zeros(n, dtype=np.float32)
    ages = np.zeros((n, 5), dtype=np.float32)
    in_adm = np.zeros(n, dtype=bool)
    targets = np.full(n, IGNORE_TARGET, dtype=np.int64)
    overflow = 0

    lab_code: str | None = None
    prev_temporal_minutes: int | None = None
    codec = vocab.timecodec
    for i, entry in enumerate(timeline.entries):
        vectors = tokenize_entry(entry, vocab, ptable, lab_code)
        kinds[i] = vectors.kind
        subtokens.append(vectors.subtoken_ids)
        in_adm[i] = vectors.in_admission
        if vectors.kind == KIND_CATEGORICAL:
            targets[i] = categorical_token_id(entry, vocab, lab_code)
        elif vectors.kind == KIND_NUMERIC:
            values[i] = vectors.value
            _, bin_index = ptable.encode_value(float(entry.value), lab_code, entry.unit or "")
            targets[i] = vocab.numeric_id(bin_index)
        else:
            ages[i] = vectors.age_vector
            minutes = entry.age.total_minutes
            if prev_temporal_minutes is not None:
                delta = minutes - prev_temporal_minutes
                if 0 <= delta < codec.scheme.limit_minutes:
                    targets[i] = vocab.time_id(
                        codec.encode_progression(delta, entry.age.clock_minute_of_day)
                    )
                else:
                    overflow += 1
            prev_temporal_minutes = minutes
        lab_code = entry.token if entry.record_type == RT_LAB_TEST else None

    return TokenizedTimeline(
        patient_id=timeline.patient_id,
        kinds=kinds,
        subtokens=subtokens,
        values=values,
        ages=ages,
        in_admission=in_adm,
        targets=targets,
        overflow_progressions=overflow,
    )


# ---------------------------------------------------------------------------
# Artifact serialization

_HEADER = "# wardsim-vocab v1"


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Plain-text, diff-friendly vocabulary artifact."""
    lines = [f"{_HEADER} n_bins={vocab.n_bins}"]
    lines.append(f"# groups {' '.join(f'{g}={len(r)}' for g, r in vocab.group_range.items())}")
    lines.append(f"# subtokens {len(vocab.subtoken_index)}")
    for name, idx in sorted(vocab.subtoken_index.items(), key=lambda kv: kv[1]):
        lines.append(f"{idx}\t{name}")
    lines.append(f"# tokens {len(vocab.tokens)}")
    for t in vocab.tokens:
        lines.append(
            "\t".join(
                [
                    str(t.id),
                    t.group,
                    t.name,
                    t.record_type or "",
                    t.code or "",
                    "1" if t.provisional else "0",
                    str(t.rank),
                    str(t.bin_index),
                    str(t.time_index),
                    ",".join(map(str, t.subtoken_ids)),
                ]
            )
        )
    lines.append("# ranks")
    for code in sorted(vocab.rank_table.ranked):
        lines.append(code + "\t" + "\x1f".join(vocab.rank_table.ranked[code]))
    scheme = vocab.timecodec.scheme
    lines.append(
        "# timescheme "
        f"short_step={scheme.short_step} limit_days={scheme.limit_days} "
        f"bounds={','.join(map(str, scheme.segment_bounds))} "
        f"widths={','.join(map(str, scheme.segment_widths))} "
        f"hour_step={scheme.hour_step} include_long={int(scheme.include_long)}"
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    from .timecodec import TimeBinScheme

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_HEADER):
        raise ConfigError(f"{path}: not a wardsim vocabulary")
    n_bins = int(lines[0].split("n_bins=")[1])
    i = 2
    n_sub = int(lines[i].split()[-1])
    i += 1
    subtoken_index = {}
    for _ in range(n_sub):
        idx, name = lines[i].split("\t")
        subtoken_index[name] = int(idx)
        i += 1
    n_tokens = int(lines[i].split()[-1])
    i += 1
    tokens: list[VocabToken] = []
    for _ in range(n_tokens):
        (tid, group, name, record_type, code, prov, rank, bin_index, time_index, subs) = lines[
            i
        ].split("\t")
        tokens.append(
            VocabToken(
                int(tid),
                group,
                name,
                record_type=record_type or None,
                code=code or None,
                provisional=prov == "1",
                rank=int(rank),
                bin_index=int(bin_index),
                time_index=int(time_index),
                subtoken_ids=tuple(int(s) for s in subs.split(",") if s),
            )
        )
        i += 1
    assert lines[i] == "# ranks"
    i += 1
    rank_table = NonNumericRankTable()
    while i < len(lines) and not lines[i].startswith("# timescheme"):
        code, values = lines[i].split("\t", 1)
        rank_table.ranked[code] = values.split("\x1f")
        i += 1
    params = dict(kv.split("=") for kv in lines[i][len("# timescheme ") :].split())
    scheme = TimeBinScheme(
        short_step=int(params["short_step"]),
        limit_days=int(params["limit_days"]),
        segment_bounds=tuple(int(x) for x in params["bounds"].split(",")),
        segment_widths=tuple(int(x) for x in params["widths"].split(",")),
        hour_step=int(params["hour_step"]),
        include_long=bool(int(params["include_long"])),
    )

    counts = Counter(t.group for t in tokens)
    group_range: dict[str, range] = {}
    start = 0
    for g in (GROUP_SPECIAL, GROUP_CODE, GROUP_RANK, GROUP_NUMERIC, GROUP_TIME):
        group_range[g] = range(start, start + counts.get(g, 0))
        start += counts.get(g, 0)
    return Vocabulary(
        tokens=tokens,
        subtoken_index=subtoken_index,
        rank_table=rank_table,
        n_bins=n_bins,
        timecodec=TimeCodec(scheme),
        special_id={name: idx for idx, name in enumerate(tk.SPECIAL_TOKENS)},
        code_id={
            (t.record_type, t.code, t.provisional): t.id for t in tokens if t.group == GROUP_CODE
        },
        group_range=group_range,
    )
