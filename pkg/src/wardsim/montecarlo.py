"""Prompt sampling, event detection, and Monte Carlo probability estimation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, time, timedelta
from pathlib import Path

import numpy as np
from scipy.stats import beta

from .ages import AgeStamp
from .errors import ConfigError, EvaluationError
from .records import RT_ADMISSION, RT_DISCHARGE, RT_LAB_RESULT, RT_LAB_TEST
from .timeline import CATEGORICAL, NUMERIC, TEMPORAL, PatientTimeline, TimelineEntry

MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class EventSpec:
    """A detectable clinical event.

    ``token-match`` matches a categorical token exactly (e.g. a discharge
    disposition).  ``code-prefix`` matches any code starting with one of the
    prefixes, which covers child concepts of a parent code.  ``lab-threshold``
    compares numeric results of the given test codes against a threshold;
    the result's unit must equal the spec unit (no silent conversion).
    """

    name: str
    kind: str
    token: str | None = None
    prefixes: tuple[str, ...] = ()
    codes: frozenset = frozenset()
    comparator: str = "<"
    threshold: float = 0.0
    unit: str | None = None
    record_types: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("token-match", "code-prefix", "lab-threshold"):
            raise ConfigError(f"unknown event kind {self.kind!r}")
        if self.kind == "lab-threshold" and self.comparator not in ("<", ">", "<=", ">="):
            raise ConfigError(f"bad comparator {self.comparator!r}")


def load_event_specs(path: str | Path) -> list[EventSpec]:
    """Declarative event list: JSON array of spec objects."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    specs = []
    for obj in raw:
        specs.append(
            EventSpec(
                name=obj["name"],
                kind=obj["kind"],
                token=obj.get("token"),
                prefixes=tuple(obj.get("prefixes", ())),
                codes=frozenset(obj.get("codes", ())),
                comparator=obj.get("comparator", "<"),
                threshold=float(obj.get("threshold", 0.0)),
                unit=obj.get("unit"),
                record_types=tuple(obj["record_types"]) if obj.get("record_types") else None,
            )
        )
    return specs


def save_event_specs(specs: list[EventSpec], path: str | Path) -> None:
    out = []
    for s in specs:
        out.append(
            {
                "name": s.name,
                "kind": s.kind,
                "token": s.token,
                "prefixes": list(s.prefixes),
                "codes": sorted(s.codes),
                "comparator": s.comparator,
                "threshold": s.threshold,
                "unit": s.unit,
                "record_types": list(s.record_types) if s.record_types else None,
            }
        )
    Path(path).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TimedEntry:
    """An entry paired with its times and lab-test context.

    ``minutes`` is the effective time (the report time for lab results,
    the recorded age otherwise) used for prompt/future membership and
    detection windows; ``specimen_minutes`` is the recorded age, which
    structural metrics (lengths, same-time pairing) key on.
    """

    minutes: int
    entry: TimelineEntry
    lab_code: str | None = None
    specimen_minutes: int = -1

    @property
    def structure_minutes(self) -> int:
        return self.specimen_minutes if self.specimen_minutes >= 0 else self.minutes


def walk_entries(
    entries: list[TimelineEntry], start_minutes: int | None = None
) -> list[TimedEntry]:
    """Pair every non-temporal entry with its age and preceding test code.

    Lab results carry their report time as the effective time when present
    (that is when the information exists for anyone downstream).
    """
    timed: list[TimedEntry] = []
    current = start_minutes
    lab_code = None
    for e in entries:
        if e.kind == TEMPORAL:
            current = e.age.total_minutes
            lab_code = None
            continue
        code = lab_code if e.record_type == RT_LAB_RESULT else None
        specimen = current if current is not None else 0
        minutes = specimen
        if e.record_type == RT_LAB_RESULT and e.reported is not None:
            minutes = e.reported.total_minutes
        timed.append(TimedEntry(minutes, e, code, specimen_minutes=specimen))
        lab_code = e.token if e.record_type == RT_LAB_TEST else None
    return timed


def _matches(timed: TimedEntry, spec: EventSpec) -> bool:
    e = timed.entry
    if spec.record_types is not None and e.record_type not in spec.record_types:
        return False
    if spec.kind == "token-match":
        return e.kind == CATEGORICAL and e.token == spec.token
    if spec.kind == "code-prefix":
        if e.kind != CATEGORICAL or e.token is None:
            return False
        if e.record_type == RT_LAB_RESULT:
            return False
        return any(e.token.startswith(p) for p in spec.prefixes)
    # lab-threshold
    if e.kind != NUMERIC or e.record_type != RT_LAB_RESULT:
        return False
    if timed.lab_code not in spec.codes:
        return False
    if spec.unit is not None and e.unit != spec.unit:
        raise EvaluationError(
            f"unit mismatch for {timed.lab_code}: result in {e.unit!r}, spec wants {spec.unit!r}"
        )
    x = float(e.value)
    if spec.comparator == "<":
        return x < spec.threshold
    if spec.comparator == "<=":
        return x <= spec.threshold
    if spec.comparator == ">":
        return x > spec.threshold
    return x >= spec.threshold


def detect_event(
    timed_entries: list[TimedEntry],
    spec: EventSpec,
    horizon_minutes: int | None = None,
    cut_minutes: int | None = None,
) -> bool:
    """True iff any entry within (cut, cut + horizon] satisfies the spec."""
    for timed in timed_entries:
        if cut_minutes is not None and timed.minutes <= cut_minutes:
            continue
        if (
            horizon_minutes is not None
            and cut_minutes is not None
            and timed.minutes > cut_minutes + horizon_minutes
        ):
            continue
        if _matches(timed, spec):
            return True
    return False


# ---------------------------------------------------------------------------
# Prompt sampling


@dataclass
class PromptSample:
    patient_id: str
    admission_index: int
    day_index: int  # 1-based hospital day of the noon cut
    cut_minutes: int
    prompt: PatientTimeline
    future: list[TimedEntry]
    dropped_unreported: int = 0

    def future_length(self, horizon_minutes: int | None = None) -> int:
        """Entry count of the real future within the horizon (temporal
        headers counted once per distinct time point, like generated output)."""
        chosen = [
            t
            for t in self.future
            if horizon_minutes is None or t.minutes <= self.cut_minutes + horizon_minutes
        ]
        return len(chosen) + len({t.structure_minutes for t in chosen})


def _admissions(timeline: PatientTimeline) -> list[tuple[int, int | None]]:
    """(admission_minutes, discharge_minutes | None) pairs, in order."""
    spans = []
    current = None
    minutes = None
    for e in timeline.entries:
        if e.kind == TEMPORAL:
            minutes = e.age.total_minutes
        elif e.record_type == RT_ADMISSION:
            current = minutes
        elif e.kind == CATEGORICAL and e.record_type == RT_DISCHARGE and current is not None:
            spans.append((current, minutes))
            current = None
    if current is not None:
        spans.append((current, None))
    return spans


def sample_prompts(
    timelines: list[PatientTimeline],
    max_days: int = 30,
    cut_hour: int = 12,
) -> list[PromptSample]:
    """One prompt-future pair per hospitalized day at the noon cut.

    The prompt holds every entry at or before the cut except lab results not
    yet reported; those surface in the future at their report time.
    """
    samples = []
    for timeline in timelines:
        birth = timeline.birthdate
        for adm_index, (admit_min, discharge_min) in enumerate(_admissions(timeline)):
            admit_dt = AgeStamp.from_total_minutes(admit_min, birth).to_timestamp(birth)
            day0 = datetime.combine(admit_dt.date(), time(hour=cut_hour))
            day_index = 0
            for offset in range(0, 10_000):
                cut_dt = day0 + timedelta(days=offset)
                cut_min = AgeStamp.from_timestamp(cut_dt, birth).total_minutes
                if cut_min < admit_min:
                    continue
                if discharge_min is not None and cut_min >= discharge_min:
                    break
                last = timeline.last_age()
                if discharge_min is None and last is not None and cut_min > last.total_minutes:
                    break  # censored admission: stop at the end of observation
                day_index += 1
                if day_index > max_days:
                    break
                samples.append(_build_sample(timeline, adm_index, day_index, cut_min))
    return samples


def _build_sample(
    timeline: PatientTimeline, adm_index: int, day_index: int, cut_min: int
) -> PromptSample:
    prompt_entries: list[TimelineEntry] = []
    dropped = 0
    current = None
    pending_code = None
    future: list[TimedEntry] = []
    for e in timeline.entries:
        if e.kind == TEMPORAL:
            current = e.age.total_minutes
            pending_code = None
            if current <= cut_min:
                prompt_entries.append(e)
            continue
        specimen = current if current is not None else 0
        code = pending_code if e.record_type == RT_LAB_RESULT else None
        effective = specimen
        if e.record_type == RT_LAB_RESULT and e.reported is not None:
            effective = e.reported.total_minutes
        if specimen <= cut_min:
            if effective <= cut_min:
                prompt_entries.append(e)
            else:
                dropped += 1
                future.append(TimedEntry(effective, e, code, specimen_minutes=specimen))
        else:
            future.append(TimedEntry(effective, e, code, specimen_minutes=specimen))
        pending_code = e.token if e.record_type == RT_LAB_TEST else None

    # drop temporal headers whose every event was deferred to the future
    cleaned: list[TimelineEntry] = []
    for i, e in enumerate(prompt_entries):
        if e.kind == TEMPORAL and i > 0:
            nxt = prompt_entries[i + 1] if i + 1 < len(prompt_entries) else None
            if nxt is None or nxt.kind == TEMPORAL:
                continue
        cleaned.append(e)
    future.sort(key=lambda t: t.minutes)
    prompt = PatientTimeline(timeline.patient_id, timeline.birthdate, timeline.sex_token, cleaned)
    return PromptSample(
        patient_id=timeline.patient_id,
        admission_index=adm_index,
        day_index=day_index,
        cut_minutes=cut_min,
        prompt=prompt,
        future=future,
        dropped_unreported=dropped,
    )


# ---------------------------------------------------------------------------
# Monte Carlo estimation


@dataclass
class PredictionRecord:
    prompt_id: str
    event: str
    horizon_days: int
    p_hat: float
    outcome: bool
    n_sim: int
    n_event: int
    n_truncated: int = 0


def estimate_probability(
    generated_futures: list[list[TimedEntry]],
    spec: EventSpec,
    horizon_minutes: int,
    cut_minutes: int,
    truncated_flags: list[bool] | None = None,
    drop_truncated: bool = False,
) -> tuple[float, int, int]:
    """p_hat = n_event / n_sim over simulated futures.

    Truncated simulations stay in the denominator by default (scanned up to
    their truncation point); ``drop_truncated`` reproduces an exclusion
    policy instead.
    """
    flags = truncated_flags or [False] * len(generated_futures)
    n_sim = 0
    n_event = 0
    for timed, truncated in zip(generated_futures, flags):
        if drop_truncated and truncated:
            continue
        n_sim += 1
        if detect_event(timed, spec, horizon_minutes, cut_minutes):
            n_event += 1
    if n_sim == 0:
        raise EvaluationError("no simulations to estimate from")
    return n_event / n_sim, n_event, n_sim


def binomial_interval(n_event: int, n_sim: int, level: float = 0.95) -> tuple[float, float]:
    """Exact (Clopper-Pearson) binomial confidence interval."""
    alpha = 1.0 - level
    lo = 0.0 if n_event == 0 else float(beta.ppf(alpha / 2, n_event, n_sim - n_event + 1))
    hi = 1.0 if n_event == n_sim else float(beta.ppf(1 - alpha / 2, n_event + 1, n_sim - n_event))
    return lo, hi
