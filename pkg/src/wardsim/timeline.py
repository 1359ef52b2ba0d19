"""Patient timelines: the ordered entry structure and its tabular conversion.

A timeline is a flat sequence of entries of three kinds.  A temporal entry
opens a time point; every clinical event recorded at that time sits beneath
it.  Categorical entries carry a code or token; numeric entries carry a lab
result value with its unit.  Lab results sit immediately after their test
code, and discharge dispositions immediately after the discharge event.
The conversion to and from tabular records is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date, datetime

from . import tokens
from .ages import REFERENCE_BIRTHDATE, AgeStamp, truncate_to_minute
from .errors import TimelineStructureError
from .records import (
    RT_ADMISSION,
    RT_DEMOGRAPHIC,
    RT_DIAGNOSIS,
    RT_DISCHARGE,
    RT_DISPOSITION,
    RT_EOT,
    RT_LAB_RESULT,
    RT_LAB_TEST,
    RT_MEDICATION,
    TabularRecord,
    parse_decimal,
)

TEMPORAL = "temporal"
CATEGORICAL = "categorical"
NUMERIC = "numeric"

# Stable ordering of record types that share a timestamp; ties broken by
# input order.  The temporal header itself always precedes its events.
_SAME_AGE_ORDER = {
    RT_ADMISSION: 0,
    RT_DISCHARGE: 1,
    RT_DISPOSITION: 2,
    RT_DIAGNOSIS: 3,
    RT_MEDICATION: 4,
    RT_LAB_TEST: 5,
    RT_LAB_RESULT: 5,
    RT_EOT: 9,
}


@dataclass(frozen=True)
class TimelineEntry:
    kind: str
    record_type: str
    age: AgeStamp | None = None  # temporal entries only
    token: str | None = None  # categorical payload: code, special token, or result string
    value: str | None = None  # numeric payload, decimal string
    unit: str | None = None
    provisional: bool = False
    in_admission: bool = False
    reported: AgeStamp | None = None  # lab results only


@dataclass
class PatientTimeline:
    patient_id: str
    birthdate: date
    sex_token: str
    entries: list[TimelineEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def temporal_entries(self) -> list[TimelineEntry]:
        return [e for e in self.entries if e.kind == TEMPORAL]

    def last_age(self) -> AgeStamp | None:
        for e in reversed(self.entries):
            if e.kind == TEMPORAL:
                return e.age
        return None


def _resolve_age(record: TabularRecord, birthdate: date) -> AgeStamp:
    if record.timestamp:
        return AgeStamp.from_timestamp(datetime.fromisoformat(record.timestamp), birthdate)
    return AgeStamp.parse_duration(record.age, birthdate)


def _resolve_reported(record: TabularRecord, birthdate: date) -> AgeStamp | None:
    if not record.reported:
        return None
    text = record.reported
    if text.startswith("P"):
        return AgeStamp.parse_duration(text, birthdate)
    return AgeStamp.from_timestamp(datetime.fromisoformat(text), birthdate)


def build_timeline(
    records: list[TabularRecord],
    *,
    default_birthdate: date = REFERENCE_BIRTHDATE,
    append_eot: bool = False,
) -> PatientTimeline:
    """Assemble one patient's records into a structured timeline.

    Records must already be cleaned and belong to a single patient.  Lab
    rows expand into a test entry plus a result entry; discharge rows expand
    into the discharge event plus its disposition token.  Raises
    :class:`TimelineStructureError` on discharge without admission or a
    nested admission.
    """
    if not records:
        raise TimelineStructureError("empty_input", "no records for patient")
    patient_ids = {r.patient_id for r in records}
    if len(patient_ids) != 1:
        raise TimelineStructureError("multiple_patients", f"got {sorted(patient_ids)}")
    patient_id = records[0].patient_id

    demographic = next((r for r in records if r.record_type == RT_DEMOGRAPHIC), None)
    if demographic is None:
        raise TimelineStructureError("missing_demographic", patient_id)
    sex_token = demographic.code or tokens.SEX_UNKNOWN
    if sex_token not in tokens.SEX_TOKENS:
        raise TimelineStructureError("bad_sex_token", f"{sex_token!r}")
    if demographic.timestamp:
        birthdate = truncate_to_minute(datetime.fromisoformat(demographic.timestamp)).date()
    else:
        birthdate = default_birthdate

    events = [r for r in records if r.record_type != RT_DEMOGRAPHIC]
    keyed = []
    for i, rec in enumerate(events):
        age = _resolve_age(rec, birthdate)
        content = (rec.code or "", rec.value or "", rec.unit or "", rec.disposition or "", rec.provisional)
        keyed.append(
            ((age.total_minutes, _SAME_AGE_ORDER.get(rec.record_type, 8), content, i), age, rec)
        )
    keyed.sort(key=lambda t: t[0])

    if keyed:
        first_age = keyed[0][1]
    else:
        first_age = _resolve_age(demographic, birthdate) if (
            demographic.timestamp or demographic.age
        ) else AgeStamp.from_total_minutes(0, birthdate)

    entries: list[TimelineEntry] = [
        TimelineEntry(TEMPORAL, RT_DEMOGRAPHIC, age=first_age),
        TimelineEntry(CATEGORICAL, RT_DEMOGRAPHIC, token=sex_token),
    ]
    current_age = first_age
    admitted = False

    def emit(entry: TimelineEntry) -> None:
        entries.append(entry)

    for _, age, rec in keyed:
        if age.total_minutes != current_age.total_minutes:
            emit(TimelineEntry(TEMPORAL, rec.record_type, age=age, in_admission=admitted))
            current_age = age

        if rec.record_type == RT_ADMISSION:
            if admitted:
                raise TimelineStructureError("nested_admission", _describe(rec))
            admitted = True
            emit(TimelineEntry(CATEGORICAL, RT_ADMISSION, token=tokens.ADMISSION, in_admission=True))
        elif rec.record_type == RT_DISCHARGE:
            if not admitted:
                raise TimelineStructureError("discharge_without_admission", _describe(rec))
            disposition = rec.disposition or tokens.DISCHARGE_ALIVE
            if disposition not in tokens.DISPOSITION_TOKENS:
                raise TimelineStructureError("bad_disposition", f"{disposition!r}")
            emit(TimelineEntry(CATEGORICAL, RT_DISCHARGE, token=tokens.DISCHARGE, in_admission=True))
            emit(TimelineEntry(CATEGORICAL, RT_DISPOSITION, token=disposition, in_admission=True))
            admitted = False
        elif rec.record_type == RT_DIAGNOSIS:
            emit(
                TimelineEntry(
                    CATEGORICAL,
                    RT_DIAGNOSIS,
                    token=rec.code,
                    provisional=rec.provisional,
                    in_admission=admitted,
                )
            )
        elif rec.record_type == RT_MEDICATION:
            emit(TimelineEntry(CATEGORICAL, RT_MEDICATION, token=rec.code, in_admission=admitted))
        elif rec.record_type == RT_LAB_TEST:
            emit(TimelineEntry(CATEGORICAL, RT_LAB_TEST, token=rec.code, in_admission=admitted))
            if rec.value is not None:
                reported = _resolve_reported(rec, birthdate)
                if parse_decimal(rec.value) is not None:
                    emit(
                        TimelineEntry(
                            NUMERIC,
                            RT_LAB_RESULT,
                            value=rec.value,
                            unit=rec.unit,
                            in_admission=admitted,
                            reported=reported,
                        )
                    )
                else:
                    emit(
                        TimelineEntry(
                            CATEGORICAL,
                            RT_LAB_RESULT,
                            token=rec.value,
                            in_admission=admitted,
                            reported=reported,
                        )
                    )
        elif rec.record_type == RT_EOT:
            emit(TimelineEntry(CATEGORICAL, RT_EOT, token=tokens.END_OF_TIMELINE, in_admission=admitted))

    timeline = PatientTimeline(patient_id, birthdate, sex_token, entries)
    if append_eot and not any(e.record_type == RT_EOT for e in entries):
        entries.append(
            TimelineEntry(CATEGORICAL, RT_EOT, token=tokens.END_OF_TIMELINE, in_admission=admitted)
        )
    return timeline


def _describe(rec: TabularRecord) -> str:
    when = rec.timestamp or rec.age or "?"
    return f"{rec.record_type} at {when} (patient {rec.patient_id})"


def to_tabular(timeline: PatientTimeline) -> list[TabularRecord]:
    """Convert a valid timeline back to tabular rows (inverse of build)."""
    birth = timeline.birthdate
    rows: list[TabularRecord] = [
        TabularRecord(
            patient_id=timeline.patient_id,
            record_type=RT_DEMOGRAPHIC,
            timestamp=datetime.combine(birth, datetime.min.time()).isoformat(),
            age="P0Y0M0DT0H0M",
            code=timeline.sex_token,
        )
    ]
    current_age: AgeStamp | None = None
    entries = timeline.entries
    i = 0
    while i < len(entries):
        e = entries[i]
        if e.kind == TEMPORAL:
            current_age = e.age
            i += 1
            continue
        if e.record_type == RT_DEMOGRAPHIC:  # sex token entry
            i += 1
            continue
        ts = current_age.to_timestamp(birth).isoformat() if current_age else None
        dur = current_age.to_duration() if current_age else None
        if e.record_type == RT_ADMISSION:
            rows.append(
                TabularRecord(timeline.patient_id, RT_ADMISSION, ts, dur, code=tokens.ADMISSION)
            )
        elif e.record_type == RT_DISCHARGE:
            disposition = None
            if i + 1 < len(entries) and entries[i + 1].record_type == RT_DISPOSITION:
                disposition = entries[i + 1].token
                i += 1
            rows.append(
                TabularRecord(
                    timeline.patient_id,
                    RT_DISCHARGE,
                    ts,
                    dur,
                    code=tokens.DISCHARGE,
                    disposition=disposition,
                )
            )
        elif e.record_type == RT_DIAGNOSIS:
            rows.append(
                TabularRecord(
                    timeline.patient_id, RT_DIAGNOSIS, ts, dur, code=e.token, provisional=e.provisional
                )
            )
        elif e.record_type == RT_MEDICATION:
            rows.append(TabularRecord(timeline.patient_id, RT_MEDICATION, ts, dur, code=e.token))
        elif e.record_type == RT_LAB_TEST:
            value = unit = reported = None
            if i + 1 < len(entries) and entries[i + 1].record_type == RT_LAB_RESULT:
                result = entries[i + 1]
                value = result.value if result.kind == NUMERIC else result.token
                unit = result.unit
                if result.reported is not None:
                    reported = result.reported.to_timestamp(birth).isoformat()
                i += 1
            rows.append(
                TabularRecord(
                    timeline.patient_id,
                    RT_LAB_TEST,
                    ts,
                    dur,
                    code=e.token,
                    value=value,
                    unit=unit,
                    reported=reported,
                )
            )
        elif e.record_type == RT_EOT:
            rows.append(TabularRecord(timeline.patient_id, RT_EOT, ts, dur, code=tokens.END_OF_TIMELINE))
        i += 1
    return rows


# ---------------------------------------------------------------------------
# Validation

RULE_DEMOGRAPHIC_HEADER = "demographic_header"
RULE_AGE_MONOTONIC = "age_monotonic"
RULE_TEMPORAL_DUPLICATE = "temporal_duplicate"
RULE_LAB_RESULT_ADJACENCY = "lab_result_adjacency"
RULE_DISPOSITION_ADJACENCY = "disposition_adjacency"
RULE_ADMISSION_ALTERNATION = "admission_alternation"
RULE_NUMERIC_FIELDS = "numeric_fields"


def validate_timeline(timeline: PatientTimeline) -> list[str]:
    """Check every structural invariant; returns violated rule ids."""
    violations: list[str] = []
    entries = timeline.entries

    if (
        len(entries) < 2
        or entries[0].kind != TEMPORAL
        or entries[1].kind != CATEGORICAL
        or entries[1].token not in tokens.SEX_TOKENS
        or entries[1].token != timeline.sex_token
    ):
        violations.append(RULE_DEMOGRAPHIC_HEADER)

    last_minutes = None
    prev: TimelineEntry | None = None
    admitted = False
    for e in entries:
        if e.kind == TEMPORAL:
            if e.age is None:
                violations.append(RULE_AGE_MONOTONIC)
            else:
                if last_minutes is not None and e.age.total_minutes < last_minutes:
                    violations.append(RULE_AGE_MONOTONIC)
                if (
                    prev is not None
                    and prev.kind == TEMPORAL
                    and prev.age is not None
                    and prev.age.total_minutes == e.age.total_minutes
                ):
                    violations.append(RULE_TEMPORAL_DUPLICATE)
                last_minutes = e.age.total_minutes
        elif e.record_type == RT_LAB_RESULT:
            if prev is None or prev.kind != CATEGORICAL or prev.record_type != RT_LAB_TEST:
                violations.append(RULE_LAB_RESULT_ADJACENCY)
        elif e.record_type == RT_DISPOSITION:
            if prev is None or prev.kind != CATEGORICAL or prev.record_type != RT_DISCHARGE:
                violations.append(RULE_DISPOSITION_ADJACENCY)
        elif e.record_type == RT_ADMISSION:
            if admitted:
                violations.append(RULE_ADMISSION_ALTERNATION)
            admitted = True
        elif e.record_type == RT_DISCHARGE:
            if not admitted:
                violations.append(RULE_ADMISSION_ALTERNATION)
            admitted = False
        if e.kind == NUMERIC and (e.value is None or e.unit is None):
            violations.append(RULE_NUMERIC_FIELDS)
        prev = e

    # Every discharge must be immediately followed by exactly one disposition.
    for i, e in enumerate(entries):
        if e.kind == CATEGORICAL and e.record_type == RT_DISCHARGE:
            nxt = entries[i + 1] if i + 1 < len(entries) else None
            if nxt is None or nxt.record_type != RT_DISPOSITION:
                violations.append(RULE_DISPOSITION_ADJACENCY)

    return sorted(set(violations))


def assert_valid(timeline: PatientTimeline) -> None:
    violations = validate_timeline(timeline)
    if violations:
        raise TimelineStructureError(violations[0], f"violations: {violations}")
