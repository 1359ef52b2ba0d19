"""Tabular clinical records: file format, mapping tables, and cleaning.

The on-disk format is a delimiter-separated UTF-8 table with one clinical
record per row.  Each row carries either a calendar timestamp (ISO-8601) or
an age (ISO-8601 duration); lab rows carry the result value/unit and an
optional report time; discharge rows carry the disposition token.
"""

from __future__ import annotations

import csv
import unicodedata
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import RecordError

COLUMNS = [
    "patient_id",
    "record_type",
    "timestamp",
    "age",
    "code",
    "value",
    "unit",
    "provisional",
    "disposition",
    "reported",
]

# Row-level record types (lab rows carry their result; discharge rows carry
# their disposition).  Timeline entries additionally use lab_result and
# disposition record types after expansion.
RT_DEMOGRAPHIC = "demographic"
RT_ADMISSION = "admission"
RT_DISCHARGE = "discharge"
RT_DISPOSITION = "disposition"
RT_DIAGNOSIS = "diagnosis"
RT_MEDICATION = "medication"
RT_LAB_TEST = "lab_test"
RT_LAB_RESULT = "lab_result"
RT_EOT = "eot"

ROW_RECORD_TYPES = {
    RT_DEMOGRAPHIC,
    RT_ADMISSION,
    RT_DISCHARGE,
    RT_DIAGNOSIS,
    RT_MEDICATION,
    RT_LAB_TEST,
    RT_EOT,
}

CODED_RECORD_TYPES = {RT_DIAGNOSIS, RT_MEDICATION, RT_LAB_TEST}

POSITIVE = "(+)"
NEGATIVE = "(-)"
EQUIVOCAL = "(+/-)"

_POSITIVE_SYNONYMS = {"+", "pos", "positive", "(+)", "detected"}
_NEGATIVE_SYNONYMS = {"-", "−", "neg", "negative", "(-)", "not detected"}
_EQUIVOCAL_SYNONYMS = {"+/-", "(+/-)", "±", "equivocal", "borderline"}
_NULL_SYNONYMS = {"", "na", "n/a", "null", "none", "reported elsewhere", "invalid specimen"}


@dataclass(frozen=True)
class TabularRecord:
    """One clinical record row; all fields as written to the file."""

    patient_id: str
    record_type: str
    timestamp: str | None = None
    age: str | None = None
    code: str | None = None
    value: str | None = None
    unit: str | None = None
    provisional: bool = False
    disposition: str | None = None
    reported: str | None = None


def read_records(path: str | Path, delimiter: str = "\t") -> list[TabularRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = set(COLUMNS[:2]) - set(reader.fieldnames or ())
        if missing:
            raise RecordError(f"{path}: missing required columns {sorted(missing)}")
        for row in reader:
            records.append(
                TabularRecord(
                    patient_id=(row.get("patient_id") or "").strip(),
                    record_type=(row.get("record_type") or "").strip(),
                    timestamp=_none_if_blank(row.get("timestamp")),
                    age=_none_if_blank(row.get("age")),
                    code=_none_if_blank(row.get("code")),
                    value=_none_if_blank(row.get("value")),
                    unit=_none_if_blank(row.get("unit")),
                    provisional=_parse_flag(row.get("provisional")),
                    disposition=_none_if_blank(row.get("disposition")),
                    reported=_none_if_blank(row.get("reported")),
                )
            )
    return records


def write_records(records: list[TabularRecord], path: str | Path, delimiter: str = "\t") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.patient_id,
                    r.record_type,
                    r.timestamp or "",
                    r.age or "",
                    r.code or "",
                    r.value or "",
                    r.unit or "",
                    "1" if r.provisional else "0",
                    r.disposition or "",
                    r.reported or "",
                ]
            )


def group_by_patient(records: list[TabularRecord]) -> OrderedDict[str, list[TabularRecord]]:
    grouped: OrderedDict[str, list[TabularRecord]] = OrderedDict()
    for r in records:
        grouped.setdefault(r.patient_id, []).append(r)
    return grouped


def _none_if_blank(v: str | None) -> str | None:
    if v is None:
        return None
    v = v.strip()
    return v or None


def _parse_flag(v: str | None) -> bool:
    return (v or "").strip().lower() in {"1", "true", "yes"}


# ---------------------------------------------------------------------------
# Mapping tables


@dataclass
class MappingTables:
    """User-supplied conversion content.

    ``code_maps`` maps a record type to a from->to code translation; when a
    map exists for a record type, codes absent from it are excluded with a
    mapping-failure reason.  ``unit_conversions`` maps (code, from_unit) to
    (to_unit, factor) for arithmetic unit standardization.  ``value_map``
    adds extra nonnumeric-result synonyms on top of the built-in
    positive/negative/equivocal/null tables.
    """

    code_maps: dict[str, dict[str, str]] = field(default_factory=dict)
    unit_conversions: dict[tuple[str, str], tuple[str, Decimal]] = field(default_factory=dict)
    value_map: dict[str, str] = field(default_factory=dict)

    @staticmethod
    def load_code_map(path: str | Path, record_type: str, delimiter: str = "\t") -> dict[str, str]:
        mapping = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh, delimiter=delimiter):
                if not row or row[0].startswith("#"):
                    continue
                mapping[row[0].strip()] = row[1].strip()
        return mapping

    @staticmethod
    def load_unit_table(
        path: str | Path, delimiter: str = "\t"
    ) -> dict[tuple[str, str], tuple[str, Decimal]]:
        table = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh, delimiter=delimiter):
                if not row or row[0].startswith("#"):
                    continue
                code, from_unit, to_unit, factor = (c.strip() for c in row[:4])
                table[(code, from_unit)] = (to_unit, Decimal(factor))
        return table


# ---------------------------------------------------------------------------
# Cleaning


EXCL_DUPLICATE = "duplicate"
EXCL_MISSING_TIMESTAMP = "missing_timestamp"
EXCL_MISSING_CODE = "missing_code"
EXCL_MISSING_VALUE = "missing_value"
EXCL_NULL_RESULT = "null_result"
EXCL_MAPPING_FAILURE = "mapping_failure"
EXCL_BAD_ROW = "bad_row"


@dataclass(frozen=True)
class Exclusion:
    index: int
    patient_id: str
    record_type: str
    reason: str
    detail: str = ""


@dataclass
class ExclusionReport:
    """Machine-readable account of every dropped row."""

    exclusions: list[Exclusion] = field(default_factory=list)

    def add(self, index: int, record: TabularRecord, reason: str, detail: str = "") -> None:
        self.exclusions.append(
            Exclusion(index, record.patient_id, record.record_type, reason, detail)
        )

    def counts(self) -> Counter:
        return Counter(e.reason for e in self.exclusions)

    def __len__(self) -> int:
        return len(self.exclusions)


def normalize_text(text: str) -> str:
    """Unicode compatibility normalization applied before any matching."""
    return unicodedata.normalize("NFKC", text).strip()


def normalize_nonnumeric_result(value: str, extra_map: dict[str, str] | None = None) -> str | None:
    """Map a nonnumeric result to (+)/(-)/(+/-), a user label, or None for null."""
    text = normalize_text(value)
    if extra_map and text in extra_map:
        text = extra_map[text]
    low = text.lower()
    if low in _POSITIVE_SYNONYMS:
        return POSITIVE
    if low in _NEGATIVE_SYNONYMS:
        return NEGATIVE
    if low in _EQUIVOCAL_SYNONYMS:
        return EQUIVOCAL
    if low in _NULL_SYNONYMS:
        return None
    return text


def parse_decimal(value: str) -> Decimal | None:
    try:
        d = Decimal(value)
    except InvalidOperation:
        return None
    if not d.is_finite():
        return None
    return d


def format_decimal(d: Decimal) -> str:
    """Render without exponent and without spurious trailing zeros."""
    text = format(d.normalize(), "f")
    return text


def clean_records(
    raw: list[TabularRecord], tables: MappingTables | None = None
) -> tuple[list[TabularRecord], ExclusionReport]:
    """Drop malformed rows, standardize units, and normalize nonnumeric results.

    Every dropped row lands in the exclusion report with a reason code;
    nothing is removed silently.
    """
    tables = tables or MappingTables()
    report = ExclusionReport()
    cleaned: list[TabularRecord] = []
    seen: set[tuple] = set()

    for idx, rec in enumerate(raw):
        if rec.record_type not in ROW_RECORD_TYPES:
            report.add(idx, rec, EXCL_BAD_ROW, f"unknown record type {rec.record_type!r}")
            continue
        if not rec.patient_id:
            report.add(idx, rec, EXCL_BAD_ROW, "missing patient_id")
            continue

        code = normalize_text(rec.code) if rec.code else None
        unit = normalize_text(rec.unit) if rec.unit else None
        value = rec.value

        if rec.record_type != RT_DEMOGRAPHIC and not rec.timestamp and not rec.age:
            report.add(idx, rec, EXCL_MISSING_TIMESTAMP)
            continue
        if rec.record_type in CODED_RECORD_TYPES and not code:
            report.add(idx, rec, EXCL_MISSING_CODE)
            continue

        code_map = tables.code_maps.get(rec.record_type)
        if code_map is not None and code is not None:
            if code not in code_map:
                report.add(idx, rec, EXCL_MAPPING_FAILURE, f"unmapped code {code!r}")
                continue
            code = code_map[code]

        if rec.record_type == RT_LAB_TEST:
            if value is None:
                report.add(idx, rec, EXCL_MISSING_VALUE)
                continue
            numeric = parse_decimal(value)
            if numeric is not None:
                conversion = tables.unit_conversions.get((code, unit or ""))
                if conversion is not None:
                    to_unit, factor = conversion
                    numeric = numeric * factor
                    unit = to_unit
                value = format_decimal(numeric)
            else:
                normalized = normalize_nonnumeric_result(value, tables.value_map)
                if normalized is None:
                    report.add(idx, rec, EXCL_NULL_RESULT, f"null-like result {value!r}")
                    continue
                value = normalized

        out = replace(rec, code=code, unit=unit, value=value)
        key = (out.patient_id, out.record_type, out.timestamp, out.age, out.code, out.value, out.unit)
        if key in seen:
            report.add(idx, rec, EXCL_DUPLICATE)
            continue
        seen.add(key)
        cleaned.append(out)

    return cleaned, report
