"""Random generators for valid inputs, shared across test modules."""

from __future__ import annotations

from datetime import date, datetime, timedelta

import numpy as np

from wardsim.records import (
    RT_ADMISSION,
    RT_DEMOGRAPHIC,
    RT_DIAGNOSIS,
    RT_DISCHARGE,
    RT_LAB_TEST,
    RT_MEDICATION,
    TabularRecord,
)

_DX_CODES = ["J159", "A410", "I10", "E11", "P284"]
_MED_CODES = ["J01DD04", "B05AX01", "N02BE01", "J01XA01"]
_LAB_CODES = ["HB", "NA", "K", "ABO", "CRP"]
_UNITS = {"HB": "g/dL", "NA": "mmol/L", "K": "mmol/L", "ABO": "", "CRP": "mg/dL"}


def make_random_records(rng: np.random.Generator, patient_id: str = "p0") -> list[TabularRecord]:
    """A structurally valid, cleaned-format record set for one patient."""
    birth = date(1950 + int(rng.integers(0, 60)), int(rng.integers(1, 13)), int(rng.integers(1, 29)))
    records = [
        TabularRecord(
            patient_id,
            RT_DEMOGRAPHIC,
            timestamp=datetime(birth.year, birth.month, birth.day).isoformat(),
            code="[F]" if rng.random() < 0.5 else "[M]",
        )
    ]
    cursor = datetime(2022, 1 + int(rng.integers(0, 12)), 1 + int(rng.integers(0, 28)), 8, 0)
    admitted = False
    for _ in range(int(rng.integers(1, 40))):
        cursor = cursor + timedelta(minutes=int(rng.integers(0, 600)))
        ts = cursor.isoformat()
        kind = rng.random()
        if kind < 0.1 and not admitted:
            records.append(TabularRecord(patient_id, RT_ADMISSION, timestamp=ts, code="[ADM]"))
            admitted = True
        elif kind < 0.18 and admitted:
            disposition = "[DSC_ALV]" if rng.random() < 0.9 else "[DSC_EXP]"
            records.append(
                TabularRecord(
                    patient_id, RT_DISCHARGE, timestamp=ts, code="[DSC]", disposition=disposition
                )
            )
            admitted = False
        elif kind < 0.35:
            records.append(
                TabularRecord(
                    patient_id,
                    RT_DIAGNOSIS,
                    timestamp=ts,
                    code=str(rng.choice(_DX_CODES)),
                    provisional=bool(rng.random() < 0.3),
                )
            )
        elif kind < 0.55:
            records.append(
                TabularRecord(patient_id, RT_MEDICATION, timestamp=ts, code=str(rng.choice(_MED_CODES)))
            )
        else:
            # One or more labs sharing a specimen time.
            for _ in range(int(rng.integers(1, 4))):
                code = str(rng.choice(_LAB_CODES))
                if code == "ABO":
                    value = str(rng.choice(["A", "O", "B", "AB"]))
                elif code == "CRP" and rng.random() < 0.3:
                    value = str(rng.choice(["(+)", "(-)", "(+/-)"]))
                else:
                    value = f"{rng.normal(10, 3):.1f}"
                reported = None
                if rng.random() < 0.4:
                    reported = (cursor + timedelta(minutes=int(rng.integers(10, 400)))).isoformat()
                records.append(
                    TabularRecord(
                        patient_id,
                        RT_LAB_TEST,
                        timestamp=ts,
                        code=code,
                        value=value,
                        unit=_UNITS[code] or None,
                        reported=reported,
                    )
                )
    return records
