"""Patient age arithmetic.

Ages are elapsed time since birth, with birth anchored at 00:00 so the
hour/minute components of an age always equal the clock time of the
underlying timestamp.  The canonical representation is whole minutes since
birth; calendar components (years, months, days) are derived by calendar
subtraction: count full year anniversaries, then full month anniversaries,
then residual days.  Month arithmetic clips to the end of short months
(Jan 31 + 1 month = Feb 28/29), which keeps anniversaries monotone.

Timelines read from files that carry ages instead of timestamps are
anchored at ``REFERENCE_BIRTHDATE`` so that components and total minutes
stay mutually consistent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta

from .errors import AgeError

REFERENCE_BIRTHDATE = date(2000, 1, 1)

_DAYS_IN_MONTH = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]

_DURATION_RE = re.compile(
    r"^P(?:(\d+)Y)?(?:(\d+)M)?(?:(\d+)D)?(?:T(?:(\d+)H)?(?:(\d+)M)?)?$"
)


def _month_length(year: int, month: int) -> int:
    if month == 2 and (year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)):
        return 29
    return _DAYS_IN_MONTH[month - 1]


def add_months(d: date, months: int) -> date:
    """Add whole months to a date, clipping the day to the target month length."""
    total = d.year * 12 + (d.month - 1) + months
    year, month = divmod(total, 12)
    month += 1
    return date(year, month, min(d.day, _month_length(year, month)))


def truncate_to_minute(ts: datetime) -> datetime:
    return ts.replace(second=0, microsecond=0)


@dataclass(frozen=True)
class AgeStamp:
    """Elapsed time since birth with calendar components.

    ``total_minutes`` is authoritative; the components are the calendar
    decomposition relative to the patient's birthdate.  Hours/minutes equal
    the timestamp's clock time because birth is anchored at 00:00.
    """

    total_minutes: int
    years: int
    months: int
    days: int
    hours: int
    minutes: int

    def __post_init__(self):
        if self.total_minutes < 0:
            raise AgeError(f"negative age: {self.total_minutes} minutes")

    @classmethod
    def from_timestamp(cls, ts: datetime, birthdate: date) -> "AgeStamp":
        """Compute the age at ``ts`` for a patient born on ``birthdate`` at 00:00."""
        ts = truncate_to_minute(ts)
        birth_dt = datetime.combine(birthdate, time.min)
        if ts < birth_dt:
            raise AgeError(f"timestamp {ts.isoformat()} precedes birth {birthdate.isoformat()}")
        total = int((ts - birth_dt).total_seconds()) // 60

        # Largest number of whole month anniversaries not exceeding ts.
        n_months = (ts.year - birthdate.year) * 12 + (ts.month - birthdate.month)
        while n_months > 0 and datetime.combine(add_months(birthdate, n_months), time.min) > ts:
            n_months -= 1
        anchor = add_months(birthdate, n_months)
        days = (ts.date() - anchor).days
        return cls(total, n_months // 12, n_months % 12, days, ts.hour, ts.minute)

    @classmethod
    def from_total_minutes(cls, total_minutes: int, birthdate: date) -> "AgeStamp":
        birth_dt = datetime.combine(birthdate, time.min)
        return cls.from_timestamp(birth_dt + timedelta(minutes=int(total_minutes)), birthdate)

    @classmethod
    def from_components(
        cls, years: int, months: int, days: int, hours: int, minutes: int, birthdate: date
    ) -> "AgeStamp":
        """Rebuild an age from components by forward calendar addition."""
        anchor = add_months(birthdate, years * 12 + months) + timedelta(days=days)
        ts = datetime.combine(anchor, time.min) + timedelta(hours=hours, minutes=minutes)
        return cls.from_timestamp(ts, birthdate)

    def to_timestamp(self, birthdate: date) -> datetime:
        return datetime.combine(birthdate, time.min) + timedelta(minutes=self.total_minutes)

    def to_duration(self) -> str:
        """Render as an ISO-8601 duration, e.g. ``P0Y0M3DT16H57M``."""
        return (
            f"P{self.years}Y{self.months}M{self.days}D"
            f"T{self.hours}H{self.minutes}M"
        )

    @classmethod
    def parse_duration(cls, text: str, birthdate: date) -> "AgeStamp":
        m = _DURATION_RE.match(text.strip())
        if not m:
            raise AgeError(f"malformed ISO-8601 duration: {text!r}")
        y, mo, d, h, mi = (int(g) if g else 0 for g in m.groups())
        return cls.from_components(y, mo, d, h, mi, birthdate)

    @property
    def clock_minute_of_day(self) -> int:
        return self.hours * 60 + self.minutes

    def __lt__(self, other: "AgeStamp") -> bool:
        return self.total_minutes < other.total_minutes

    def __le__(self, other: "AgeStamp") -> bool:
        return self.total_minutes <= other.total_minutes


def compute_age(ts: datetime, birthdate: date) -> AgeStamp:
    """Age at a calendar timestamp; errors if ``ts`` precedes birth."""
    return AgeStamp.from_timestamp(ts, birthdate)
