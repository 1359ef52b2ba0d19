"""Discretization of time progression and age scaling.

Two schemes cover time steps between consecutive timeline entries.  Steps
under 24 hours fall into uniform 10-minute bins (144 tokens).  Longer steps
use a hierarchical scheme: whole-day offsets are grouped into segments of
increasing width (1-day bins up to 30 days, then 10-day, 30-day and 180-day
bins up to the 1,800-day horizon limit) and each day bin is subdivided into
24 hourly bins keyed on the clock time of the *next* event.  All bins are
right-exclusive, tile their domain exactly, and decode by uniform sampling
within the bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ages import AgeStamp
from .errors import CodecError, HorizonOverflowError

MINUTES_PER_DAY = 1440

# Divisors scaling age components to model inputs.
AGE_DIVISORS = (120.0, 12.0, 29.0, 23.0, 59.0)
_DAY_COMPONENT_CAP = 1.03  # days may reach 30 under some calendars; 30/29 is clipped


@dataclass(frozen=True)
class TimeToken:
    """One progression bin.

    Short tokens carry a minute interval [minute_lo, minute_hi).  Long
    tokens carry a whole-day interval [day_lo, day_hi) plus the hourly
    clock interval [clock_lo, clock_hi) of the next event, in minutes of
    the day.
    """

    scheme: str  # "short" | "long"
    minute_lo: int = 0
    minute_hi: int = 0
    day_lo: int = 0
    day_hi: int = 0
    clock_lo: int = 0
    clock_hi: int = 0

    def label(self) -> str:
        if self.scheme == "short":
            return f"[T+{self.minute_lo}-{self.minute_hi}m]"
        return f"[T+{self.day_lo}-{self.day_hi}d@{self.clock_lo // 60:02d}h]"


@dataclass(frozen=True)
class TimeBinScheme:
    short_step: int = 10  # minutes
    limit_days: int = 1800
    segment_bounds: tuple[int, ...] = (30, 180, 360, 1800)
    segment_widths: tuple[int, ...] = (1, 10, 30, 180)
    hour_step: int = 60  # minutes
    include_long: bool = True

    def __post_init__(self):
        if self.short_step <= 0 or MINUTES_PER_DAY % self.short_step:
            raise CodecError(f"short step {self.short_step} must divide {MINUTES_PER_DAY}")
        if self.hour_step <= 0 or MINUTES_PER_DAY % self.hour_step:
            raise CodecError(f"hour step {self.hour_step} must divide {MINUTES_PER_DAY}")
        if self.include_long:
            if len(self.segment_bounds) != len(self.segment_widths):
                raise CodecError("segment bounds and widths must align")
            if any(w <= 0 for w in self.segment_widths):
                raise CodecError("segment widths must be positive")
            if list(self.segment_bounds) != sorted(set(self.segment_bounds)) or (
                self.segment_bounds and self.segment_bounds[0] < 1
            ):
                raise CodecError("segment bounds must be strictly increasing and >= 1")
            if self.limit_days != self.segment_bounds[-1]:
                raise CodecError("last segment bound must equal the day limit")
            if self.limit_days < 2:
                raise CodecError("day limit must allow at least one long bin")

    @property
    def limit_minutes(self) -> int:
        return self.limit_days * MINUTES_PER_DAY if self.include_long else MINUTES_PER_DAY

    def day_bin_edges(self) -> list[int]:
        """Edges of the whole-day bins, tiling [1, limit_days) exactly.

        Segment k covers day indices [prev_bound + 1, bound_k + 1), stepping
        by its width; the final bin is truncated at the day limit.
        """
        edges = [1]
        prev = 0
        for bound, width in zip(self.segment_bounds, self.segment_widths):
            start = prev + 1
            while start + width <= min(bound + 1, self.limit_days):
                edges.append(start + width)
                start += width
            if start < min(bound + 1, self.limit_days):
                edges.append(min(bound + 1, self.limit_days))
                start = min(bound + 1, self.limit_days)
            prev = bound
        if edges[-1] != self.limit_days:
            edges.append(self.limit_days)
        return edges


@dataclass
class TimeCodec:
    """Enumerated time vocabulary with encode/decode."""

    scheme: TimeBinScheme = field(default_factory=TimeBinScheme)

    def __post_init__(self):
        self.short_tokens = [
            TimeToken("short", minute_lo=a, minute_hi=a + self.scheme.short_step)
            for a in range(0, MINUTES_PER_DAY, self.scheme.short_step)
        ]
        self.long_tokens: list[TimeToken] = []
        if self.scheme.include_long:
            edges = self.scheme.day_bin_edges()
            self._day_edges = np.asarray(edges, dtype=np.int64)
            for lo, hi in zip(edges, edges[1:]):
                for h in range(0, MINUTES_PER_DAY, self.scheme.hour_step):
                    self.long_tokens.append(
                        TimeToken(
                            "long",
                            day_lo=lo,
                            day_hi=hi,
                            clock_lo=h,
                            clock_hi=h + self.scheme.hour_step,
                        )
                    )
        self.tokens = self.short_tokens + self.long_tokens
        self._hours_per_day = MINUTES_PER_DAY // self.scheme.hour_step

    def __len__(self) -> int:
        return len(self.tokens)

    def encode_progression(self, delta_minutes: int, next_clock_minute: int) -> int:
        """Token index for a progression of ``delta_minutes``.

        ``next_clock_minute`` is the clock time (minutes into the day) of
        the upcoming event; it selects the hourly sub-bin of long tokens.
        """
        if delta_minutes < 0:
            raise CodecError(f"negative progression: {delta_minutes}")
        if delta_minutes < MINUTES_PER_DAY:
            return delta_minutes // self.scheme.short_step
        if not self.scheme.include_long or delta_minutes >= self.scheme.limit_minutes:
            raise HorizonOverflowError(
                f"progression {delta_minutes} min at or beyond {self.scheme.limit_minutes} min limit"
            )
        day = delta_minutes // MINUTES_PER_DAY
        day_bin = int(np.searchsorted(self._day_edges, day, side="right")) - 1
        hour_bin = (next_clock_minute % MINUTES_PER_DAY) // self.scheme.hour_step
        return len(self.short_tokens) + day_bin * self._hours_per_day + hour_bin

    def decode_token(
        self, index: int, rng: np.random.Generator, cursor_clock_minute: int = 0
    ) -> int:
        """Sample a progression (minutes) uniformly from the bin.

        Long tokens sample a whole-day offset uniformly from the day bin and
        a minute uniformly within the hourly clock bin; the returned delta
        lands the next event at that clock time, ``day`` days after the
        cursor (relative to the cursor's clock position).
        """
        token = self.tokens[index]
        if token.scheme == "short":
            return int(rng.integers(token.minute_lo, token.minute_hi))
        day = int(rng.integers(token.day_lo, token.day_hi))
        clock = int(rng.integers(token.clock_lo, token.clock_hi))
        return day * MINUTES_PER_DAY + (clock - cursor_clock_minute) % MINUTES_PER_DAY

    def labels(self) -> list[str]:
        return [t.label() for t in self.tokens]


def encode_age(age: AgeStamp) -> np.ndarray:
    """Scale an age to the model's five-dimensional input vector."""
    raw = (
        age.years / AGE_DIVISORS[0],
        age.months / AGE_DIVISORS[1],
        min(age.days / AGE_DIVISORS[2], _DAY_COMPONENT_CAP),
        age.hours / AGE_DIVISORS[3],
        age.minutes / AGE_DIVISORS[4],
    )
    return np.asarray(raw, dtype=np.float64)
