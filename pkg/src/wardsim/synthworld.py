"""Synthetic EHR world with analytically known event probabilities.

Patients follow a four-state daily Markov chain (ward-stable, ward-acute,
pre-discharge, deceased).  Entering pre-discharge emits a discharge; the
deceased state emits a death.  Each surviving day emits a state marker
diagnosis, lab panels whose value distributions depend on the state, and
state-dependent medication orders.  Every in-hospital event is placed
strictly after 12:00, so a prompt cut at noon on day n reveals the states
up to day n-1 (through the markers) and nothing about day n; conditional
event probabilities over whole-day horizons then reduce to exact
absorbing-chain algebra.

Derived labs (MCH = Hb / RBC * 1000, MCV = Ht / RBC * 1000) hold exactly in
every record, mirroring physiological identities, and the lab value shapes
cover normal-like, log-normal-like, and discrete-like distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np
from scipy.stats import norm

from . import tokens
from .errors import ConfigError, EvaluationError
from .records import (
    RT_ADMISSION,
    RT_DEMOGRAPHIC,
    RT_DIAGNOSIS,
    RT_DISCHARGE,
    RT_LAB_TEST,
    RT_MEDICATION,
    TabularRecord,
)

WARD_STABLE = 0
WARD_ACUTE = 1
PRE_DISCHARGE = 2
DECEASED = 3
ALIVE_STATES = (WARD_STABLE, WARD_ACUTE)
STATE_NAMES = ("ward_stable", "ward_acute", "pre_discharge", "deceased")

# Marker diagnoses deterministically emitted once per surviving day.
MARKER_CODES = {WARD_STABLE: "Z540", WARD_ACUTE: "R579"}
STATE_BY_MARKER = {v: k for k, v in MARKER_CODES.items()}


@dataclass(frozen=True)
class NumericLab:
    code: str
    unit: str
    decimals: int
    shape: str  # "normal" | "lognormal" | "discrete"
    # per alive state: (mu, sigma) or discrete weights over levels
    params: tuple


@dataclass
class SynthWorldConfig:
    transition: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [0.780, 0.080, 0.135, 0.005],
                [0.280, 0.550, 0.070, 0.100],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
    )
    initial: tuple[float, float] = (0.55, 0.45)  # over (stable, acute)
    # Panel draw probabilities; the chemistry panel is state-independent so
    # that a day's pending orders leak nothing about the hidden state.
    chem_prob: float = 0.9
    cbc_prob: tuple[float, float] = (0.6, 0.9)
    occult_prob: tuple[float, float] = (0.10, 0.25)
    abo_prob: float = 0.6
    previsit_prob: float = 0.3
    med_probs: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {
            "J01XA01": (0.02, 0.30),  # vancomycin (anti-MRSA, glycopeptide prefix J01XA)
            "B05AX01": (0.03, 0.20),  # packed red blood cells
            "B05AX02": (0.01, 0.10),  # platelet concentrate
            "N02BE01": (0.35, 0.60),  # paracetamol
        }
    )
    chem_labs: tuple[NumericLab, ...] = (
        NumericLab("LNA", "mmol/L", 0, "normal", ((140.0, 2.5), (135.3, 3.0))),
        NumericLab("LK", "mmol/L", 1, "normal", ((4.2, 0.4), (3.65, 0.5))),
    )
    cbc_labs: tuple[NumericLab, ...] = (
        NumericLab("LHB", "g/dL", 1, "normal", ((13.8, 1.4), (10.8, 1.8))),
        NumericLab("LRBC", "x10^4/uL", 0, "normal", ((450.0, 40.0), (370.0, 50.0))),
        NumericLab("LHT", "%", 1, "normal", ((41.5, 3.5), (33.0, 4.5))),
        NumericLab("LWBC", "x1000/uL", 1, "lognormal", ((1.79, 0.35), (2.3, 0.45))),
        NumericLab("LANC", "/uL", 0, "lognormal", ((8.0, 0.5), (7.0, 1.1))),
        NumericLab("LUGLU", "grade", 0, "discrete", ((0.8, 0.12, 0.05, 0.03), (0.5, 0.2, 0.2, 0.1))),
    )
    occult_weights: tuple[tuple[float, ...], tuple[float, ...]] = (
        (0.15, 0.80, 0.05),  # (+), (-), (+/-) when stable
        (0.45, 0.40, 0.15),
    )
    abo_weights: tuple[float, ...] = (0.38, 0.31, 0.22, 0.09)
    admission_dx: tuple[str, ...] = ("A419", "J159", "I500", "K729")
    previsit_dx: tuple[str, ...] = ("E119", "I109")
    max_days: int = 60
    seed: int = 0

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        if self.transition.shape != (4, 4):
            raise ConfigError("transition matrix must be 4x4")
        if not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-12):
            raise ConfigError("transition rows must sum to 1")
        if (self.transition < 0).any():
            raise ConfigError("transition probabilities must be nonnegative")
        if abs(sum(self.initial) - 1.0) > 1e-12:
            raise ConfigError("initial state distribution must sum to 1")


def _fmt(value: float, decimals: int) -> str:
    return f"{value:.{decimals}f}"


def _draw_lab(lab: NumericLab, state: int, rng: np.random.Generator) -> str:
    if lab.shape == "normal":
        mu, sigma = lab.params[state]
        return _fmt(float(rng.normal(mu, sigma)), lab.decimals)
    if lab.shape == "lognormal":
        mu, sigma = lab.params[state]
        return _fmt(float(np.exp(rng.normal(mu, sigma))), lab.decimals)
    weights = np.asarray(lab.params[state])
    level = int(rng.choice(len(weights), p=weights / weights.sum()))
    return _fmt(float(level), lab.decimals)


def _derived(numerator: str, denominator: str, factor: float, decimals: int) -> str:
    return _fmt(float(numerator) / float(denominator) * factor, decimals)


def _rounding_boundary(threshold: float, decimals: int, comparator: str) -> float:
    """Raw-value boundary equivalent to comparing the *stored* rounded value.

    Values are stored on a 10^-decimals grid, so e.g. "rounded < 135" on an
    integer grid means the raw draw fell below 134.5.
    """
    step = 10.0**-decimals
    scaled = threshold / step
    if comparator in ("<", ">="):
        grid = round(scaled) - 1 if abs(scaled - round(scaled)) < 1e-9 else np.floor(scaled)
        return (grid + 0.5) * step
    grid = round(scaled) if abs(scaled - round(scaled)) < 1e-9 else np.floor(scaled)
    return (grid + 0.5) * step


@dataclass
class SynthPatient:
    patient_id: str
    birthdate: date
    sex: str
    admission_time: datetime
    states: list[int]  # state per hospital day, ending with the absorbing day


class SynthWorld:
    """Corpus generator plus the exact probability calculus over the chain."""

    def __init__(self, config: SynthWorldConfig | None = None):
        self.config = config or SynthWorldConfig()

    # -- generation ---------------------------------------------------------

    def _chain(self, rng: np.random.Generator) -> list[int]:
        cfg = self.config
        states = [int(rng.choice(ALIVE_STATES, p=cfg.initial))]
        while states[-1] in ALIVE_STATES and len(states) < cfg.max_days:
            states.append(int(rng.choice(4, p=cfg.transition[states[-1]])))
        if states[-1] in ALIVE_STATES:  # force closure at the stay cap
            states.append(PRE_DISCHARGE)
        return states

    def _lab_row(self, pid, when: datetime, lab_code, value, unit, rng, report_lo=60, report_hi=121):
        reported = when + timedelta(minutes=int(rng.integers(report_lo, report_hi)))
        return TabularRecord(
            pid,
            RT_LAB_TEST,
            timestamp=when.isoformat(),
            code=lab_code,
            value=value,
            unit=unit or None,
            reported=reported.isoformat(),
        )

    def _day_records(
        self, pid: str, day_start: datetime, state: int, day_index: int, rng: np.random.Generator
    ) -> list[TabularRecord]:
        """Events of one surviving hospital day, all strictly after 12:00."""
        cfg = self.config
        rows: list[TabularRecord] = []
        marker_time = day_start + timedelta(minutes=13 * 60 + int(rng.integers(0, 30)))
        rows.append(
            TabularRecord(
                pid, RT_DIAGNOSIS, timestamp=marker_time.isoformat(), code=MARKER_CODES[state]
            )
        )
        if rng.random() < cfg.chem_prob:
            when = day_start + timedelta(minutes=13 * 60 + 30 + int(rng.integers(0, 60)))
            for lab in cfg.chem_labs:
                rows.append(self._lab_row(pid, when, lab.code, _draw_lab(lab, state, rng), lab.unit, rng))
        if rng.random() < cfg.cbc_prob[state]:
            when = day_start + timedelta(minutes=14 * 60 + 40 + int(rng.integers(0, 60)))
            drawn: dict[str, str] = {}
            for lab in cfg.cbc_labs:
                drawn[lab.code] = _draw_lab(lab, state, rng)
                rows.append(self._lab_row(pid, when, lab.code, drawn[lab.code], lab.unit, rng))
            # Derived indices hold exactly: MCH = Hb/RBC*1000, MCV = Ht/RBC*1000.
            rows.append(
                self._lab_row(pid, when, "LMCH", _derived(drawn["LHB"], drawn["LRBC"], 1000, 1), "pg", rng)
            )
            rows.append(
                self._lab_row(pid, when, "LMCV", _derived(drawn["LHT"], drawn["LRBC"], 1000, 1), "fL", rng)
            )
        if rng.random() < cfg.occult_prob[state]:
            when = day_start + timedelta(minutes=13 * 60 + 45 + int(rng.integers(0, 30)))
            value = ["(+)", "(-)", "(+/-)"][int(rng.choice(3, p=cfg.occult_weights[state]))]
            rows.append(self._lab_row(pid, when, "LOCB", value, None, rng))
        if day_index == 0 and rng.random() < cfg.abo_prob:
            when = day_start + timedelta(minutes=13 * 60 + 10 + int(rng.integers(0, 20)))
            value = ["A", "O", "B", "AB"][int(rng.choice(4, p=cfg.abo_weights))]
            rows.append(self._lab_row(pid, when, "LABO", value, None, rng))
        for code, probs in cfg.med_probs.items():
            if rng.random() < probs[state]:
                when = day_start + timedelta(minutes=15 * 60 + int(rng.integers(0, 120)))
                rows.append(TabularRecord(pid, RT_MEDICATION, timestamp=when.isoformat(), code=code))
        return rows

    def generate_patient(self, pid: str, rng: np.random.Generator) -> tuple[list[TabularRecord], SynthPatient]:
        cfg = self.config
        birth = date(1940, 1, 1) + timedelta(days=int(rng.integers(0, 65 * 365)))
        sex = tokens.SEX_FEMALE if rng.random() < 0.5 else tokens.SEX_MALE
        admit_day = datetime(2022, 1, 1) + timedelta(days=int(rng.integers(0, 330)))
        admission_time = admit_day + timedelta(minutes=12 * 60 + 30 + int(rng.integers(0, 60)))

        rows = [
            TabularRecord(
                pid,
                RT_DEMOGRAPHIC,
                timestamp=datetime(birth.year, birth.month, birth.day).isoformat(),
                code=sex,
            )
        ]
        if rng.random() < cfg.previsit_prob:
            when = admission_time - timedelta(days=int(rng.integers(5, 300)), minutes=int(rng.integers(0, 500)))
            if when.date() > birth:
                rows.append(
                    TabularRecord(
                        pid,
                        RT_DIAGNOSIS,
                        timestamp=when.isoformat(),
                        code=str(rng.choice(cfg.previsit_dx)),
                    )
                )
        rows.append(TabularRecord(pid, RT_ADMISSION, timestamp=admission_time.isoformat(), code=tokens.ADMISSION))
        rows.append(
            TabularRecord(
                pid,
                RT_DIAGNOSIS,
                timestamp=(admission_time + timedelta(minutes=5)).isoformat(),
                code=str(rng.choice(cfg.admission_dx)),
                provisional=bool(rng.random() < 0.4),
            )
        )

        states = self._chain(rng)
        day0 = admit_day  # midnight of the admission day
        for day_index, state in enumerate(states):
            day_start = day0 + timedelta(days=day_index)
            if state in ALIVE_STATES:
                rows.extend(self._day_records(pid, day_start, state, day_index, rng))
            else:
                when = day_start + timedelta(minutes=17 * 60 + int(rng.integers(0, 120)))
                disposition = (
                    tokens.DISCHARGE_ALIVE if state == PRE_DISCHARGE else tokens.DISCHARGE_EXPIRED
                )
                rows.append(
                    TabularRecord(
                        pid,
                        RT_DISCHARGE,
                        timestamp=when.isoformat(),
                        code=tokens.DISCHARGE,
                        disposition=disposition,
                    )
                )
                break
        patient = SynthPatient(pid, birth, sex, admission_time, states)
        return rows, patient

    def generate_corpus(
        self, n_patients: int, rng: np.random.Generator | int | None = None
    ) -> tuple[list[TabularRecord], list[SynthPatient]]:
        """Cleaned-format records for a cohort; reproducible under a seed."""
        if rng is None or isinstance(rng, int):
            rng = np.random.default_rng(self.config.seed if rng is None else rng)
        rows: list[TabularRecord] = []
        patients: list[SynthPatient] = []
        for i in range(n_patients):
            r, p = self.generate_patient(f"synth{i:06d}", rng)
            rows.extend(r)
            patients.append(p)
        return rows, patients

    def sample_future_days(
        self, last_state: int, horizon_days: int, rng: np.random.Generator
    ) -> list[TabularRecord]:
        """Draw one future from the true process, for oracle comparisons.

        ``last_state`` is the state on the day before the cut; the future
        covers the next ``horizon_days`` whole days (cut at noon, events
        after 13:00), using a placeholder calendar anchored at day zero.
        """
        state = last_state
        rows: list[TabularRecord] = []
        base = datetime(2030, 1, 2)
        for t in range(horizon_days):
            state = int(rng.choice(4, p=self.config.transition[state]))
            day_start = base + timedelta(days=t)
            if state in ALIVE_STATES:
                rows.extend(self._day_records("future", day_start, state, t + 1, rng))
            else:
                when = day_start + timedelta(minutes=17 * 60 + int(rng.integers(0, 120)))
                disposition = (
                    tokens.DISCHARGE_ALIVE if state == PRE_DISCHARGE else tokens.DISCHARGE_EXPIRED
                )
                rows.append(
                    TabularRecord(
                        "future",
                        RT_DISCHARGE,
                        timestamp=when.isoformat(),
                        code=tokens.DISCHARGE,
                        disposition=disposition,
                    )
                )
                break
        return rows

    # -- exact probabilities -------------------------------------------------

    def _daily_event_prob(self, event) -> np.ndarray:
        """Per-alive-state probability that one surviving day triggers the event."""
        cfg = self.config
        out = np.zeros(2)
        kind = event.kind
        if kind == "lab-threshold":
            for lab in cfg.chem_labs + cfg.cbc_labs:
                if lab.code not in event.codes:
                    continue
                if event.unit and event.unit != lab.unit:
                    raise EvaluationError(
                        f"unit mismatch for {lab.code}: spec {event.unit!r} vs world {lab.unit!r}"
                    )
                panel = (
                    np.full(2, cfg.chem_prob)
                    if any(l.code == lab.code for l in cfg.chem_labs)
                    else np.asarray(cfg.cbc_prob)
                )
                boundary = _rounding_boundary(event.threshold, lab.decimals, event.comparator)
                for s in ALIVE_STATES:
                    if lab.shape == "normal":
                        mu, sigma = lab.params[s]
                        below = norm.cdf((boundary - mu) / sigma)
                    elif lab.shape == "lognormal":
                        mu, sigma = lab.params[s]
                        below = norm.cdf((np.log(boundary) - mu) / sigma) if boundary > 0 else 0.0
                    else:
                        weights = np.asarray(lab.params[s], dtype=float)
                        weights = weights / weights.sum()
                        levels = np.arange(len(weights))
                        below = float(weights[levels < event.threshold].sum())
                    hit = below if event.comparator == "<" else 1.0 - below
                    out[s] = 1.0 - (1.0 - out[s]) * (1.0 - panel[s] * hit)
            return out
        if kind == "code-prefix":
            for code, probs in cfg.med_probs.items():
                if any(code.startswith(p) for p in event.prefixes):
                    for s in ALIVE_STATES:
                        out[s] = 1.0 - (1.0 - out[s]) * (1.0 - probs[s])
            for s, marker in MARKER_CODES.items():
                if any(marker.startswith(p) for p in event.prefixes):
                    out[s] = 1.0
            return out
        raise EvaluationError(f"event kind {kind!r} has no per-day probability")

    def analytic_event_prob(self, event, horizon_days: int, last_state: int) -> float:
        """Exact P(event within the horizon | state on the day before the cut).

        Discharge/death reduce to absorbing-chain hitting probabilities; lab
        and medication events use a backward recursion over day slots.
        """
        if horizon_days <= 0:
            return 0.0
        if last_state not in ALIVE_STATES:
            raise EvaluationError("prompts only exist while the patient is still in hospital")
        T = self.config.transition
        if event.kind == "token-match":
            if event.token == tokens.DISCHARGE_ALIVE:
                target = PRE_DISCHARGE
            elif event.token == tokens.DISCHARGE_EXPIRED:
                target = DECEASED
            elif event.token == tokens.DISCHARGE:
                power = np.linalg.matrix_power(T, horizon_days)
                return float(power[last_state, PRE_DISCHARGE] + power[last_state, DECEASED])
            else:
                raise EvaluationError(f"token {event.token!r} not expressible under the chain")
            power = np.linalg.matrix_power(T, horizon_days)
            return float(power[last_state, target])

        daily = self._daily_event_prob(event)
        none_after = np.ones(4)
        for _ in range(horizon_days):
            nxt = np.ones(4)
            for s in ALIVE_STATES:
                nxt[s] = (1.0 - daily[s]) * float(T[s] @ none_after)
            # absorbed states emit no lab/medication events
            none_after = nxt
        return float(1.0 - T[last_state] @ none_after)


def last_marker_state(entries) -> int | None:
    """Hidden state on the last marked day, read off the prompt's marker codes."""
    for entry in reversed(entries):
        if entry.record_type == RT_DIAGNOSIS and entry.token in STATE_BY_MARKER:
            return STATE_BY_MARKER[entry.token]
    return None
