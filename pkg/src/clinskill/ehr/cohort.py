"""Deterministic synthetic ICU cohort generation.

Every stay is drawn from an acuity archetype. Non-stable archetypes plant a
deterioration episode whose measurements are guaranteed to cross the
surveillance thresholds of that archetype's families before hour 48.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from clinskill.ehr import schema

logger = logging.getLogger(__name__)

ARCHETYPES = ("stable", "septic", "renal_failure", "respiratory_failure", "mixed_shock")
EVENT_CATEGORIES = ("chart", "lab")
BASE_TIME = datetime(2130, 1, 1)
MIN_STAY_HOURS = 48


class CohortSpecError(ValueError):
    pass


@dataclass(frozen=True)
class CohortSpec:
    n_stays: int = 100
    seed: int = 0
    archetype_weights: dict[str, float] = field(
        default_factory=lambda: {a: 1.0 / len(ARCHETYPES) for a in ARCHETYPES}
    )
    event_rate_per_hour: dict[str, float] = field(
        default_factory=lambda: {"chart": 1.0, "lab": 0.25}
    )

    def __post_init__(self) -> None:
        if not isinstance(self.n_stays, int) or self.n_stays < 1:
            raise CohortSpecError(f"n_stays must be a positive integer, got {self.n_stays!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise CohortSpecError("seed must fit in 64 bits")
        unknown = set(self.archetype_weights) - set(ARCHETYPES)
        if unknown:
            raise CohortSpecError(f"unknown archetypes: {sorted(unknown)}")
        if any(w < 0 for w in self.archetype_weights.values()):
            raise CohortSpecError("archetype weights must be non-negative")
        total = sum(self.archetype_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise CohortSpecError(f"archetype weights sum to {total!r}, expected 1")
        for cat in EVENT_CATEGORIES:
            rate = self.event_rate_per_hour.get(cat)
            if rate is None or not rate > 0 or not math.isfinite(rate):
                raise CohortSpecError(f"event rate for {cat!r} must be a positive real")

    @classmethod
    def from_text(cls, text: str) -> "CohortSpec":
        """Parse ``key = value`` lines.

        ``archetype_weights`` and ``event_rate_per_hour`` take comma-separated
        ``name:value`` pairs.
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string("[cohort]\n" + text)
        sec = parser["cohort"]
        kwargs: dict = {}
        if "n_stays" in sec:
            kwargs["n_stays"] = int(sec["n_stays"])
        if "seed" in sec:
            kwargs["seed"] = int(sec["seed"])
        for key in ("archetype_weights", "event_rate_per_hour"):
            if key in sec:
                pairs = [p.strip() for p in sec[key].split(",") if p.strip()]
                kwargs[key] = {k.strip(): float(v) for k, v in (p.split(":") for p in pairs)}
        unknown = set(sec) - {"n_stays", "seed", "archetype_weights", "event_rate_per_hour"}
        if unknown:
            raise CohortSpecError(f"unknown cohort keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "CohortSpec":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        weights = ",".join(f"{k}:{v!r}" for k, v in sorted(self.archetype_weights.items()))
        rates = ",".join(f"{k}:{v!r}" for k, v in sorted(self.event_rate_per_hour.items()))
        return (
            f"n_stays = {self.n_stays}\nseed = {self.seed}\n"
            f"archetype_weights = {weights}\nevent_rate_per_hour = {rates}\n"
        )


class _Columns:
    """Column-wise accumulator for one event or interval table."""

    def __init__(self, names: tuple[str, ...]):
        self.names = names
        self.chunks: dict[str, list] = {n: [] for n in names}

    def add(self, **cols) -> None:
        n = None
        for name in self.names:
            v = cols[name]
            if isinstance(v, np.ndarray):
                n = len(v)
        for name in self.names:
            v = cols[name]
            if not isinstance(v, np.ndarray):
                v = np.full(n, v, dtype=object if isinstance(v, str) or v is None else None)
            self.chunks[name].append(v)

    def frame(self) -> dict[str, np.ndarray]:
        return {
            n: (np.concatenate(c) if c else np.array([], dtype=object)) for n, c in self.chunks.items()
        }


def _ramp(minutes: np.ndarray, onset: float, duration: float, recover_at: float | None = None):
    r = np.clip((minutes - onset) / max(duration, 1.0), 0.0, 1.0)
    if recover_at is not None:
        r = r * np.clip(1.0 - (minutes - recover_at) / (12 * 60.0), 0.0, 1.0)
    return r


class _StayGenerator:
    EVENT_COLS = ("stay", "minute", "itemid", "value", "valuenum")
    INTERVAL_COLS = ("stay", "start", "end", "itemid", "rate")

    def __init__(self, spec: CohortSpec):
        self.spec = spec
        self.chart = _Columns(self.EVENT_COLS)
        self.lab = _Columns(self.EVENT_COLS)
        self.infusions = _Columns(self.INTERVAL_COLS)
        self.procedures = _Columns(self.INTERVAL_COLS)

    # -- helpers -----------------------------------------------------------
    def _grid(self, rng, los_min: int, every_hours: float, start: int = 0) -> np.ndarray:
        step = max(int(round(every_hours * 60)), 1)
        grid = np.arange(start, los_min + 1, step, dtype=np.int64)
        jitter = rng.integers(0, max(step // 6, 1), size=len(grid))
        jitter[0] = 0
        return np.minimum(grid + jitter, los_min)

    def _emit(self, table, stay: int, minutes, itemid: int, values, decimals: int) -> None:
        vals = np.round(np.asarray(values, dtype=float), decimals)
        table.add(
            stay=np.full(len(minutes), stay, dtype=np.int64),
            minute=np.asarray(minutes, dtype=np.int64),
            itemid=np.full(len(minutes), itemid, dtype=np.int64),
            value=np.array([_fmt(v, decimals) for v in vals], dtype=object),
            valuenum=vals,
        )

    def _emit_text(self, stay: int, minute: int, itemid: int, text: str) -> None:
        self.lab.add(
            stay=np.array([stay], dtype=np.int64),
            minute=np.array([minute], dtype=np.int64),
            itemid=np.array([itemid], dtype=np.int64),
            value=np.array([text], dtype=object),
            valuenum=np.array([np.nan]),
        )

    def _interval(self, table, stay: int, start: float, end: float, itemid: int, rate, los_min):
        start = int(max(0, min(start, los_min - 1)))
        end = int(max(start + 1, min(end, los_min)))
        table.add(
            stay=np.array([stay], dtype=np.int64),
            start=np.array([start], dtype=np.int64),
            end=np.array([end], dtype=np.int64),
            itemid=np.array([itemid], dtype=np.int64),
            rate=np.array([np.nan if rate is None else float(rate)]),
        )

    def _segments(self, rng, stay, start, end, itemid, lo, hi, los_min, decimals=3):
        """Continuous infusion split into rate-change segments."""
        t = start
        while t < min(end, los_min):
            seg_end = min(t + int(rng.integers(3 * 60, 8 * 60)), end, los_min)
            rate = round(float(rng.uniform(lo, hi)), decimals)
            self._interval(self.infusions, stay, t, seg_end, itemid, rate, los_min)
            t = seg_end

    # -- one stay ----------------------------------------------------------
    def generate(self, stay: int, archetype: str, rng: np.random.Generator, los_min: int) -> None:
        chart_every = 1.0 / self.spec.event_rate_per_hour["chart"]
        lab_every = 1.0 / self.spec.event_rate_per_hour["lab"]
        onset = float(rng.uniform(3, 30)) * 60
        ramp = float(rng.uniform(1, 3)) * 60
        sick = archetype != "stable"
        recover = onset + float(rng.uniform(36, 72)) * 60 if sick else None
        infected = archetype == "septic" or (archetype == "mixed_shock" and rng.random() < 0.5)

        def eff(minutes):
            if not sick:
                return np.zeros(len(minutes))
            return _ramp(minutes, onset, ramp, recover)

        vent_intervals: list[tuple[int, int]] = []
        support_intervals: list[tuple[int, int]] = []

        # procedures first, they shape FiO2 and GCS
        if archetype == "respiratory_failure":
            pre = 227287 if rng.random() < 0.7 else 225794
            pre_end = onset + float(rng.uniform(4, 8)) * 60
            self._interval(self.procedures, stay, onset, pre_end, pre, None, los_min)
            support_intervals.append((int(onset), int(pre_end)))
            vent_end = pre_end + float(rng.uniform(24, 48)) * 60
            self._interval(self.procedures, stay, pre_end, vent_end, 225792, None, los_min)
            vent_intervals.append((int(pre_end), int(min(vent_end, los_min))))
            if rng.random() < 0.3 and vent_end + 6 * 60 < los_min:
                re_start = vent_end + float(rng.uniform(4, 10)) * 60
                re_end = re_start + float(rng.uniform(8, 24)) * 60
                self._interval(self.procedures, stay, re_start, re_end, 225792, None, los_min)
                vent_intervals.append((int(re_start), int(min(re_end, los_min))))
        elif archetype == "mixed_shock" and rng.random() < 0.6:
            vent_end = onset + float(rng.uniform(24, 60)) * 60
            self._interval(self.procedures, stay, onset + 30, vent_end, 225792, None, los_min)
            vent_intervals.append((int(onset + 30), int(min(vent_end, los_min))))
        elif archetype == "stable" and rng.random() < 0.1:
            s = float(rng.uniform(2, 40)) * 60
            self._interval(self.procedures, stay, s, s + 180, 225794, None, los_min)
            support_intervals.append((int(s), int(s + 180)))
        if archetype == "renal_failure" or (archetype == "mixed_shock" and rng.random() < 0.3):
            s = onset + float(rng.uniform(8, 16)) * 60
            self._interval(
                self.procedures, stay, s, s + float(rng.uniform(24, 60)) * 60, 225802, None, los_min
            )
        line_p = 0.8 if archetype in ("septic", "mixed_shock") else 0.3
        if rng.random() < line_p:
            s = float(rng.uniform(0.5, 6)) * 60
            self._interval(self.procedures, stay, s, los_min, 225752, None, los_min)

        def covered(minutes, intervals):
            out = np.zeros(len(minutes), dtype=bool)
            for s, e in intervals:
                out |= (minutes >= s) & (minutes <= e)
            return out

        # chart events ----------------------------------------------------
        self._emit(self.chart, stay, [0], 226512, [np.clip(rng.normal(80, 15), 40, 160)], 1)
        self._emit(self.chart, stay, [0], 226730, [np.clip(rng.normal(170, 10), 145, 200)], 0)

        hourly = self._grid(rng, los_min, chart_every)
        e = eff(hourly)
        hr_shift = {"septic": 25, "mixed_shock": 30, "respiratory_failure": 15}.get(archetype, 5)
        map_target = {"septic": -19, "mixed_shock": -25}.get(archetype, 0)
        n = len(hourly)
        base_map = rng.normal(80, 5)
        self._emit(self.chart, stay, hourly, 220045, rng.normal(85, 5, n) + hr_shift * e, 0)
        mbp = base_map + rng.normal(0, 3, n) + map_target * e
        self._emit(self.chart, stay, hourly, 220052, np.clip(mbp, 35, 140), 0)
        self._emit(self.chart, stay, hourly, 220179, np.clip(mbp * 1.45, 60, 200), 0)
        rr_shift = {"respiratory_failure": 12, "septic": 8, "mixed_shock": 10}.get(archetype, 0)
        self._emit(self.chart, stay, hourly, 220210, np.clip(rng.normal(16, 2, n) + rr_shift * e, 8, 45), 0)
        spo2_shift = {"respiratory_failure": -10, "mixed_shock": -4}.get(archetype, 0)
        self._emit(self.chart, stay, hourly, 220277, np.clip(rng.normal(97, 1, n) + spo2_shift * e, 70, 100), 0)
        urine_level = {"renal_failure": 8, "mixed_shock": 12, "septic": 30}.get(archetype, 70)
        uo = rng.normal(70, 15, n) * (1 - e) + (urine_level + rng.normal(0, 3, n)) * e
        uo = np.clip(uo, 0, 400)
        uo[0] = max(uo[0], 40.0)
        self._emit(self.chart, stay, hourly, 226559, uo, 0)

        four = self._grid(rng, los_min, 4 * chart_every)
        e4 = eff(four)
        temp_shift = {"septic": 1.9, "mixed_shock": 1.4}.get(archetype, 0.0)
        if not infected:
            temp_shift = 0.0
        self._emit(self.chart, stay, four, 223762, rng.normal(36.9, 0.2, len(four)) + temp_shift * e4, 1)
        on_vent = covered(four, vent_intervals)
        on_support = covered(four, support_intervals)
        fio2 = np.where(on_vent, 60.0, np.where(on_support, 50.0, 21.0))
        if archetype == "respiratory_failure":
            fio2 = np.maximum(fio2, 21 + 19 * e4)
        self._emit(self.chart, stay, four, 223835, fio2, 0)
        if on_vent.any():
            self._emit(self.chart, stay, four[on_vent], 220339, np.full(on_vent.sum(), 8.0), 0)
        eye = np.full(len(four), 4.0)
        verbal = np.full(len(four), 5.0)
        motor = np.full(len(four), 6.0)
        if archetype == "mixed_shock":
            eye = np.where(e4 > 0.5, 1.0, eye)
            verbal = np.where(e4 > 0.5, 1.0, verbal)
            motor = np.where(e4 > 0.5, 4.0, motor)
        elif archetype == "septic":
            verbal = np.where(e4 > 0.5, 4.0, verbal)
        verbal = np.where(on_vent, 1.0, verbal)
        for item, comp in zip(schema.GCS_ITEMS, (eye, verbal, motor)):
            self._emit(self.chart, stay, four, item, comp, 0)

        # labs ------------------------------------------------------------
        labs = self._grid(rng, los_min, lab_every)
        el = eff(labs)
        nl = len(labs)

        def lab(item, base, sd, shift, decimals, lo=None, hi=None, mult=False):
            noise = rng.normal(0, sd, nl)
            vals = base * (1 + (shift - 1) * el) + noise if mult else base + noise + shift * el
            if lo is not None or hi is not None:
                vals = np.clip(vals, lo, hi)
            self._emit(self.lab, stay, labs, item, vals, decimals)

        creat_base = float(np.clip(rng.normal(0.9, 0.15), 0.5, 1.1))
        creat_mult = {
            "renal_failure": rng.uniform(3.3, 4.8),
            "septic": 2.5,
            "mixed_shock": 2.2,
        }.get(archetype, 1.0)
        lab(50912, creat_base, 0.03, creat_mult, 2, 0.3, 12, mult=True)
        lab(51006, 15, 2, {"renal_failure": 45, "septic": 15, "mixed_shock": 20}.get(archetype, 0), 0, 3, 150)
        lab(50971, 4.1, 0.2, {"renal_failure": 1.6, "mixed_shock": 0.8}.get(archetype, 0), 1, 2.5, 7.5)
        lab(50983, 139, 2, 0, 0)
        lab(50931, 120, 20, {"septic": 40, "mixed_shock": 60}.get(archetype, 0), 0, 50, 500)
        lab(50885, 0.6, 0.1, {"septic": 1.8, "mixed_shock": 2.6}.get(archetype, 0), 1, 0.1, 30)
        lab(51265, 230, 25, {"septic": -150, "mixed_shock": -165}.get(archetype, 0), 0, 5, 600)
        lab(51301, 8, 1.5, {"septic": 10, "mixed_shock": 8}.get(archetype, 0), 1, 0.5, 50)
        lab(51222, 11, 1.0, -1.0 if sick else 0, 1, 5, 18)
        lab(51256, 65, 5, {"septic": 20}.get(archetype, 0), 0, 20, 98)
        lab(51244, 22, 4, {"septic": -14}.get(archetype, 0), 0, 1, 60)
        inr_shift = {"mixed_shock": 1.3, "septic": 0.6 if rng.random() < 0.5 else 0.0}.get(archetype, 0)
        lab(51237, 1.1, 0.05, inr_shift, 1, 0.8, 8)
        lact_shift = {"septic": float(rng.uniform(1.8, 3.5)), "mixed_shock": 4.3}.get(archetype, 0)
        lab(50813, 1.2, 0.15, lact_shift, 1, 0.3, 20)
        ph_shift = {"respiratory_failure": -0.15, "mixed_shock": -0.26, "septic": -0.06}.get(archetype, 0)
        lab(50820, 7.40, 0.01, ph_shift, 2, 6.8, 7.6)
        po2_shift = {"respiratory_failure": -37, "septic": -10, "mixed_shock": -20}.get(archetype, 0)
        lab(50821, 95, 4, po2_shift, 0, 35, 200)
        lab(50818, 40, 2, {"respiratory_failure": 18}.get(archetype, 0), 0, 20, 100)

        daily = self._grid(rng, los_min, 24.0)
        ed = eff(daily)
        trop_shift = 0.23 if (archetype == "mixed_shock" or rng.random() < 0.1) else 0.0
        self._emit(self.lab, stay, daily, 51003, np.clip(0.02 + trop_shift * ed + rng.normal(0, 0.003, len(daily)), 0.01, 5), 2)
        self._emit(self.lab, stay, daily, 50889, np.clip(10 + (140 if infected else 0) * ed + rng.normal(0, 2, len(daily)), 0.5, 400), 1)
        self._emit(self.lab, stay, daily, 50862, np.clip(3.4 - 0.6 * ed + rng.normal(0, 0.1, len(daily)), 1.2, 5), 1)

        # infection and medications ---------------------------------------
        if infected:
            culture_item = 70012 if rng.random() < 0.8 else 70079
            cult_t = int(onset)
            self._emit_text(stay, cult_t, culture_item, "pending")
            result_t = cult_t + int(rng.uniform(24, 36) * 60)
            if result_t <= los_min:
                self._emit_text(stay, result_t, culture_item, "positive" if rng.random() < 0.7 else "negative")
            abx = [int(a) for a in rng.choice(schema.ANTIBIOTICS, size=1 + int(rng.random() < 0.4), replace=False)]
            dose_t = onset + 30
            stop = min(onset + 72 * 60, los_min)
            while dose_t < stop:
                for a in abx:
                    self._interval(self.infusions, stay, dose_t, dose_t + 60, a, round(float(rng.uniform(500, 2000)), 0), los_min)
                dose_t += 8 * 60
        elif rng.random() < 0.15:
            s = float(rng.uniform(1, 40)) * 60
            self._interval(self.infusions, stay, s, s + 60, int(rng.choice(schema.ANTIBIOTICS)), 1000.0, los_min)
        elif rng.random() < 0.1:
            self._emit_text(stay, int(rng.uniform(1, 40) * 60), 70012, "negative")

        if archetype == "septic" and rng.random() < 0.5:
            s = onset + 120
            self._segments(rng, stay, int(s), int(s + rng.uniform(12, 30) * 60), 221906, 0.05, 0.3, los_min)
        if archetype == "mixed_shock":
            end = onset + rng.uniform(20, 36) * 60
            self._segments(rng, stay, int(onset), int(end), 221906, 0.1, 0.5, los_min)
            self._segments(rng, stay, int(onset + 60), int(onset + 13 * 60), 222315, 2.4, 2.4, los_min, 1)
            if rng.random() < 0.3:
                self._segments(rng, stay, int(onset + 120), int(onset + 14 * 60), 221289, 0.02, 0.12, los_min)
            if rng.random() < 0.2:
                self._segments(rng, stay, int(onset + 60), int(onset + 10 * 60), 221662, 3, 12, los_min, 1)
            if rng.random() < 0.2:
                self._segments(rng, stay, int(onset + 60), int(onset + 10 * 60), 221749, 0.5, 2.0, los_min, 2)
            if rng.random() < 0.4:
                drug = 221653 if rng.random() < 0.5 else 221986
                lo, hi = (2.5, 10.0) if drug == 221653 else (0.25, 0.75)
                self._segments(rng, stay, int(onset + 180), int(onset + 15 * 60), drug, lo, hi, los_min)
        elif rng.random() < 0.05:
            s = int(rng.uniform(1, 30) * 60)
            self._segments(rng, stay, s, s + int(rng.uniform(6, 24) * 60), 221986, 0.2, 0.6, los_min)
        if rng.random() < 0.25:
            s = int(rng.uniform(0.5, 12) * 60)
            self._segments(rng, stay, s, s + int(rng.uniform(24, 48) * 60), 225152, 800, 1500, los_min, 0)
        for vs, ve in vent_intervals:
            self._segments(rng, stay, vs, ve, 222168, 20, 50, los_min, 0)
            if rng.random() < 0.3:
                self._segments(rng, stay, vs, min(ve, vs + 12 * 60), 221555, 1, 3, los_min, 1)
        if archetype in ("septic", "mixed_shock") or rng.random() < 0.15:
            s = int(rng.uniform(6, 60) * 60)
            self._segments(rng, stay, s, s + int(rng.uniform(12, 36) * 60), 223258, 1, 8, los_min, 1)
        if sick or rng.random() < 0.2:
            s = onset if sick else rng.uniform(1, 40) * 60
            for k in range(1 + int(rng.integers(0, 3))):
                b = int(s + k * 120)
                self._interval(self.infusions, stay, b, b + 60, 225158, round(float(rng.uniform(500, 1000)), 0), los_min)


def _fmt(v: float, decimals: int) -> str:
    if decimals == 0:
        return str(int(round(v)))
    return f"{v:.{decimals}f}"


def generate_cohort(spec: CohortSpec) -> "EhrStore":
    """Generate a synthetic cohort; a pure function of ``spec``."""
    from clinskill.ehr.store import EhrStore

    master = np.random.default_rng([int(spec.seed), 0])
    names = list(ARCHETYPES)
    probs = np.array([spec.archetype_weights.get(a, 0.0) for a in names])
    probs = probs / probs.sum()
    arche_idx = master.choice(len(names), size=spec.n_stays, p=probs)

    subjects: list[tuple] = []
    admissions: list[tuple] = []
    stays: list[tuple] = []
    gen = _StayGenerator(spec)
    archetypes: dict[int, str] = {}
    for i in range(spec.n_stays):
        rng = np.random.default_rng([int(spec.seed), 1, i])
        if subjects and rng.random() < 0.15:
            subject_id, age, sex = subjects[int(rng.integers(0, len(subjects)))]
        else:
            subject_id = 10_000_000 + len(subjects)
            age = int(rng.integers(18, 91))
            sex = "F" if rng.random() < 0.45 else "M"
            subjects.append((subject_id, age, sex))
        hadm_id = 20_000_000 + i
        stay_id = 30_000_000 + i
        los_min = int(round((MIN_STAY_HOURS + rng.gamma(2.0, 22.0)) * 60))
        intime = BASE_TIME + timedelta(
            days=int(rng.integers(0, 3650)), minutes=int(rng.integers(0, 24 * 60))
        )
        outtime = intime + timedelta(minutes=los_min)
        admittime = intime - timedelta(minutes=int(rng.integers(30, 48 * 60)))
        dischtime = outtime + timedelta(minutes=int(rng.integers(60, 7 * 24 * 60)))
        admissions.append((hadm_id, subject_id, admittime, dischtime))
        stays.append((stay_id, hadm_id, subject_id, intime, outtime))
        archetype = names[int(arche_idx[i])]
        archetypes[stay_id] = archetype
        gen.generate(i, archetype, rng, los_min)

    stay_frame = pd.DataFrame(stays, columns=[c for c, _ in schema.TABLES["icustays"]])
    tables = {
        "subjects": pd.DataFrame(sorted(subjects), columns=["subject_id", "age", "sex"]),
        "admissions": pd.DataFrame(admissions, columns=[c for c, _ in schema.TABLES["admissions"]]),
        "icustays": stay_frame,
        "chartevents": _event_frame(gen.chart.frame(), stay_frame),
        "labevents": _event_frame(gen.lab.frame(), stay_frame),
        "infusions": _interval_frame(gen.infusions.frame(), stay_frame, "infusions"),
        "procedures": _interval_frame(gen.procedures.frame(), stay_frame, "procedures"),
    }
    for name, rows in schema.dictionary_rows().items():
        tables[name] = pd.DataFrame(rows, columns=[c for c, _ in schema.TABLES[name]])
    logger.info(
        "generated %d stays, %d chart / %d lab rows",
        spec.n_stays,
        len(tables["chartevents"]),
        len(tables["labevents"]),
    )
    return EhrStore(tables, archetypes=archetypes)


def _ids(stay_idx: np.ndarray, stays: pd.DataFrame) -> dict[str, np.ndarray]:
    return {
        "subject_id": stays["subject_id"].to_numpy()[stay_idx],
        "hadm_id": stays["hadm_id"].to_numpy()[stay_idx],
        "stay_id": stays["stay_id"].to_numpy()[stay_idx],
    }


def _timestamps(stay_idx, minutes, stays: pd.DataFrame) -> pd.Series:
    intime = stays["intime"].to_numpy(dtype="datetime64[ns]")[stay_idx]
    return pd.Series(intime + minutes.astype("timedelta64[m]"), dtype="datetime64[ns]")


def _event_frame(cols: dict[str, np.ndarray], stays: pd.DataFrame) -> pd.DataFrame:
    stay_idx = cols["stay"].astype(np.int64)
    units = {e.item_id: e.unit for e in schema.DICTIONARY.values()}
    itemid = cols["itemid"].astype(np.int64)
    frame = pd.DataFrame(
        {
            **_ids(stay_idx, stays),
            "charttime": _timestamps(stay_idx, cols["minute"].astype(np.int64), stays),
            "itemid": itemid.astype(np.int32),
            "value": cols["value"].astype(object),
            "valuenum": cols["valuenum"].astype(float),
            "valueuom": [units[int(i)] for i in itemid],
        }
    )
    return frame.sort_values(["stay_id", "charttime", "itemid"], kind="stable").reset_index(drop=True)


def _interval_frame(cols: dict[str, np.ndarray], stays: pd.DataFrame, table: str) -> pd.DataFrame:
    stay_idx = cols["stay"].astype(np.int64)
    units = {e.item_id: e.unit for e in schema.DICTIONARY.values()}
    itemid = cols["itemid"].astype(np.int64)
    start = cols["start"].astype(np.int64)
    end = cols["end"].astype(np.int64)
    data = {
        **_ids(stay_idx, stays),
        "starttime": _timestamps(stay_idx, start, stays),
        "endtime": _timestamps(stay_idx, end, stays),
        "itemid": itemid.astype(np.int32),
    }
    if table == "infusions":
        data["rate"] = cols["rate"].astype(float)
        data["rateuom"] = [units[int(i)] for i in itemid]
    else:
        data["value"] = (end - start).astype(float)
        data["valueuom"] = ["min"] * len(itemid)
    frame = pd.DataFrame(data)
    return frame.sort_values(["stay_id", "starttime", "itemid"], kind="stable").reset_index(drop=True)
