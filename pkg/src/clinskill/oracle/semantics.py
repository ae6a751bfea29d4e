"""Finding evaluation over a time-scoped view.

All times inside a FindingState are integer minutes since ICU admission. A
view at horizon H exposes exactly the rows charted at minute <= H, so every
function here is causal by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from clinskill.ehr import schema
from clinskill.ehr.store import ItemSeries
from clinskill.ehr.view import TimeScopedView, time_scoped_view
from clinskill.oracle.registry import FindingDefinition

logger = logging.getLogger(__name__)

CREATININE = 50912
LACTATE = 50813
PH = 50820
PO2 = 50821
FIO2 = 223835
PLATELETS = 51265
BILIRUBIN = 50885
MAP = 220052
URINE = 226559
WEIGHT = 226512
RESP_SUPPORT = (225792, 225794, 227287)
SOFA_WINDOW_MIN = 24 * 60
KDIGO_RISE_WINDOW_MIN = 48 * 60
_EPS = 1e-9


class UnitMismatchError(ValueError):
    """An event's unit disagrees with the unit a trigger was written against."""


@dataclass(frozen=True)
class FindingState:
    latched_since: int | None = None
    worst_stage_so_far: int | None = None
    active_interval: tuple[int, int | None] | None = None
    last_evidence_time: int | None = None
    baseline_score: int | None = None
    flags: tuple[str, ...] = ()


EMPTY_STATE = FindingState()


# -- signals ---------------------------------------------------------------
def _checked(series: ItemSeries, unit: str, item: int) -> ItemSeries:
    if len(series.minutes) and series.unit != unit:
        raise UnitMismatchError(f"item {item}: events carry {series.unit!r}, trigger expects {unit!r}")
    return series


def gcs_total_series(view: TimeScopedView) -> ItemSeries:
    """Sum of eye, verbal and motor at minutes where all three were charted."""
    cached = view._cache.get("gcs_total")
    if cached is not None:
        return cached
    parts = [_checked(view.series(i), "points", i) for i in schema.GCS_ITEMS]
    common = parts[0].minutes
    for p in parts[1:]:
        common = np.intersect1d(common, p.minutes)
    total = np.zeros(len(common))
    for p in parts:
        # last charted value at each common minute
        idx = np.searchsorted(p.minutes, common, side="right") - 1
        total += p.values[idx]
    out = ItemSeries(common.astype(np.int64), total, (None,) * len(common), "points")
    view._cache["gcs_total"] = out
    return out


def pf_ratio_series(view: TimeScopedView) -> ItemSeries:
    """PaO2 over the most recent FiO2 (room air 0.21 when none charted yet)."""
    cached = view._cache.get("pf_ratio")
    if cached is not None:
        return cached
    po2 = _checked(view.series(PO2), "mmHg", PO2)
    fio2 = _checked(view.series(FIO2), "%", FIO2)
    idx = np.searchsorted(fio2.minutes, po2.minutes, side="right") - 1
    frac = np.where(idx >= 0, fio2.values[np.maximum(idx, 0)] / 100.0 if len(fio2.values) else 0.21, 0.21)
    frac = np.where(frac > 0, frac, 0.21)
    out = ItemSeries(po2.minutes, po2.values / frac, (None,) * len(po2.minutes), "mmHg")
    view._cache["pf_ratio"] = out
    return out


def signal_series(view: TimeScopedView, signal, unit: str) -> ItemSeries:
    if signal == "gcs_total":
        return gcs_total_series(view)
    if signal == "pf_ratio":
        return pf_ratio_series(view)
    return _checked(view.series(int(signal)), unit, int(signal))


def covering_interval(view: TimeScopedView, items) -> tuple[int, int | None] | None:
    """Earliest-starting interval of ``items`` that covers the horizon."""
    h = view.horizon_minute
    best = None
    for item in items:
        iv = view.intervals(int(item))
        for s, e, ongoing in zip(iv.starts, iv.ends, iv.ongoing):
            if ongoing or e >= h:
                cand = (int(s), None if ongoing else int(e))
                if best is None or cand[0] < best[0]:
                    best = cand
    return best


def _window_values(series: ItemSeries, h: int, width: int) -> np.ndarray:
    lo = np.searchsorted(series.minutes, h - width, side="right")
    return series.values[lo:]


# -- scores ----------------------------------------------------------------
def sofa_cns_score(gcs_total: int) -> int:
    """GCS total 15 -> 0, 13-14 -> 1, 10-12 -> 2, 6-9 -> 3, below 6 -> 4."""
    if isinstance(gcs_total, bool) or int(gcs_total) != gcs_total:
        raise ValueError(f"GCS total must be an integer, got {gcs_total!r}")
    g = int(gcs_total)
    if not 3 <= g <= 15:
        raise ValueError(f"GCS total must lie in [3, 15], got {g}")
    if g == 15:
        return 0
    if g >= 13:
        return 1
    if g >= 10:
        return 2
    if g >= 6:
        return 3
    return 4


def _band(x: float, cuts: tuple[float, ...]) -> int:
    """Number of ascending cut points at or below ``x``."""
    return int(sum(x >= c for c in cuts))


def sofa_components(view: TimeScopedView) -> dict[str, int | None]:
    """Worst-value SOFA components over the 24 h ending at the horizon.

    A component is None when nothing needed for it was charted in the window.
    """
    cached = view._cache.get("sofa")
    if cached is not None:
        return cached
    h = view.horizon_minute
    w = SOFA_WINDOW_MIN
    out: dict[str, int | None] = {}

    pf = _window_values(pf_ratio_series(view), h, w)
    if len(pf):
        worst = float(pf.min())
        supported = any(_overlaps(view, item, h - w, h) for item in RESP_SUPPORT)
        score = 4 - _band(worst, (100, 200, 300, 400))
        out["respiration"] = score if supported else min(score, 2)
    else:
        out["respiration"] = None

    plt = _window_values(_checked(view.series(PLATELETS), "K/uL", PLATELETS), h, w)
    out["coagulation"] = 4 - _band(float(plt.min()), (20, 50, 100, 150)) if len(plt) else None

    bili = _window_values(_checked(view.series(BILIRUBIN), "mg/dL", BILIRUBIN), h, w)
    out["liver"] = _band(float(bili.max()), (1.2, 2.0, 6.0, 12.0)) if len(bili) else None

    mbp = _window_values(_checked(view.series(MAP), "mmHg", MAP), h, w)
    rates = {item: _max_rate(view, item, h - w, h) for item in (221906, 221289, 221662, 221653)}
    cv = None
    if len(mbp):
        cv = 1 if float(mbp.min()) < 70 else 0
    norepi, epi, dopa, dobu = rates[221906], rates[221289], rates[221662], rates[221653]
    if dopa is not None or dobu is not None or norepi is not None or epi is not None:
        cv = cv or 0
        if (dopa is not None and dopa > 15) or (epi is not None and epi > 0.1) or (norepi is not None and norepi > 0.1):
            cv = 4
        elif (dopa is not None and dopa > 5) or epi is not None or norepi is not None:
            cv = max(cv, 3)
        else:
            cv = max(cv, 2)
    out["cardiovascular"] = cv

    gcs = _window_values(gcs_total_series(view), h, w)
    out["cns"] = sofa_cns_score(int(round(float(np.clip(gcs.min(), 3, 15))))) if len(gcs) else None

    creat = _window_values(_checked(view.series(CREATININE), "mg/dL", CREATININE), h, w)
    renal = _band(float(creat.max()), (1.2, 2.0, 3.5, 5.0)) if len(creat) else None
    if h >= w:
        urine = _window_values(_checked(view.series(URINE), "mL", URINE), h, w)
        if len(urine):
            total = float(urine.sum())
            uo_score = 4 if total < 200 else 3 if total < 500 else 0
            renal = max(renal or 0, uo_score)
    out["renal"] = renal
    view._cache["sofa"] = out
    return out


def sofa_total(view: TimeScopedView) -> tuple[int, tuple[str, ...]]:
    """Sum of available components and the names of missing ones."""
    comps = sofa_components(view)
    missing = tuple(k for k, v in comps.items() if v is None)
    return sum(v for v in comps.values() if v is not None), missing


def _overlaps(view: TimeScopedView, item: int, lo: int, hi: int) -> bool:
    iv = view.intervals(item)
    return bool(np.any((iv.starts <= hi) & (iv.ongoing | (iv.ends > lo))))


def _max_rate(view: TimeScopedView, item: int, lo: int, hi: int) -> float | None:
    iv = view.intervals(item)
    mask = (iv.starts <= hi) & (iv.ongoing | (iv.ends > lo))
    if not mask.any():
        return None
    return float(np.nanmax(iv.rates[mask]))


def kdigo_stage(view: TimeScopedView, prior: FindingState = EMPTY_STATE) -> tuple[int, FindingState]:
    """Creatinine KDIGO stage at the horizon, reported as the worst stage so far."""
    s = _checked(view.series(CREATININE), "mg/dL", CREATININE)
    worst = prior.worst_stage_so_far or 0
    if not len(s.minutes):
        flags = tuple(sorted(set(prior.flags) | {"data_sparse"}))
        return worst, replace(prior, worst_stage_so_far=worst, flags=flags)
    baseline = float(s.values.min())
    current = float(s.values[-1])
    t = int(s.minutes[-1])
    recent = s.values[np.searchsorted(s.minutes, t - KDIGO_RISE_WINDOW_MIN, side="left"):]
    rise = current - float(recent.min())
    ratio = current / baseline if baseline > 0 else float("inf")
    if ratio >= 3.0 - _EPS or current >= 4.0 - _EPS:
        inst = 3
    elif ratio >= 2.0 - _EPS:
        inst = 2
    elif ratio >= 1.5 - _EPS or rise >= 0.3 - _EPS:
        inst = 1
    else:
        inst = 0
    stage = max(inst, worst)
    evidence = t if inst > 0 else prior.last_evidence_time
    flags = tuple(f for f in prior.flags if f != "data_sparse")
    return stage, replace(prior, worst_stage_so_far=stage, last_evidence_time=evidence, flags=flags)


def infection_onset(view: TimeScopedView, trigger: Mapping) -> int | None:
    """Minute at which a culture/antibiotic pairing first became visible."""
    cultures = np.concatenate(
        [view.series(int(i)).minutes for i in trigger.get("culture_items", schema.CULTURES)]
    )
    abx = np.concatenate(
        [view.intervals(int(i)).starts for i in trigger.get("antibiotic_items", schema.ANTIBIOTICS)]
    )
    if not len(cultures) or not len(abx):
        return None
    after = float(trigger.get("abx_after_culture_hours", 72)) * 60
    before = float(trigger.get("culture_after_abx_hours", 24)) * 60
    d = abx[None, :] - cultures[:, None]
    ok = ((d >= 0) & (d <= after)) | ((d < 0) & (-d <= before))
    if not ok.any():
        return None
    known = np.maximum(abx[None, :], cultures[:, None])
    return int(known[ok].min())


def baseline_sofa(view: TimeScopedView, prior: FindingState) -> int:
    if prior.baseline_score is not None:
        return prior.baseline_score
    return sofa_total(time_scoped_view(view.store, view.stay_id, 0))[0]


def sepsis_composite(
    view: TimeScopedView,
    prior: FindingState = EMPTY_STATE,
    infection_active: bool | None = None,
    min_rise: int = 2,
) -> tuple[bool, FindingState]:
    """Infection plus a SOFA rise of ``min_rise`` over the admission baseline, latched."""
    base = baseline_sofa(view, prior)
    total, missing = sofa_total(view)
    flags = tuple(sorted(set(prior.flags) | ({"sofa_components_missing"} if missing else set())))
    state = replace(prior, baseline_score=base, flags=flags)
    if prior.latched_since is not None:
        return True, state
    if infection_active is None:
        infection_active = infection_onset(view, {}) is not None
    if infection_active and total - base >= min_rise:
        h = view.horizon_minute
        return True, replace(state, latched_since=h, last_evidence_time=h)
    return False, state


# -- generic evaluation ----------------------------------------------------
def _windowed(defn: FindingDefinition, view: TimeScopedView, prior: FindingState):
    trig = defn.trigger
    h = view.horizon_minute
    window = int(round(defn.staleness_window * 60))
    kind = defn.kind
    if kind == "threshold":
        s = signal_series(view, trig["signal"], trig["unit"])
        if not len(s.minutes):
            return False, "none", replace(prior, last_evidence_time=None)
        t0, value = int(s.minutes[-1]), float(s.values[-1])
        tier = defn.tier_for(value) if h - t0 <= window else "none"
    elif kind == "gcs_drop":
        s = gcs_total_series(view)
        if len(s.minutes) < 2:
            return False, "none", replace(prior, last_evidence_time=None)
        t0, value = int(s.minutes[-1]), float(s.values[-1])
        dropped = value <= float(s.values[0]) - float(trig["min_drop"])
        tier = defn.fixed_tier if (dropped and h - t0 <= window) else "none"
    elif kind == "urine_rate":
        urine = _checked(view.series(int(trig["urine_item"])), trig["unit"], int(trig["urine_item"]))
        weight = view.series(int(trig["weight_item"]))
        lo = np.searchsorted(urine.minutes, h - window, side="right")
        if h < window or lo >= len(urine.minutes) or not len(weight.values):
            return False, "none", replace(prior, last_evidence_time=None)
        t0 = int(urine.minutes[-1])
        rate = float(urine.values[lo:].sum()) / (float(weight.values[0]) * (window / 60.0))
        tier = defn.fixed_tier if rate < float(trig["max_ml_per_kg_per_hour"]) else "none"
    else:
        raise ValueError(f"{defn.finding_id}: trigger kind {kind!r} is not windowed")
    active = tier != "none"
    return active, tier, replace(prior, last_evidence_time=t0 if active else None)


def evaluate_finding(
    defn: FindingDefinition,
    view: TimeScopedView,
    prior: FindingState = EMPTY_STATE,
    resolved: Mapping[str, bool] | None = None,
) -> tuple[bool, str, FindingState]:
    """Evaluate one finding at the view's horizon.

    ``resolved`` maps already evaluated finding ids to their activity at this
    horizon; composites read their prerequisites from it.
    """
    trig = defn.trigger
    kind = defn.kind
    h = view.horizon_minute
    resolved = resolved or {}

    if defn.semantics == "windowed":
        return _windowed(defn, view, prior)

    if defn.semantics == "interval_active":
        iv = covering_interval(view, trig["items"])
        active = iv is not None
        tier = defn.fixed_tier if active else "none"
        return active, tier, replace(prior, active_interval=iv, last_evidence_time=h if active else None)

    if defn.semantics == "latched":
        if kind == "kdigo":
            stage, state = kdigo_stage(view, prior)
            fires = stage >= int(trig["min_stage"])
            since = prior.latched_since
            if fires and since is None:
                since = h
            active = since is not None
            return active, defn.fixed_tier if active else "none", replace(state, latched_since=since)
        if kind == "text":
            first = None
            for item in trig["items"]:
                s = _checked(view.series(int(item)), trig["unit"], int(item))
                hits = [int(m) for m, txt in zip(s.minutes, s.texts) if txt == trig["equals"]]
                if hits:
                    first = hits[0] if first is None else min(first, hits[0])
        elif kind == "culture_antibiotic_pair":
            first = infection_onset(view, trig)
        else:
            raise ValueError(f"{defn.finding_id}: trigger kind {kind!r} cannot latch")
        since = prior.latched_since if prior.latched_since is not None else first
        active = since is not None
        state = replace(prior, latched_since=since, last_evidence_time=first if first is not None else prior.last_evidence_time)
        return active, defn.fixed_tier if active else "none", state

    # composite
    if kind == "sepsis":
        infection = resolved.get("infection_suspected")
        active, state = sepsis_composite(view, prior, infection, int(trig.get("min_sofa_rise", 2)))
    elif kind == "sofa_rise":
        base = baseline_sofa(view, prior)
        total, _ = sofa_total(view)
        active = total - base >= int(trig["min_sofa_rise"])
        state = replace(prior, baseline_score=base, last_evidence_time=h if active else None)
    elif kind == "septic_shock":
        missing = [r for r in defn.requires if r not in resolved]
        if missing:
            raise ValueError(f"{defn.finding_id}: prerequisites not evaluated: {missing}")
        lact = _checked(view.series(int(trig["lactate_item"])), trig["unit"], int(trig["lactate_item"]))
        window = int(round(float(trig["lactate_window_hours"]) * 60))
        fresh = len(lact.minutes) and h - int(lact.minutes[-1]) <= window
        high = bool(fresh and float(lact.values[-1]) >= float(trig["lactate_min"]))
        active = all(resolved[r] for r in defn.requires) and high
        state = replace(prior, last_evidence_time=h if active else None)
    else:
        raise ValueError(f"{defn.finding_id}: unknown composite kind {kind!r}")
    return active, defn.fixed_tier if active else "none", state
