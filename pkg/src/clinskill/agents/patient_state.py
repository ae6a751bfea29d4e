"""Built-in patient-state functions for surveillance, evaluated on a time-scoped view.

Each returns a JSON-ready dict. Hours are relative to ICU admission and
nothing past the view's horizon is ever read.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from clinskill.ehr import schema
from clinskill.ehr.view import TimeScopedView
from clinskill.oracle import semantics as sem

INR = 51237
PCO2 = 50818
CRRT = 225802
INVASIVE, NIV, HFNC = 225792, 225794, 227287
URINE_WINDOW_H = 6


def _r(x):
    return None if x is None else round(float(x), 4)


def _hours(minute) -> float | None:
    return None if minute is None else round(float(minute) / 60.0, 4)


def _latest(view: TimeScopedView, item: int) -> dict:
    s = view.series(item)
    if not len(s.minutes):
        return {"value": None, "hour": None}
    return {"value": _r(s.values[-1]), "hour": _hours(s.minutes[-1])}


def _support(view: TimeScopedView, item: int) -> dict:
    iv = view.intervals(item)
    active = bool(np.any(iv.ongoing))
    started = [int(m) for m in iv.starts[iv.ongoing]] if active else []
    return {
        "active": active,
        "episodes_so_far": int(len(iv)),
        "active_since_hour": _hours(min(started)) if started else None,
        "current_rate": _r(float(np.nanmax(iv.rates[iv.ongoing]))) if active and np.any(~np.isnan(iv.rates[iv.ongoing])) else None,
    }


def get_suspicion_of_infection(view: TimeScopedView) -> dict:
    onset = sem.infection_onset(view, {})
    cultures = sum(len(view.series(i).minutes) for i in schema.CULTURES)
    abx = sum(len(view.intervals(i)) for i in schema.ANTIBIOTICS)
    return {"suspected": onset is not None, "onset_hour": _hours(onset), "cultures": cultures,
            "antibiotic_courses": abx}


def compute_sofa_score(view: TimeScopedView) -> dict:
    comps = sem.sofa_components(view)
    total, missing = sem.sofa_total(view)
    return {"components": dict(sorted(comps.items())), "total": total, "missing_components": list(missing),
            "window_hours": 24}


def kdigo_stages(view: TimeScopedView) -> dict:
    stage, _ = sem.kdigo_stage(view)
    s = view.series(sem.CREATININE)
    return {"creatinine_stage": stage, "latest_creatinine": _latest(view, sem.CREATININE),
            "lowest_creatinine": _r(s.values.min()) if len(s.minutes) else None}


def get_urine_output_rate(view: TimeScopedView) -> dict:
    h = view.horizon_minute
    s = view.series(sem.URINE)
    mask = s.minutes > h - URINE_WINDOW_H * 60
    total = float(s.values[mask].sum()) if len(s.minutes) else 0.0
    w = view.series(sem.WEIGHT)
    weight = float(w.values[-1]) if len(w.minutes) else None
    span = min(URINE_WINDOW_H, h / 60.0)
    rate = total / weight / span if weight and span > 0 else None
    return {"window_hours": URINE_WINDOW_H, "urine_ml": _r(total), "weight_kg": _r(weight), "ml_per_kg_per_hour": _r(rate)}


def ventilation_info(view: TimeScopedView) -> dict:
    return {"invasive": _support(view, INVASIVE), "noninvasive": _support(view, NIV), "high_flow": _support(view, HFNC)}


def get_vasoactive_agent_info(view: TimeScopedView) -> dict:
    out = {}
    for item in schema.VASOPRESSORS + schema.INOTROPES:
        out[schema.DICTIONARY[item].label.lower()] = _support(view, item)
    return out


def gcs(view: TimeScopedView) -> dict:
    tot = sem.gcs_total_series(view)
    h = view.horizon_minute
    recent = tot.values[tot.minutes > h - 24 * 60] if len(tot.minutes) else np.array([])
    return {"latest_total": _r(tot.values[-1]) if len(tot.minutes) else None,
            "latest_hour": _hours(tot.minutes[-1]) if len(tot.minutes) else None,
            "lowest_24h": _r(recent.min()) if len(recent) else None}


def get_blood_gas_info(view: TimeScopedView) -> dict:
    pf = sem.pf_ratio_series(view)
    return {
        "lactate": _latest(view, sem.LACTATE),
        "ph": _latest(view, sem.PH),
        "po2": _latest(view, sem.PO2),
        "pco2": _latest(view, PCO2),
        "pf_ratio": {"value": _r(pf.values[-1]), "hour": _hours(pf.minutes[-1])} if len(pf.minutes)
        else {"value": None, "hour": None},
    }


def get_coagulation(view: TimeScopedView) -> dict:
    return {"inr": _latest(view, INR), "platelets": _latest(view, sem.PLATELETS)}


def get_crrt_info(view: TimeScopedView) -> dict:
    return _support(view, CRRT)


PATIENT_STATE_FUNCTIONS: dict[str, Callable[[TimeScopedView], dict]] = {
    f.__name__: f
    for f in (get_suspicion_of_infection, compute_sofa_score, kdigo_stages, get_urine_output_rate,
              ventilation_info, get_vasoactive_agent_info, gcs, get_blood_gas_info, get_coagulation, get_crrt_info)
}
