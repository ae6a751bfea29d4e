"""Checkpoint-scoped visibility over one ICU stay."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import duckdb
import numpy as np
import pandas as pd

from clinskill.ehr import schema
from clinskill.ehr.store import (
    EMPTY_INTERVALS,
    EMPTY_SERIES,
    ClinicalEvent,
    EhrStore,
    ItemIntervals,
    ItemSeries,
    StayRecord,
    load_tables,
)

MAX_T_HOUR = 48


@dataclass(frozen=True)
class VisibleIntervals:
    """Intervals started by the horizon; ``ongoing`` marks those whose end is masked."""

    starts: np.ndarray
    ends: np.ndarray
    rates: np.ndarray
    ongoing: np.ndarray

    def __len__(self) -> int:
        return len(self.starts)


@dataclass(frozen=True)
class TimeScopedView:
    store: EhrStore = field(repr=False, compare=False)
    stay_id: int
    horizon: datetime
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    @property
    def stay(self) -> StayRecord:
        return self.store.stay(self.stay_id)

    @property
    def t_hour(self) -> float:
        return (self.horizon - self.stay.intime).total_seconds() / 3600.0

    @property
    def horizon_minute(self) -> int:
        return int((self.horizon - self.stay.intime).total_seconds() // 60)

    # -- python access -----------------------------------------------------
    def _index(self):
        ix = self._cache.get("index")
        if ix is None:
            ix = self._cache["index"] = self.store.index(self.stay_id)
            self._cache["h"] = self.horizon_minute
        return ix

    def series(self, item_id: int) -> ItemSeries:
        key = ("series", int(item_id))
        out = self._cache.get(key)
        if out is None:
            full = self._index().series.get(int(item_id), EMPTY_SERIES)
            k = int(np.searchsorted(full.minutes, self._cache["h"], side="right"))
            out = ItemSeries(full.minutes[:k], full.values[:k], full.texts[:k], full.unit)
            self._cache[key] = out
        return out

    def intervals(self, item_id: int) -> VisibleIntervals:
        key = ("intervals", int(item_id))
        out = self._cache.get(key)
        if out is None:
            full: ItemIntervals = self._index().intervals.get(int(item_id), EMPTY_INTERVALS)
            h = self._cache["h"]
            keep = full.starts <= h
            ends = full.ends[keep]
            ongoing = ends > h
            out = VisibleIntervals(full.starts[keep], np.where(ongoing, -1, ends), full.rates[keep], ongoing)
            self._cache[key] = out
        return out

    def events(self) -> list[ClinicalEvent]:
        """Visible events; interval ends after the horizon are withheld."""
        out = []
        for ev in self.store.events(self.stay_id):
            if ev.charttime <= self.horizon:
                out.append(ev)
        return out

    # -- SQL sandbox -------------------------------------------------------
    def visible_tables(self) -> dict[str, pd.DataFrame]:
        t = self.store.tables
        stay = self.stay
        h = pd.Timestamp(self.horizon)
        out: dict[str, pd.DataFrame] = {}
        out["subjects"] = t["subjects"][t["subjects"]["subject_id"] == stay.subject_id]
        adm = t["admissions"][t["admissions"]["hadm_id"] == stay.hadm_id].copy()
        adm["dischtime"] = adm["dischtime"].where(adm["dischtime"] <= h)
        out["admissions"] = adm
        icu = t["icustays"][t["icustays"]["stay_id"] == stay.stay_id].copy()
        icu["outtime"] = icu["outtime"].where(icu["outtime"] <= h)
        out["icustays"] = icu
        for name in schema.EVENT_TABLES:
            f = t[name]
            out[name] = f[(f["stay_id"] == stay.stay_id) & (f["charttime"] <= h)]
        for name in schema.INTERVAL_TABLES:
            f = t[name]
            f = f[(f["stay_id"] == stay.stay_id) & (f["starttime"] <= h)].copy()
            future = f["endtime"] > h
            f["endtime"] = f["endtime"].where(~future)
            if name == "procedures":
                # the recorded duration would reveal the masked end
                f["value"] = f["value"].where(~future)
            out[name] = f
        out["d_items"] = t["d_items"]
        out["d_labitems"] = t["d_labitems"]
        return out

    def connection(self) -> duckdb.DuckDBPyConnection:
        con = self._cache.get("con")
        if con is None:
            con = load_tables(self.visible_tables())
            self._cache["con"] = con
        return con


def time_scoped_view(store: EhrStore, stay_id: int, t_hour: float) -> TimeScopedView:
    """View of ``stay_id`` limited to rows charted at or before intime + t_hour."""
    stay = store.stay(stay_id)
    if not 0 <= t_hour <= MAX_T_HOUR:
        raise ValueError(f"t_hour must lie in [0, {MAX_T_HOUR}], got {t_hour!r}")
    return TimeScopedView(store, stay.stay_id, stay.intime + timedelta(hours=t_hour))
