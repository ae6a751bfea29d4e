"""Immutable in-memory EHR store with duckdb persistence and CSV export."""

from __future__ import annotations

import csv
import hashlib
import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator

import duckdb
import numpy as np
import pandas as pd

from clinskill.ehr import schema

logger = logging.getLogger(__name__)

CSV_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
EVENT_CATEGORIES = (
    "chart",
    "lab",
    "infusion_start",
    "infusion_end",
    "procedure_start",
    "procedure_end",
)


class UnknownStayError(KeyError):
    pass


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: int
    age: int
    sex: str


@dataclass(frozen=True)
class StayRecord:
    stay_id: int
    hadm_id: int
    subject_id: int
    intime: datetime
    outtime: datetime

    @property
    def los_hours(self) -> float:
        return (self.outtime - self.intime).total_seconds() / 3600.0


@dataclass(frozen=True)
class ClinicalEvent:
    stay_id: int
    charttime: datetime
    item_id: int
    value_num: float | None
    value_text: str | None
    category: str


@dataclass(frozen=True)
class ItemSeries:
    """Time-sorted observations of one item; ``minutes`` are offsets from intime."""

    minutes: np.ndarray
    values: np.ndarray
    texts: tuple[str | None, ...]
    unit: str | None = None


@dataclass(frozen=True)
class ItemIntervals:
    starts: np.ndarray
    ends: np.ndarray
    rates: np.ndarray


EMPTY_SERIES = ItemSeries(np.array([], dtype=np.int64), np.array([], dtype=float), ())
EMPTY_INTERVALS = ItemIntervals(
    np.array([], dtype=np.int64), np.array([], dtype=np.int64), np.array([], dtype=float)
)


@dataclass(frozen=True)
class StayIndex:
    stay: StayRecord
    series: dict[int, ItemSeries]
    intervals: dict[int, ItemIntervals]


def _coerce(frame: pd.DataFrame, table: str) -> pd.DataFrame:
    cols = schema.TABLES[table]
    missing = [c for c, _ in cols if c not in frame.columns]
    if missing:
        raise ValueError(f"table {table} missing columns {missing}")
    out = {}
    for col, sqltype in cols:
        s = frame[col]
        if sqltype == "TIMESTAMP":
            s = pd.to_datetime(s).astype("datetime64[ns]")
        elif sqltype in ("BIGINT", "INTEGER"):
            s = s.astype(np.int64)
        elif sqltype == "DOUBLE":
            s = pd.to_numeric(s, errors="coerce").astype(float)
        else:
            s = s.astype(object).where(s.notna(), None)
        out[col] = s.reset_index(drop=True)
    return pd.DataFrame(out)


class EhrStore:
    """Seven-table ICU store plus item dictionaries.

    The store is read-only after construction. ``with_rows`` returns a new
    store rather than modifying this one.
    """

    def __init__(
        self,
        tables: dict[str, pd.DataFrame],
        archetypes: dict[int, str] | None = None,
        coerce: bool = True,
    ):
        self.tables: dict[str, pd.DataFrame] = {}
        for name in schema.RAW_TABLES:
            frame = tables.get(name)
            if frame is None:
                frame = pd.DataFrame({c: [] for c, _ in schema.TABLES[name]})
            self.tables[name] = _coerce(frame, name) if coerce else frame.reset_index(drop=True)
        self.archetypes = dict(archetypes or {})
        self._lock = threading.Lock()
        self._index: dict[int, StayIndex] | None = None
        self._conn: duckdb.DuckDBPyConnection | None = None
        self._stays = {
            int(r.stay_id): StayRecord(
                int(r.stay_id),
                int(r.hadm_id),
                int(r.subject_id),
                r.intime.to_pydatetime(),
                r.outtime.to_pydatetime(),
            )
            for r in self.tables["icustays"].itertuples(index=False)
        }

    # -- records -----------------------------------------------------------
    @property
    def stay_ids(self) -> list[int]:
        return sorted(self._stays)

    def stays(self) -> list[StayRecord]:
        return [self._stays[s] for s in self.stay_ids]

    def stay(self, stay_id: int) -> StayRecord:
        try:
            return self._stays[int(stay_id)]
        except (KeyError, ValueError, TypeError):
            raise UnknownStayError(f"unknown stay_id {stay_id!r}") from None

    def subjects(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(int(r.subject_id), int(r.age), str(r.sex))
            for r in self.tables["subjects"].itertuples(index=False)
        ]

    def archetype(self, stay_id: int) -> str | None:
        return self.archetypes.get(int(stay_id))

    def events(self, stay_id: int) -> list[ClinicalEvent]:
        """All rows of one stay as ClinicalEvents, interval rows split into start/end pairs."""
        self.stay(stay_id)
        out: list[ClinicalEvent] = []
        for table, cat in (("chartevents", "chart"), ("labevents", "lab")):
            f = self.tables[table]
            for r in f[f["stay_id"] == stay_id].itertuples(index=False):
                num = None if pd.isna(r.valuenum) else float(r.valuenum)
                out.append(ClinicalEvent(stay_id, r.charttime.to_pydatetime(), int(r.itemid), num, r.value, cat))
        for table, prefix in (("infusions", "infusion"), ("procedures", "procedure")):
            f = self.tables[table]
            num_col = "rate" if table == "infusions" else "value"
            for r in f[f["stay_id"] == stay_id].itertuples(index=False):
                num = getattr(r, num_col)
                num = None if pd.isna(num) else float(num)
                out.append(ClinicalEvent(stay_id, r.starttime.to_pydatetime(), int(r.itemid), num, None, f"{prefix}_start"))
                out.append(ClinicalEvent(stay_id, r.endtime.to_pydatetime(), int(r.itemid), num, None, f"{prefix}_end"))
        out.sort(key=lambda e: (e.charttime, EVENT_CATEGORIES.index(e.category), e.item_id))
        return out

    # -- per-stay numeric index -------------------------------------------
    def index(self, stay_id: int) -> StayIndex:
        stay = self.stay(stay_id)
        if self._index is None:
            with self._lock:
                if self._index is None:
                    self._index = self._build_index()
        return self._index.get(stay.stay_id) or StayIndex(stay, {}, {})

    def _minutes(self, frame: pd.DataFrame, col: str) -> np.ndarray:
        intime = frame["stay_id"].map(
            {s: np.datetime64(r.intime, "ns") for s, r in self._stays.items()}
        )
        delta = frame[col].to_numpy(dtype="datetime64[ns]") - intime.to_numpy(dtype="datetime64[ns]")
        return (delta // np.timedelta64(1, "m")).astype(np.int64)

    def _build_index(self) -> dict[int, StayIndex]:
        series: dict[int, dict[int, ItemSeries]] = {s: {} for s in self._stays}
        intervals: dict[int, dict[int, ItemIntervals]] = {s: {} for s in self._stays}
        for table in schema.EVENT_TABLES:
            f = self.tables[table]
            if f.empty:
                continue
            f = f.assign(minute=self._minutes(f, "charttime"))
            f = f.sort_values(["stay_id", "itemid", "minute"], kind="stable")
            for (sid, item), g in f.groupby(["stay_id", "itemid"], sort=False):
                series[int(sid)][int(item)] = ItemSeries(
                    g["minute"].to_numpy(dtype=np.int64),
                    g["valuenum"].to_numpy(dtype=float),
                    tuple(g["value"].tolist()),
                    "|".join(sorted({str(u) for u in g["valueuom"]})),
                )
        for table in schema.INTERVAL_TABLES:
            f = self.tables[table]
            if f.empty:
                continue
            num_col = "rate" if table == "infusions" else "value"
            f = f.assign(start=self._minutes(f, "starttime"), end=self._minutes(f, "endtime"))
            f = f.sort_values(["stay_id", "itemid", "start"], kind="stable")
            for (sid, item), g in f.groupby(["stay_id", "itemid"], sort=False):
                intervals[int(sid)][int(item)] = ItemIntervals(
                    g["start"].to_numpy(dtype=np.int64),
                    g["end"].to_numpy(dtype=np.int64),
                    g[num_col].to_numpy(dtype=float),
                )
        return {s: StayIndex(self._stays[s], series[s], intervals[s]) for s in self._stays}

    # -- SQL ---------------------------------------------------------------
    def connection(self) -> duckdb.DuckDBPyConnection:
        """Shared read-only in-memory database; callers should use ``.cursor()``."""
        if self._conn is None:
            with self._lock:
                if self._conn is None:
                    self._conn = load_tables(self.tables)
        return self._conn

    # -- derivation --------------------------------------------------------
    def with_rows(self, table: str, rows: pd.DataFrame) -> "EhrStore":
        """Copy of the store with ``rows`` appended to ``table``."""
        tables = dict(self.tables)
        tables[table] = pd.concat([tables[table], _coerce(rows, table)], ignore_index=True)
        return EhrStore(tables, self.archetypes, coerce=False)

    def subset(self, stay_ids) -> "EhrStore":
        """Store restricted to ``stay_ids`` and their admissions and subjects."""
        keep = {int(s) for s in stay_ids}
        icu = self.tables["icustays"]
        icu = icu[icu["stay_id"].isin(keep)]
        tables = {"icustays": icu}
        tables["admissions"] = self.tables["admissions"][self.tables["admissions"]["hadm_id"].isin(icu["hadm_id"])]
        tables["subjects"] = self.tables["subjects"][self.tables["subjects"]["subject_id"].isin(icu["subject_id"])]
        for name in schema.EVENT_TABLES + schema.INTERVAL_TABLES:
            f = self.tables[name]
            tables[name] = f[f["stay_id"].isin(keep)]
        tables["d_items"] = self.tables["d_items"]
        tables["d_labitems"] = self.tables["d_labitems"]
        return EhrStore(tables, {k: v for k, v in self.archetypes.items() if k in keep}, coerce=False)

    # -- persistence -------------------------------------------------------
    def export_csv(self, directory: str | Path) -> list[Path]:
        """One RFC-4180 CSV per table (header row, CRLF, minimal quoting)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in schema.RAW_TABLES:
            path = directory / f"{name}.csv"
            self.tables[name].to_csv(
                path,
                index=False,
                date_format=CSV_TIME_FORMAT,
                lineterminator="\r\n",
                quoting=csv.QUOTE_MINIMAL,
            )
            paths.append(path)
        if self.archetypes:
            path = directory / "archetypes.csv"
            pd.DataFrame(
                sorted(self.archetypes.items()), columns=["stay_id", "archetype"]
            ).to_csv(path, index=False, lineterminator="\r\n")
            paths.append(path)
        return paths

    @classmethod
    def read_csv(cls, directory: str | Path) -> "EhrStore":
        directory = Path(directory)
        tables = {}
        for name in schema.RAW_TABLES:
            path = directory / f"{name}.csv"
            if not path.exists():
                raise FileNotFoundError(path)
            str_cols = {c: str for c, t in schema.TABLES[name] if t == "VARCHAR"}
            tables[name] = pd.read_csv(path, dtype=str_cols, keep_default_na=False, na_values={
                c: [""] for c, t in schema.TABLES[name] if t != "VARCHAR"
            })
            for c in str_cols:
                tables[name][c] = tables[name][c].replace("", None)
        archetypes = {}
        arch = directory / "archetypes.csv"
        if arch.exists():
            archetypes = {int(r.stay_id): r.archetype for r in pd.read_csv(arch).itertuples()}
        return cls(tables, archetypes)

    def save(self, path: str | Path) -> Path:
        """Write a single-file duckdb database (tables plus archetype labels)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists():
            path.unlink()
        con = duckdb.connect(str(path))
        try:
            _create_tables(con, self.tables)
            con.execute("CREATE TABLE _archetypes (stay_id BIGINT, archetype VARCHAR)")
            if self.archetypes:
                con.executemany(
                    "INSERT INTO _archetypes VALUES (?, ?)", sorted(self.archetypes.items())
                )
            con.execute("CHECKPOINT")
        finally:
            con.close()
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EhrStore":
        path = Path(path)
        if path.is_dir():
            return cls.read_csv(path)
        if not path.exists():
            raise FileNotFoundError(path)
        con = duckdb.connect(str(path), read_only=True)
        try:
            tables = {name: con.execute(f"SELECT * FROM {name}").df() for name in schema.RAW_TABLES}
            archetypes = dict(con.execute("SELECT stay_id, archetype FROM _archetypes").fetchall())
        finally:
            con.close()
        return cls(tables, archetypes)

    def fingerprint(self) -> str:
        """sha256 over the canonical CSV serialization of every table."""
        h = hashlib.sha256()
        for chunk in self._csv_chunks():
            h.update(chunk)
        return h.hexdigest()

    def _csv_chunks(self) -> Iterator[bytes]:
        for name in schema.RAW_TABLES:
            yield name.encode()
            yield self.tables[name].to_csv(
                index=False, date_format=CSV_TIME_FORMAT, lineterminator="\r\n"
            ).encode()
        yield repr(sorted(self.archetypes.items())).encode()


def _create_tables(con: duckdb.DuckDBPyConnection, tables: dict[str, pd.DataFrame]) -> None:
    for name, frame in tables.items():
        cols = schema.TABLES[name]
        ddl = ", ".join(f"{c} {t}" for c, t in cols)
        con.execute(f"CREATE TABLE {name} ({ddl})")
        if len(frame):
            con.register("_src", frame)
            con.execute(f"INSERT INTO {name} SELECT {', '.join(c for c, _ in cols)} FROM _src")
            con.unregister("_src")


def load_tables(tables: dict[str, pd.DataFrame], locked: bool = True) -> duckdb.DuckDBPyConnection:
    """Fresh in-memory database holding ``tables``.

    ``locked`` disables file and network access and freezes the configuration.
    """
    con = duckdb.connect(":memory:")
    _create_tables(con, tables)
    if locked:
        con.execute("SET enable_external_access = false")
        con.execute("SET lock_configuration = true")
    return con
