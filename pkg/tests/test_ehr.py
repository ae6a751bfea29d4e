from __future__ import annotations

import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from clinskill.ehr import schema
from clinskill.ehr.cohort import CohortSpec, CohortSpecError, generate_cohort
from clinskill.ehr.splits import split_subjects
from clinskill.ehr.sql import QueryTimeout, SqlSyntaxError, WriteRejected, execute_sql
from clinskill.ehr.store import EhrStore, UnknownStayError
from clinskill.ehr.view import time_scoped_view
from clinskill.oracle.labels import build_trajectory_labels


def _row(store, table, stay_id, minutes, itemid, **extra):
    stay = store.stay(stay_id)
    t = stay.intime + dt.timedelta(minutes=minutes)
    base = {"subject_id": stay.subject_id, "hadm_id": stay.hadm_id, "stay_id": stay_id, "itemid": itemid}
    if table in schema.EVENT_TABLES:
        base.update(charttime=t, value=str(extra.get("valuenum")), valueuom=schema.DICTIONARY[itemid].unit)
    else:
        end = stay.intime + dt.timedelta(minutes=extra.pop("end_minutes"))
        base.update(starttime=t, endtime=end)
        if table == "infusions":
            base["rateuom"] = schema.DICTIONARY[itemid].unit
        else:
            base["valueuom"] = "min"
    base.update(extra)
    return pd.DataFrame([base])


# -- generate_cohort -------------------------------------------------------

def test_same_seed_gives_identical_store():
    a = generate_cohort(CohortSpec(n_stays=2, seed=7))
    b = generate_cohort(CohortSpec(n_stays=2, seed=7))
    assert a.fingerprint() == b.fingerprint()


def test_csv_export_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        generate_cohort(CohortSpec(n_stays=3, seed=5)).export_csv(tmp_path / name)
    for table in schema.RAW_TABLES:
        assert (tmp_path / "a" / f"{table}.csv").read_bytes() == (tmp_path / "b" / f"{table}.csv").read_bytes()


def test_different_seed_differs():
    a = generate_cohort(CohortSpec(n_stays=2, seed=7))
    b = generate_cohort(CohortSpec(n_stays=2, seed=8))
    assert a.fingerprint() != b.fingerprint()


def test_every_stay_at_least_48_hours(store50):
    stays = store50.stays()
    assert len(stays) == 50
    assert all(s.los_hours >= 48 for s in stays)


def test_septic_stays_reach_sepsis():
    # label oracle run over generated events
    store = generate_cohort(CohortSpec(n_stays=6, seed=3, archetype_weights={"septic": 1.0}))
    for sid in store.stay_ids:
        labels = build_trajectory_labels(store, sid)
        assert any("sepsis" in lab.active_findings for lab in labels), sid


@pytest.mark.parametrize(
    "archetype, finding",
    [
        ("renal_failure", "aki_stage2plus"),
        ("respiratory_failure", "invasive_ventilation"),
        ("mixed_shock", "vasoactive_support"),
        ("septic", "infection_suspected"),
    ],
)
def test_archetype_plants_trigger_family_findings(archetype, finding):
    store = generate_cohort(CohortSpec(n_stays=4, seed=21, archetype_weights={archetype: 1.0}))
    for sid in store.stay_ids:
        labels = build_trajectory_labels(store, sid)
        assert any(finding in lab.active_findings for lab in labels)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_stays": 0},
        {"archetype_weights": {"stable": 0.5, "septic": 0.4}},
        {"archetype_weights": {"unknown": 1.0}},
        {"event_rate_per_hour": {"chart": 0.0, "lab": 1.0}},
        {"event_rate_per_hour": {"chart": 1.0}},
    ],
)
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(CohortSpecError):
        CohortSpec(**kwargs)


def test_spec_text_round_trip():
    spec = CohortSpec(n_stays=9, seed=123, archetype_weights={"stable": 0.25, "septic": 0.75})
    assert CohortSpec.from_text(spec.to_text()) == spec
    parsed = CohortSpec.from_text("n_stays = 3\nseed = 4\n")
    assert (parsed.n_stays, parsed.seed) == (3, 4)
    with pytest.raises(CohortSpecError):
        CohortSpec.from_text("n_stays = 3\ncolour = red\n")


def test_record_invariants(small_store):
    subjects = small_store.subjects()
    assert len({s.subject_id for s in subjects}) == len(subjects)
    assert all(18 <= s.age <= 100 and s.sex in ("F", "M") for s in subjects)
    assert len(set(small_store.stay_ids)) == len(small_store.stay_ids)
    assert all(s.intime < s.outtime for s in small_store.stays())


def test_events_inside_stay_and_intervals_paired(small_store):
    for sid in small_store.stay_ids[:8]:
        stay = small_store.stay(sid)
        events = small_store.events(sid)
        assert all(stay.intime <= e.charttime <= stay.outtime for e in events)
        starts, ends = {}, {}
        for e in events:
            kind = e.category.rsplit("_", 1)
            if len(kind) == 2 and kind[1] in ("start", "end"):
                bucket = starts if kind[1] == "start" else ends
                bucket[(kind[0], e.item_id)] = bucket.get((kind[0], e.item_id), 0) + 1
        assert starts == ends


def test_dictionary_ids_unique():
    ids = [e.item_id for e in schema.CHART_ITEMS + schema.LAB_ITEMS + schema.INFUSION_ITEMS + schema.PROCEDURE_ITEMS]
    assert len(ids) == len(set(ids))


# -- persistence -----------------------------------------------------------

def test_duckdb_and_csv_round_trip(tmp_path, small_store):
    small_store.save(tmp_path / "store.duckdb")
    assert EhrStore.load(tmp_path / "store.duckdb").fingerprint() == small_store.fingerprint()
    small_store.export_csv(tmp_path / "csv")
    assert EhrStore.read_csv(tmp_path / "csv").fingerprint() == small_store.fingerprint()
    header = (tmp_path / "csv" / "icustays.csv").read_bytes().split(b"\r\n", 1)[0]
    assert header == b"stay_id,hadm_id,subject_id,intime,outtime"


# -- execute_sql -----------------------------------------------------------

def test_intime_query_shape(small_store):
    sid = small_store.stay_ids[0]
    res = execute_sql(small_store, f"SELECT intime FROM icustays WHERE stay_id={sid}")
    assert res.columns == ("intime",)
    assert len(res) == 1 and isinstance(res.scalar(), dt.datetime)
    assert res.scalar() == small_store.stay(sid).intime


def test_empty_result_is_not_error(small_store):
    res = execute_sql(small_store, "SELECT * FROM chartevents WHERE 1 = 0")
    assert len(res) == 0 and "charttime" in res.columns
    empty = EhrStore({})
    assert len(execute_sql(empty, "SELECT * FROM procedures")) == 0


def test_syntax_error_surfaces_engine_message(small_store):
    with pytest.raises(SqlSyntaxError) as err:
        execute_sql(small_store, "SELECT no_such_column FROM icustays")
    assert "no_such_column" in str(err.value)


WRITES = [
    "INSERT INTO icustays VALUES (1, 2, 3, NULL, NULL)",
    "UPDATE chartevents SET valuenum = 0",
    "DELETE FROM labevents",
    "DROP TABLE icustays",
    "CREATE TABLE x AS SELECT 1",
    "ALTER TABLE icustays ADD COLUMN z INT",
    "COPY icustays TO '/tmp/out.csv'",
    "ATTACH '/tmp/other.db' AS other",
    "SELECT 1; DELETE FROM icustays",
    "WITH t AS (SELECT 1) INSERT INTO icustays SELECT * FROM t",
    "PRAGMA enable_external_access",
    "SET enable_external_access = true",
    "INSTALL httpfs",
]


@pytest.mark.parametrize("sql", WRITES)
def test_write_statements_rejected(small_store, sql):
    before = small_store.fingerprint()
    with pytest.raises((WriteRejected, SqlSyntaxError)):
        execute_sql(small_store, sql)
    assert small_store.fingerprint() == before
    assert len(execute_sql(small_store, "SELECT * FROM icustays")) == len(small_store.stay_ids)


def test_external_file_access_blocked(small_store):
    with pytest.raises(SqlSyntaxError):
        execute_sql(small_store, "SELECT * FROM read_csv('/etc/hostname')")


def test_timeout(small_store):
    with pytest.raises(QueryTimeout):
        execute_sql(small_store, "SELECT count(*) FROM range(100000000000) a", timeout_s=0.2)


def test_string_literals_do_not_trip_guard(small_store):
    res = execute_sql(small_store, "SELECT 'delete; drop' AS note")
    assert res.scalar() == "delete; drop"


# -- time_scoped_view ------------------------------------------------------

def test_future_event_excluded(small_store):
    sid = small_store.stay_ids[1]
    store = small_store.with_rows("labevents", _row(small_store, "labevents", sid, 12 * 60, 50813, valuenum=9.9))
    view = time_scoped_view(store, sid, 8)
    res = execute_sql(view, "SELECT * FROM labevents WHERE valuenum = 9.9")
    assert len(res) == 0
    assert len(execute_sql(time_scoped_view(store, sid, 12), "SELECT * FROM labevents WHERE valuenum = 9.9")) == 1


def test_t0_shows_only_admission_rows(small_store):
    sid = small_store.stay_ids[2]
    intime = small_store.stay(sid).intime
    view = time_scoped_view(small_store, sid, 0)
    for table in schema.EVENT_TABLES:
        times = execute_sql(view, f"SELECT DISTINCT charttime FROM {table}").column("charttime")
        assert times and set(times) == {intime}
    res = execute_sql(view, "SELECT outtime FROM icustays")
    assert res.rows == ((None,),)


def test_t48_matches_direct_count(small_store):
    sid = small_store.stay_ids[3]
    horizon = small_store.stay(sid).intime + dt.timedelta(hours=48)
    view = time_scoped_view(small_store, sid, 48)
    for table in schema.EVENT_TABLES:
        f = small_store.tables[table]
        expected = int(((f.stay_id == sid) & (f.charttime <= pd.Timestamp(horizon))).sum())
        assert execute_sql(view, f"SELECT count(*) FROM {table}").scalar() == expected


def test_straddling_interval_masked(small_store):
    sid = small_store.stay_ids[4]
    rows = _row(small_store, "infusions", sid, 6 * 60, 221986, end_minutes=20 * 60, rate=0.5)
    store = small_store.with_rows("infusions", rows)
    view = time_scoped_view(store, sid, 10)
    res = execute_sql(view, "SELECT starttime, endtime FROM infusions WHERE itemid = 221986 AND rate = 0.5")
    assert len(res) == 1 and res.rows[0][1] is None
    iv = view.intervals(221986)
    k = int(np.flatnonzero(iv.starts == 360)[0])
    assert iv.ongoing[k] and iv.ends[k] == -1
    after = time_scoped_view(store, sid, 24)
    assert execute_sql(after, "SELECT endtime FROM infusions WHERE rate = 0.5 AND itemid = 221986").scalar() is not None


def test_view_errors(small_store):
    with pytest.raises(UnknownStayError):
        time_scoped_view(small_store, 1, 4)
    with pytest.raises(ValueError):
        time_scoped_view(small_store, small_store.stay_ids[0], 49)
    with pytest.raises(ValueError):
        time_scoped_view(small_store, small_store.stay_ids[0], -1)


ADVERSARIAL = [
    "SELECT * FROM chartevents",
    "SELECT max(charttime) AS m FROM labevents",
    "SELECT * FROM labevents ORDER BY charttime DESC LIMIT 3",
    "SELECT starttime, endtime FROM infusions",
    "SELECT starttime, endtime FROM procedures",
    "SELECT intime, outtime FROM icustays",
    "SELECT admittime, dischtime FROM admissions",
    "SELECT charttime FROM chartevents UNION ALL SELECT charttime FROM labevents",
    "SELECT i.intime + INTERVAL 1 DAY > max(c.charttime) FROM icustays i, chartevents c GROUP BY i.intime",
    "SELECT starttime + to_minutes(CAST(value AS BIGINT)) FROM procedures",
]


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.data())
def test_visibility_soundness(small_store, data):
    sid = data.draw(st.sampled_from(small_store.stay_ids))
    t = data.draw(st.integers(0, 48))
    sql = data.draw(st.sampled_from(ADVERSARIAL))
    view = time_scoped_view(small_store, sid, t)
    try:
        res = execute_sql(view, sql)
    except SqlSyntaxError:
        return
    for row in res.rows:
        for cell in row:
            if isinstance(cell, dt.datetime):
                assert cell <= view.horizon


# -- split_subjects --------------------------------------------------------

def _multi_stay_store():
    base = generate_cohort(CohortSpec(n_stays=30, seed=2))
    icu = base.tables["icustays"].copy()
    adm = base.tables["admissions"].copy()
    # give one subject three stays
    target = int(icu.subject_id.iloc[0])
    icu.loc[icu.index[:3], "subject_id"] = target
    adm.loc[adm.index[:3], "subject_id"] = target
    tables = dict(base.tables)
    tables["icustays"], tables["admissions"] = icu, adm
    return EhrStore(tables), target


def test_subject_stays_share_split():
    store, target = _multi_stay_store()
    stays = [s.stay_id for s in store.stays() if s.subject_id == target]
    assert len(stays) >= 3
    for seed in range(10):
        a = split_subjects(store, 0.5, seed)
        assert len({a.split_of_stay(s) for s in stays}) == 1


def test_split_fraction_and_determinism():
    rows = pd.DataFrame({"subject_id": range(100), "age": 50, "sex": "F"})
    store = EhrStore({"subjects": rows})
    a = split_subjects(store, 0.1, 4)
    n_train = len(a.subjects_in("train"))
    assert abs(n_train - 10) <= 3 * np.sqrt(100 * 0.1 * 0.9)
    assert a == split_subjects(store, 0.1, 4)
    with pytest.raises(ValueError):
        split_subjects(store, 1.0, 4)
