from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinskill.bench import (
    QUESTION_TYPES,
    ConfigError,
    Extractor,
    compile_extractor,
    extract_ground_truth,
    generate_benchmark,
    generate_instances,
    instantiate_variants,
    load_template_pack,
    materialize,
    parse_template_pack,
    read_instances,
    reference_type_mix,
    truth_table,
    type_census,
    variant_quotas,
    write_instances,
)
from clinskill.bench.variants import QuestionVariant, bind_template
from clinskill.ehr.cohort import CohortSpec, generate_cohort
from clinskill.ehr.splits import split_subjects
from clinskill.graph import load_graph

from helpers import INTIME, STAY, make_store

GRAPH = load_graph()
PACK = load_template_pack()
MILRINONE, CRRT, INVASIVE = 221986, 225802, 225792


@pytest.fixture(scope="module")
def store():
    return generate_cohort(CohortSpec(n_stays=120, seed=21))


@pytest.fixture(scope="module")
def con(store):
    return materialize(store, GRAPH)


@pytest.fixture(scope="module")
def splits(store):
    return split_subjects(store, 0.3, 4)


def variant(concept, key):
    return next(v for v in instantiate_variants(GRAPH[concept], PACK) if v.key == key)


# -- variants and templates ------------------------------------------------

def test_every_concept_binds_variants():
    seen = Counter()
    for name in GRAPH.names("derived"):
        vs = instantiate_variants(GRAPH[name], PACK)
        assert vs, name
        for v in vs:
            assert "{" not in v.question_for(1, 2, 3)
            seen[v.question_type] += 1
    assert set(seen) == set(QUESTION_TYPES)


def test_troponin_comparative_phrasing():
    v = variant("cardiac_marker", "trop_over_01")
    text = v.question_for(30001, 10001, 20001)
    assert "By how many ng/mL does this patient's maximum troponin T level exceed 0.1" in text
    assert "30001" in text and v.question_type == "comparative"


def test_bun_creatinine_ratio_variant():
    ratio = [v for v in instantiate_variants(GRAPH["first_day_lab"], PACK) if v.question_type == "ratio"]
    assert any("BUN-to-creatinine ratio" in v.template for v in ratio)


def test_stray_placeholder_is_config_error():
    with pytest.raises(ConfigError):
        bind_template("Value of {label} over {mystery}", {"label": "x"})
    pack = parse_template_pack("[direct]\nodd = What is {nonsense} for stay {stay_id}?\n")
    spec = {"v": {"type": "direct", "op": "max", "column": "heart_rate", "template": "direct.odd", "label": "hr"}}
    with pytest.raises(ConfigError):
        instantiate_variants("vitalsign", pack, specs=spec)


def test_pack_missing_type_is_config_error():
    pack = parse_template_pack("[direct]\nmax = What is the max {label}?\n")
    with pytest.raises(ConfigError):
        instantiate_variants(GRAPH["cardiac_marker"], pack)


def test_extractor_validation():
    with pytest.raises(ConfigError):
        Extractor(op="median", column="x")
    with pytest.raises(ConfigError):
        Extractor(op="max")
    with pytest.raises(ConfigError):
        Extractor(op="max", column="x", post="ratio")
    with pytest.raises(ConfigError):
        Extractor(op="max", column="x", filter="last_week")


def test_compile_rejects_unknown_columns():
    with pytest.raises(ConfigError):
        compile_extractor("vitalsign", Extractor(op="max", column="nope"), {"heart_rate": "DOUBLE"})
    with pytest.raises(ConfigError):
        compile_extractor(
            "vitalsign",
            Extractor(op="max", column="heart_rate", where="bogus > 1"),
            {"heart_rate": "DOUBLE", "charttime": "TIMESTAMP"},
        )


# -- ground truth ----------------------------------------------------------

def test_max_milrinone_rate():
    s = make_store(intervals=[(1, 3, MILRINONE, 0.2), (5, 9, MILRINONE, 0.5)])
    assert extract_ground_truth(variant("milrinone", "max_rate"), STAY, s, GRAPH) == 0.5


def test_single_ventilation_episode():
    s = make_store(intervals=[(2, 20, INVASIVE, None)])
    assert extract_ground_truth(variant("ventilation", "n_invasive"), STAY, s, GRAPH) == 1


def test_hours_to_crrt_by_subtraction():
    s = make_store(intervals=[(10, 30, CRRT, None)])
    start = s.tables["procedures"]["starttime"].min().to_pydatetime()
    expected = (start - INTIME).total_seconds() / 3600.0
    assert extract_ground_truth(variant("crrt", "hours_to_crrt"), STAY, s, GRAPH) == expected == 10.0


def test_no_rows_means_no_truth(caplog):
    s = make_store()
    assert extract_ground_truth(variant("crrt", "hours_to_crrt"), STAY, s, GRAPH) is None


def test_default_makes_variant_universal():
    s = make_store()
    assert extract_ground_truth(variant("milrinone", "max_rate"), STAY, s, GRAPH) == 0.0


def test_truth_matches_pandas_oracle(store, con):
    inf = store.tables["infusions"]
    mil = inf[inf.itemid == MILRINONE].groupby("stay_id")["rate"].max()
    table = truth_table(con, variant("milrinone", "max_rate"))
    assert set(table) == set(store.stay_ids)
    for sid, val in table.items():
        assert val == (float(mil[sid]) if sid in mil.index else 0.0)

    proc = store.tables["procedures"]
    crrt = proc[proc.itemid == CRRT]
    icu = store.tables["icustays"].set_index("stay_id")["intime"]
    first = crrt.groupby("stay_id")["starttime"].min()
    table = truth_table(con, variant("crrt", "hours_to_crrt"))
    assert set(table) == set(first.index)
    for sid, t in first.items():
        assert math.isclose(table[sid], (t - icu[sid]).total_seconds() / 3600.0, abs_tol=1e-9)


def test_first_day_filter_matches_pandas(store, con):
    ce = store.tables["chartevents"]
    icu = store.tables["icustays"].set_index("stay_id")["intime"]
    hr = ce[ce.itemid == 220045].copy()
    hr["intime"] = hr.stay_id.map(icu)
    hr = hr[(hr.charttime >= hr.intime) & (hr.charttime <= hr.intime + np.timedelta64(24, "h"))]
    expected = hr.groupby("stay_id")["valuenum"].max()
    ex = Extractor(op="max", column="heart_rate", filter="first_day")
    sql = compile_extractor("vitalsign", ex, {"heart_rate": "DOUBLE", "charttime": "TIMESTAMP", "stay_id": "INTEGER"})
    got = {sid: v for sid, v in con.execute(sql).fetchall() if v is not None}
    assert got == {int(k): float(v) for k, v in expected.items()}


# -- instance generation ---------------------------------------------------

def test_budget_split_round_robin():
    vs = [QuestionVariant("c", f"v{i}", "a", "direct", "t", Extractor(op="max", column="a")) for i in range(2)]
    assert variant_quotas(vs, 10) == [5, 5]
    three = vs + [QuestionVariant("c", "v2", "a", "direct", "t", Extractor(op="max", column="a"))]
    assert variant_quotas(three, 10) == [4, 3, 3]


def test_budget_ten_two_variants(store, con, splits):
    node = GRAPH["milrinone"]
    vs = [variant("milrinone", "max_rate"), variant("milrinone", "max_rate")]
    vs[1] = QuestionVariant(**{**vs[1].__dict__, "key": "max_rate_b"})
    out = generate_instances(node, store, 10, splits, seed=3, variants=vs, con=con)
    assert Counter(i.variant for i in out) == {"max_rate": 5, "max_rate_b": 5}
    assert Counter(i.split for i in out) == {"train": 1, "test": 9}
    assert len({i.stay_id for i in out}) == 10


def test_instances_carry_level_and_split(store, con, splits):
    for name in ("vitalsign", "ventilation", "sofa"):
        out = generate_instances(GRAPH[name], store, 40, splits, seed=1, con=con)
        assert out and all(i.level == GRAPH[name].level for i in out)
        for i in out:
            assert i.split == splits.split_of_stay(i.stay_id)
            assert i.subject_id == store.stay(i.stay_id).subject_id


def test_same_seed_same_instances(store, con, splits):
    a = generate_instances(GRAPH["bg"], store, 60, splits, seed=9, con=con)
    b = generate_instances(GRAPH["bg"], store, 60, splits, seed=9, graph=GRAPH)
    c = generate_instances(GRAPH["bg"], store, 60, splits, seed=10, con=con)
    assert a == b
    assert {i.stay_id for i in a} != {i.stay_id for i in c}


def test_shortfall_emits_fewer_and_warns(store, con, splits, caplog):
    out = generate_instances(GRAPH["dopamine"], store, 1000, splits, seed=0, con=con)
    assert len(out) < 1000
    assert "only" in caplog.text
    assert len({i.stay_id for i in out}) == len(out)


def test_budget_bounds(store, con, splits):
    with pytest.raises(ValueError):
        generate_instances(GRAPH["bg"], store, 1001, splits, seed=0, con=con)
    with pytest.raises(ValueError):
        generate_instances(GRAPH["bg"], store, 10, splits, seed=0, variants=[], con=con)


def test_truth_reproducible_bit_identically(store, con, splits):
    out = generate_benchmark(store, GRAPH, splits, seed=2, budget=6)
    assert len({i.concept for i in out}) == 63
    by_variant = {}
    for inst in out:
        by_variant.setdefault((inst.concept, inst.variant), []).append(inst)
    for (concept, key), insts in sorted(by_variant.items())[::5]:
        v = variant(concept, key)
        for inst in insts[:1]:
            again = extract_ground_truth(v, inst.stay_id, store, GRAPH)
            assert type(again) is type(inst.truth)
            assert again == inst.truth or np.float64(again).tobytes() == np.float64(inst.truth).tobytes()


def test_split_hygiene(store, con, splits):
    out = generate_benchmark(store, GRAPH, splits, seed=5, budget=20, concepts=["vitalsign", "sofa", "bg"])
    by_subject = {}
    for i in out:
        by_subject.setdefault(i.subject_id, set()).add(i.split)
    assert all(len(s) == 1 for s in by_subject.values())


def test_jsonl_round_trip(store, con, splits, tmp_path):
    out = generate_instances(GRAPH["gcs"], store, 30, splits, seed=1, con=con)
    path = write_instances(out, tmp_path / "q.jsonl")
    assert read_instances(path) == out


def test_type_mix_weighting_moves_toward_reference(store, con, splits):
    node = GRAPH["vitalsign"]
    mix = reference_type_mix()
    plain = type_census(generate_instances(node, store, 100, splits, seed=1, con=con))
    weighted = type_census(generate_instances(node, store, 100, splits, seed=1, con=con, type_mix=mix))
    types = {v.question_type for v in instantiate_variants(node, PACK)}
    total = sum(mix[t] for t in types)
    target = {t: 100 * mix[t] / total for t in types}
    err = lambda c: sum(abs(c.get(t, 0) - target[t]) for t in types)
    assert err(weighted) <= err(plain)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 1000), st.integers(1, 12))
def test_quotas_sum_to_budget(budget, n):
    vs = [QuestionVariant("c", f"v{i}", "a", QUESTION_TYPES[i % 8], "t", Extractor(op="max", column="a")) for i in range(n)]
    q = variant_quotas(vs, budget)
    assert sum(q) == budget and max(q) - min(q) <= 1
    w = variant_quotas(vs, budget, reference_type_mix())
    assert sum(w) == budget


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_generation_properties(seed, budget):
    store = _small_store()
    splits = split_subjects(store, 0.3, 4)
    out = generate_instances(GRAPH["vitalsign"], store, budget, splits, seed, con=_small_con())
    covered = set().union(*(truth_table(_small_con(), v) for v in instantiate_variants(GRAPH["vitalsign"], PACK)))
    n_train = round(0.1 * budget)
    avail = {sp: len(covered & set(splits.stays_in(sp))) for sp in ("train", "test")}
    assert len(out) == min(n_train, avail["train"]) + min(budget - n_train, avail["test"])
    assert len({i.stay_id for i in out}) == len(out)
    assert all(i.split == splits.split_of_stay(i.stay_id) for i in out)
    assert out == generate_instances(GRAPH["vitalsign"], store, budget, splits, seed, con=_small_con())


_CACHE = {}


def _small_store():
    if "store" not in _CACHE:
        _CACHE["store"] = generate_cohort(CohortSpec(n_stays=40, seed=8))
    return _CACHE["store"]


def _small_con():
    if "con" not in _CACHE:
        _CACHE["con"] = materialize(_small_store(), GRAPH, ["vitalsign"])
    return _CACHE["con"]
