from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinskill.guidelines import (
    PREVIEW_CHARS,
    SECTION_TITLES,
    GuidelineError,
    GuidelineStore,
    parse_guideline,
    tokenize,
)

STORE = GuidelineStore.load()
FAMILY_DOCS = {
    "infection": "suspicion_of_infection",
    "sepsis": "sepsis3",
    "renal": "kdigo_aki",
    "respiratory": "respiratory_support",
    "hemodynamic": "vasoactive_shock",
    "neurologic": "neurologic_gcs",
    "metabolic": "lactate_acidemia",
    "coagulation": "coagulopathy",
}


def test_corpus_shape():
    assert len(STORE) >= 10
    assert set(FAMILY_DOCS.values()) | {"sofa", "kdigo_aki"} <= set(STORE.names())
    for name in STORE.names():
        doc = STORE.doc(name)
        assert len(doc.sections) >= 2
        assert set(doc.sections) <= set(SECTION_TITLES)


def test_long_clinical_query_finds_first_day_sofa():
    assert STORE.search("CNS SOFA score first 24 hours")[0] == "first_day_sofa"


def test_empty_query_lists_alphabetically():
    assert STORE.search("") == sorted(STORE.names())
    assert STORE.search("   the of ") == sorted(STORE.names())


def test_disjoint_vocabulary_gives_nothing():
    vocab = set()
    for name in STORE.names():
        doc = STORE.doc(name)
        vocab |= set(tokenize(" ".join([name.replace("_", " "), doc.title, *doc.keywords, doc.text])))
    query = "zyxwv qqqq plover"
    assert not set(tokenize(query)) & vocab
    assert STORE.search(query) == []


def test_menu_and_preview():
    p = STORE.get_guideline("first_day_sofa")
    assert {"Scoring System", "Time Windows"} <= set(p.menu)
    assert len(p.preview) == PREVIEW_CHARS
    assert STORE.doc("first_day_sofa").body.startswith(p.preview)


def test_short_doc_preview_is_whole_body(tmp_path):
    (tmp_path / "tiny.md").write_text("# Tiny\n\n## Definition\nShort.\n\n## Time Windows\nNone.\n")
    store = GuidelineStore.load(tmp_path)
    p = store.get_guideline("tiny")
    assert p.preview == "## Definition\nShort.\n\n## Time Windows\nNone."
    assert "Time Windows" in p.render()


def test_unknown_guideline_suggests():
    with pytest.raises(GuidelineError) as exc:
        STORE.get_guideline("xyz")
    assert exc.value.options
    assert all(o in STORE for o in exc.value.options)
    with pytest.raises(GuidelineError) as exc:
        STORE.get_guideline("sofa_first")
    assert "first_day_sofa" in exc.value.options


def test_scoring_table_section():
    text = STORE.get_guideline_section("first_day_sofa", "Scoring System")
    rows = {}
    for line in text.splitlines():
        cells = [c.strip() for c in line.strip("|").split("|")]
        if len(cells) == 2 and cells[1].isdigit():
            rows[cells[0]] = int(cells[1])
    assert rows == {"15": 0, "13-14": 1, "10-12": 2, "6-9": 3, "<6": 4}


def test_time_window_rule():
    text = STORE.get_guideline_section("first_day_sofa", "Time Windows")
    assert "lowest GCS" in text and "worst-value selection" in text


def test_missing_section_lists_menu():
    with pytest.raises(GuidelineError) as exc:
        STORE.get_guideline_section("sepsis3", "Scoring System")
    assert exc.value.options == STORE.doc("sepsis3").menu
    assert "Definition" in str(exc.value)


def test_section_round_trip(tmp_path):
    body = "Line one  \n\n  indented | table |\nlast line"
    (tmp_path / "doc.md").write_text(f"# Doc\nKeywords: a, b\n\n## Definition\n{body}\n\n## Operational Notes\nx\n")
    store = GuidelineStore.load(tmp_path)
    assert store.get_guideline_section("doc", "Definition") == body
    assert store.doc("doc").keywords == ("a", "b")


def test_bad_documents_rejected():
    with pytest.raises(ValueError):
        parse_guideline("x", "no headers at all")
    with pytest.raises(ValueError):
        parse_guideline("x", "## Definition\nonly one\n")
    with pytest.raises(ValueError):
        parse_guideline("x", "## Definition\na\n## Background\nb\n")


def test_aki_text_names_creatinine_and_urine_output():
    text = STORE.spec_text("kdigo_aki")
    assert "serum creatinine" in text and "urine output" in text
    assert STORE.spec_text("nope") is None


def test_custom_scorer_slot():
    store = GuidelineStore(
        [STORE.doc(n) for n in STORE.names()], scorer=lambda q, d: float(d.name == "crrt")
    )
    assert store.search("anything") == ["crrt"]


words = st.sampled_from(sorted({t for n in STORE.names() for t in tokenize(STORE.doc(n).text)}) + ["zzz"])


@settings(max_examples=80, deadline=None)
@given(st.lists(words, max_size=8))
def test_retrieval_is_deterministic(query_words):
    q = " ".join(query_words)
    first = STORE.search(q)
    assert first == GuidelineStore.load().search(q)
    scores = [STORE.score(q, n) for n in first] if tokenize(q) else []
    assert all(a > b or (a == b and x < y) for (a, x), (b, y) in zip(zip(scores, first), zip(scores[1:], first[1:])))
