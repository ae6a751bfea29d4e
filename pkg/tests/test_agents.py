from __future__ import annotations

import datetime as dt
import json

import httpx
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from clinskill.agents import (
    BackendError,
    ChatCompletionsBackend,
    DecisionParseError,
    Message,
    ScriptedMockBackend,
    ScriptError,
    ToolSpec,
    parse_decision,
    parse_verdict,
    run_qa_episode,
    run_surveillance_episode,
)
from clinskill.agents.backends import parse_script, whitespace_tokens
from clinskill.agents.qa import verdict_value
from clinskill.bench.generate import QAInstance
from clinskill.ehr.cohort import CohortSpec, generate_cohort
from clinskill.oracle.labels import CHECKPOINT_HOURS
from clinskill.skills import SkillLibrary, SkillRecord, parse_program
from clinskill.skills.tools import TOOLSETS

from helpers import INTIME, LACTATE, make_lab_store

ESCALATE = ('{"global_action": "escalate", "suspected_conditions": ["infection"], "alerts": ["sepsis"], '
            '"priority": "high", "rationale": "infection with organ dysfunction"}')
CONTINUE = ('{"global_action": "continue_monitoring", "suspected_conditions": [], "alerts": [], '
            '"priority": "low", "rationale": "stable", "checkpoint_summary": "Stable at this checkpoint."}')


@pytest.fixture(scope="module")
def lab_store():
    return make_lab_store([[(1, 2.0 + k), (6, 1.0)] for k in range(10)])


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(CohortSpec(n_stays=6, seed=5))


def lab_max(stay):
    """Fixture stay k (1-based) holds lactate 2.0 + (k - 1) at hour 1 and 1.0 at hour 6."""
    return max(2.0 + (stay - 1), 1.0)


def qa_instance(stay=3, truth=None):
    truth = lab_max(stay) if truth is None else truth
    return QAInstance(f"max_lactate:max:{stay}", "max_lactate", "max", "aggregation", 1000 + stay, 100 + stay,
                      stay, "What was the highest lactate during this ICU stay?", truth, "mmol/L", "L1", "test")


# -- backends -----------------------------------------------------------------------

def test_script_parsing_and_matching():
    text = ("### episode=qa:* turn=0\nTOOL query_db {\"sql\": \"SELECT 1\"}\nthinking\n"
            "### episode=qa:* turn=* guard=^\\(1 rows\\)|rows\nVERDICT: 1\n")
    entries = parse_script(text)
    assert [(e.episode, e.turn) for e in entries] == [("qa:*", 0), ("qa:*", None)]
    be = ScriptedMockBackend(entries)
    c = be.complete([Message("user", "hi")], episode="qa:x", turn=0)
    assert c.message.tool_calls[0].name == "query_db" and c.message.tool_calls[0].arguments == {"sql": "SELECT 1"}
    assert c.message.content == "thinking"
    assert c.prompt_tokens == 1 and c.completion_tokens == whitespace_tokens(entries[0].response)
    with pytest.raises(ScriptError):
        be.complete([Message("user", "no match here")], episode="qa:x", turn=1)
    with pytest.raises(ScriptError):
        be.complete([Message("user", "rows")], episode="other", turn=1)


def test_script_rejects_bad_headers():
    with pytest.raises(ScriptError):
        parse_script("text before header\n### episode=a turn=0\nx")
    with pytest.raises(ScriptError):
        parse_script("### turn=0\nx")
    with pytest.raises(ScriptError):
        parse_script("### episode=a turn=first\nx")


def test_http_backend_round_trip(monkeypatch):
    seen = {}

    def handler(request: httpx.Request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "", "tool_calls": [
                {"id": "c1", "type": "function", "function": {"name": "query_db", "arguments": "{\"sql\": \"SELECT 1\"}"}}
            ]}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7},
        })

    monkeypatch.setenv("TEST_KEY", "secret")
    be = ChatCompletionsBackend("http://x/v1", "m", "TEST_KEY", client=httpx.Client(transport=httpx.MockTransport(handler)))
    c = be.complete([Message("user", "hi")], [ToolSpec("query_db", "d", {"sql": "string"})])
    assert c.prompt_tokens == 11 and c.completion_tokens == 7
    assert c.message.tool_calls[0].arguments == {"sql": "SELECT 1"}
    assert seen["auth"] == "Bearer secret" and seen["body"]["model"] == "m"
    assert seen["body"]["tools"][0]["function"]["name"] == "query_db"


def test_http_backend_failure_after_retries(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    monkeypatch.setattr("clinskill.agents.backends.time.sleep", lambda s: None)
    be = ChatCompletionsBackend("http://x", "m", retries=2, client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(BackendError):
        be.complete([Message("user", "hi")])
    assert len(calls) == 3


# -- QA episodes ----------------------------------------------------------------------

def test_toolsets_differ_as_configured():
    assert TOOLSETS["zeroshot"] == ("query_db",)
    assert set(TOOLSETS["autoform"]) - set(TOOLSETS["zeroshot"]) == {
        "search_functions", "get_function_info", "load_function", "call_function"}


def test_two_turn_episode_tokens(lab_store):
    script = ("### episode=qa:zeroshot:* turn=0\n"
              "TOOL query_db {\"sql\": \"SELECT max(valuenum) AS m FROM labevents WHERE stay_id = 3\"}\n"
              "### episode=qa:zeroshot:* turn=1\nThe peak is known.\nVERDICT: 4.0\n")
    be = ScriptedMockBackend.from_text(script)
    r = run_qa_episode(qa_instance(), lab_store, be)
    assert r.correct and r.turns == 2 and r.answer == lab_max(3)
    # oracle: whitespace tokens of each prompt plus each scripted response
    msgs = r.transcript
    p0 = sum(whitespace_tokens(m.content) for m in msgs[:2])
    p1 = sum(whitespace_tokens(m.content) for m in msgs[:4])
    entries = parse_script(script)
    g = sum(whitespace_tokens(e.response) for e in entries)
    assert r.prompt_tokens == p0 + p1 and r.completion_tokens == g
    assert "4.0" not in msgs[1].content  # truth withheld


def test_zeroshot_cannot_use_library_tools(lab_store):
    script = ("### episode=qa:zeroshot:* turn=0\nTOOL search_functions {\"keyword\": \"lactate\"}\n"
              "### episode=qa:zeroshot:* turn=1\nVERDICT: 1\n")
    r = run_qa_episode(qa_instance(), lab_store, ScriptedMockBackend.from_text(script))
    assert r.transcript[3].content.startswith("ERROR: unknown tool 'search_functions'")


def test_autoform_library_path(lab_store, tmp_path):
    lib = SkillLibrary(tmp_path)
    src = ("<skill name=max_lactate params=stay_id:stay>\ndoc: Highest lactate.\n"
           f"sql r = SELECT valuenum FROM labevents WHERE stay_id = :stay_id AND itemid = {LACTATE}\n"
           "agg m = max r.valuenum\nreturn FINAL m\n</skill>")
    p = parse_program(src)
    lib.put(SkillRecord(p.name, p, "max_lactate", 1.0, True))
    script = ("### episode=qa:autoform:* turn=0\nTOOL load_function {\"name\": \"max_lactate\"}\n"
              "TOOL call_function {\"name\": \"max_lactate\", \"args\": {\"stay_id\": 3}}\n"
              "### episode=qa:autoform:* turn=1\nVERDICT: 4\n")
    r = run_qa_episode(qa_instance(), lab_store, ScriptedMockBackend.from_text(script), lib, "autoform")
    assert float(r.transcript[4].content) == lab_max(3) and r.correct


def test_budget_and_final_demand(lab_store):
    script = ("### episode=qa:* turn=* guard=budget exhausted\nI think VERDICT: 3.99 is close.\nVERDICT: 3.99\n"
              "### episode=qa:* turn=*\nTOOL query_db {\"sql\": \"SELECT 1\"}\n")
    for budget in (1, 3, 15):
        r = run_qa_episode(qa_instance(), lab_store, ScriptedMockBackend.from_text(script), budget=budget)
        assert r.turns == budget + 1
        assert [m.tag for m in r.transcript].count("final_demand") == 1
        assert r.verdict == "3.99" and r.correct


def test_unparseable_answer_is_flagged(lab_store):
    r = run_qa_episode(qa_instance(), lab_store,
                       ScriptedMockBackend.from_text("### episode=* turn=*\nIt is about five."))
    assert not r.correct and "parse_failure" in r.flags


def test_verdict_parsing():
    assert parse_verdict("a\nVERDICT: 12.5 mg/dL\n") == "12.5 mg/dL"
    assert parse_verdict("VERDICT: 1\nVERDICT: 2") == "2"
    assert parse_verdict("no verdict") is None
    assert verdict_value("12.5 mg/dL", 12.0) == 12.5
    assert verdict_value("Yes.", "yes") == "yes"
    assert verdict_value("none", 1.0) is None


# -- decision parsing ---------------------------------------------------------------------

def test_parse_decision_examples():
    d = parse_decision(ESCALATE)
    assert d.global_action == "escalate" and d.alerts == {"sepsis"} and d.priority == "high"
    with pytest.raises(DecisionParseError):
        parse_decision(ESCALATE.replace('"high"', '"urgent"'))
    wrapped = f"After review the decision is {ESCALATE} and I am confident {{not json}}."
    assert parse_decision(wrapped) == d
    assert parse_decision(ESCALATE.replace("}", ', "extra": {"k": "}"}}')) == d


@pytest.mark.parametrize("bad", [
    "no payload", "{", '{"global_action": "escalate"}', ESCALATE.replace('["sepsis"]', '"sepsis"'),
    ESCALATE.replace('"escalate"', '"wait"'), "[1, 2]",
])
def test_parse_decision_rejects(bad):
    with pytest.raises(DecisionParseError):
        parse_decision(bad)


# -- surveillance -------------------------------------------------------------------------

def surv_script(body_by_turn: dict) -> str:
    return "".join(f"### episode=surv:* turn={t}\n{b}\n" for t, b in body_by_turn.items())


def test_thirteen_decisions_and_history(cohort):
    sid = cohort.stay_ids[0]
    r = run_surveillance_episode(cohort, sid, ScriptedMockBackend.from_text(surv_script({0: CONTINUE})))
    assert len(r.decisions) == 13 and [c.t_hour for c in r.checkpoints] == list(CHECKPOINT_HOURS)
    for k, entry in enumerate(r.transcript):
        payload = json.loads(entry["request"][1]["content"])
        hist = payload["rolling_history"]
        assert list(hist) == [str(t) for t in CHECKPOINT_HOURS[:k]]
        assert all(v == "Stable at this checkpoint." for v in hist.values())


def test_repeated_call_listed_next_turn(cohort):
    sid = cohort.stay_ids[1]
    call = f'TOOL call_function {{"function_name": "gcs", "arguments": {{"stay_id": {sid}}}}}'
    r = run_surveillance_episode(cohort, sid, ScriptedMockBackend.from_text(surv_script({0: call, 1: call, 2: CONTINUE})))
    first = [e for e in r.transcript if e["episode"] == f"surv:{sid}:t0"]
    payloads = [json.loads(e["request"][1]["content"]) for e in first]
    assert payloads[1]["repeated_calls"] == [] and len(payloads[1]["already_called_tools"]) == 1
    assert payloads[2]["repeated_calls"] == payloads[2]["already_called_tools"][:1]
    assert len(payloads[2]["tool_outputs_in_order"]) == 2


def test_contract_violation_flag(cohort):
    bad = ESCALATE.replace('"escalate"', '"continue_monitoring"')
    r = run_surveillance_episode(cohort, cohort.stay_ids[0], ScriptedMockBackend.from_text(surv_script({0: bad})))
    assert all("contract_violation" in c.flags for c in r.checkpoints)
    assert r.decisions[0].alerts == {"sepsis"}


def test_malformed_decision_falls_back_to_default(cohort):
    script = "### episode=surv:* turn=*\n{\"global_action\": \"maybe\"}\n"
    r = run_surveillance_episode(cohort, cohort.stay_ids[0], ScriptedMockBackend.from_text(script), budget=2)
    c = r.checkpoints[0]
    assert c.decision.global_action == "continue_monitoring" and c.decision.priority == "low"
    assert "contract_violation" in c.flags and "parse_error" in c.flags
    assert c.turns == 3
    steps = [e for e in r.transcript if e["episode"].endswith(":t0")]
    assert steps[1]["request"][-1]["content"].startswith("DECISION ERROR")


def test_other_stay_is_not_visible(cohort):
    sid, other = cohort.stay_ids[0], cohort.stay_ids[1]
    call = f'TOOL call_function {{"function_name": "gcs", "arguments": {{"stay_id": {other}}}}}'
    r = run_surveillance_episode(cohort, sid, ScriptedMockBackend.from_text(surv_script({0: call, 1: CONTINUE})))
    first = [e for e in r.transcript if e["episode"].endswith(":t0")]
    out = json.loads(first[1]["request"][1]["content"])["tool_outputs_in_order"][0]
    assert out.startswith("ERROR") and "not visible" in out
    assert "visibility_violation" in r.checkpoints[0].flags


def test_template_summaries(cohort):
    r = run_surveillance_episode(cohort, cohort.stay_ids[0], ScriptedMockBackend.from_text(surv_script({0: ESCALATE})),
                                 summaries="template")
    assert r.summaries[0].startswith("t=0h: escalate, priority high")
    r2 = run_surveillance_episode(cohort, cohort.stay_ids[0], ScriptedMockBackend.from_text(surv_script({0: ESCALATE})))
    assert "template_summary" in r2.checkpoints[0].flags


def test_surveillance_is_deterministic(cohort):
    sid = cohort.stay_ids[2]
    script = surv_script({0: f'TOOL call_function {{"function_name": "compute_sofa_score", "arguments": {{"stay_id": {sid}}}}}',
                          1: CONTINUE})
    a = run_surveillance_episode(cohort, sid, ScriptedMockBackend.from_text(script))
    b = run_surveillance_episode(cohort, sid, ScriptedMockBackend.from_text(script))
    assert json.dumps(a.transcript, sort_keys=True) == json.dumps(b.transcript, sort_keys=True)
    assert a.decisions == b.decisions and a.tokens == b.tokens


TABLE_TIMES = {"chartevents": "charttime", "labevents": "charttime", "infusions": "starttime",
               "procedures": "starttime"}


@settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(k=st.integers(0, 5), table=st.sampled_from(sorted(TABLE_TIMES)), budget=st.integers(1, 3))
def test_tool_rows_never_pass_the_horizon(cohort, k, table, budget):
    sid = cohort.stay_ids[k]
    col = TABLE_TIMES[table]
    script = (f'### episode=surv:* turn=*\nTOOL run_sql {{"sql": "SELECT {col} FROM {table} ORDER BY {col}"}}\n')
    r = run_surveillance_episode(cohort, sid, ScriptedMockBackend.from_text(script), budget=budget)
    intime = cohort.stay(sid).intime
    for entry in r.transcript:
        payload = json.loads(entry["request"][1]["content"])
        horizon = intime + dt.timedelta(hours=payload["step_input"]["t_hour"])
        for out in payload["tool_outputs_in_order"]:
            for line in out.splitlines()[1:]:
                if line.startswith(("(", "...")):
                    continue
                assert dt.datetime.fromisoformat(line.strip()) <= horizon
    assert all(c.turns <= budget + 1 for c in r.checkpoints)
