"""Longitudinal surveillance: one structured decision every 4 hours through hour 48."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from clinskill.agents.backends import BackendError, GenerationBackend, Message, ToolSpec
from clinskill.agents.decision import DEFAULT_DECISION, CheckpointDecision, DecisionParseError, parse_decision
from clinskill.agents.patient_state import PATIENT_STATE_FUNCTIONS
from clinskill.ehr.sql import DEFAULT_TIMEOUT_S, SqlError, execute_sql
from clinskill.ehr.view import TimeScopedView, time_scoped_view
from clinskill.oracle.labels import CHECKPOINT_HOURS
from clinskill.skills.executor import SkillRuntimeError, execute_skill, render_value
from clinskill.skills.library import LibraryError, SkillLibrary
from clinskill.skills.tools import MAX_ROWS, describe_call

logger = logging.getLogger(__name__)

SURVEILLANCE_BUDGET = 10
SUMMARY_MODES = ("model", "template")
TASK_NAME = "general_icu_surveillance"
TOOL_SPECS = (
    ToolSpec("call_function", "Run a patient-state function for the current stay.",
             {"function_name": "string", "arguments": "object"}),
    ToolSpec("run_sql", "Read-only SQL over this stay's data visible at the current checkpoint.", {"sql": "string"}),
)


class VisibilityError(PermissionError):
    pass


def surveillance_system_prompt(functions) -> str:
    return (
        "You monitor one ICU stay at checkpoints every 4 hours from admission to hour 48. At each checkpoint, "
        "either make exactly one tool call or reply with the final decision as one JSON object:\n"
        '{"global_action": "continue_monitoring|escalate", "suspected_conditions": [...], "alerts": [...], '
        '"priority": "low|medium|high", "rationale": "...", "checkpoint_summary": "<one sentence>"}\n'
        "Escalate whenever any alert is raised. Data is visible only up to the current checkpoint.\n"
        f"Patient-state functions (call_function with arguments {{\"stay_id\": N}}): {', '.join(functions)}.\n"
        "run_sql is the fallback for focused queries."
    )


@dataclass
class CheckpointRecord:
    t_hour: int
    decision: CheckpointDecision
    summary: str
    turns: int
    tool_calls: list[str]
    flags: tuple[str, ...] = ()

    def to_record(self, stay_id: int) -> dict:
        return {"stay_id": stay_id, "step_index": self.t_hour // 4, "t_hour": self.t_hour,
                **self.decision.to_record(), "summary": self.summary, "turns": self.turns,
                "tool_calls": self.tool_calls, "flags": list(self.flags)}


@dataclass
class SurveillanceResult:
    stay_id: int
    checkpoints: list[CheckpointRecord]
    prompt_tokens: int
    completion_tokens: int
    transcript: list[dict] = field(default_factory=list, repr=False)

    @property
    def decisions(self) -> list[CheckpointDecision]:
        return [c.decision for c in self.checkpoints]

    @property
    def summaries(self) -> dict[int, str]:
        return {c.t_hour: c.summary for c in self.checkpoints}

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class _Tools:
    def __init__(self, view: TimeScopedView, library: SkillLibrary | None, timeout):
        self.view = view
        self.library = library
        self.timeout = timeout
        self.functions = dict(PATIENT_STATE_FUNCTIONS)
        self.skills = library.names() if library is not None else []
        self.violations: list[str] = []

    @property
    def names(self) -> list[str]:
        return list(self.functions) + [s for s in self.skills if s not in self.functions]

    def call(self, name: str, args: Mapping[str, Any]) -> str:
        try:
            if name == "run_sql":
                sql = args.get("sql")
                if not isinstance(sql, str):
                    return "ERROR: run_sql needs a string 'sql' argument"
                return execute_sql(self.view, sql, timeout_s=self.timeout).to_text(max_rows=MAX_ROWS)
            if name != "call_function":
                return f"ERROR: unknown tool {name!r}; use call_function or run_sql"
            return self._function(args)
        except VisibilityError as exc:
            self.violations.append(str(exc))
            logger.warning("visibility violation: %s", exc)
            return f"ERROR: {exc}"
        except (SqlError, SkillRuntimeError, LibraryError) as exc:
            return f"ERROR: {type(exc).__name__}: {exc}"

    def _function(self, args: Mapping[str, Any]) -> str:
        fname = args.get("function_name")
        fargs = args.get("arguments") or {}
        if not isinstance(fargs, dict):
            return "ERROR: 'arguments' must be an object"
        stay = fargs.get("stay_id", self.view.stay_id)
        try:
            stay = int(stay)
        except (TypeError, ValueError):
            return "ERROR: stay_id must be an integer"
        if stay != self.view.stay_id:
            raise VisibilityError(f"stay {stay} is not visible; only stay {self.view.stay_id} is under surveillance")
        if fname in self.functions:
            return json.dumps(self.functions[fname](self.view), sort_keys=True)
        if fname in self.skills:
            prog = self.library.get(fname).program
            bound = {p: self._bind(kind, p, fargs) for p, kind in prog.params}
            out = execute_skill(prog, bound, self.view, self.library.resolver(), self.timeout)
            return render_value(out)
        return f"ERROR: unknown function {fname!r}; available: {', '.join(self.names)}"

    def _bind(self, kind: str, name: str, fargs) -> Any:
        stay = self.view.stay
        auto = {"stay": stay.stay_id, "hadm": stay.hadm_id, "subject": stay.subject_id}
        if kind in auto:
            return auto[kind]
        if name not in fargs:
            raise SkillRuntimeError(name, None, f"argument {name!r} is required")
        return fargs[name]


def template_summary(t_hour: int, d: CheckpointDecision) -> str:
    sus = ", ".join(sorted(d.suspected_conditions)) or "none"
    al = ", ".join(sorted(d.alerts)) or "none"
    return f"t={t_hour}h: {d.global_action}, priority {d.priority}; suspected {sus}; alerts {al}."


def build_payload(stay_id: int, t_hour: int, tools: list[str], called: list[str], outputs: list[str],
                  repeated: list[str], history: Mapping[int, str], trajectory_id: str) -> dict:
    return {
        "step_input": {"trajectory_id": trajectory_id, "stay_id": stay_id, "step_index": t_hour // 4,
                       "t_hour": t_hour, "task_name": TASK_NAME},
        "tool_backend": "duckdb",
        "available_tools": tools,
        "already_called_tools": list(called),
        "tool_outputs_in_order": list(outputs),
        "repeated_calls": list(repeated),
        "rolling_history": {str(t): history[t] for t in sorted(history) if t < t_hour},
    }


def run_surveillance_episode(
    store,
    stay_id: int,
    backend: GenerationBackend,
    library: SkillLibrary | None = None,
    budget: int = SURVEILLANCE_BUDGET,
    summaries: str = "model",
    sql_timeout: float | None = DEFAULT_TIMEOUT_S,
) -> SurveillanceResult:
    if budget < 1:
        raise ValueError("budget must be positive")
    if summaries not in SUMMARY_MODES:
        raise ValueError(f"summaries must be one of {SUMMARY_MODES}")
    store.stay(stay_id)  # unknown stays fail here
    episode = f"surv:{stay_id}"
    history: dict[int, str] = {}
    checkpoints: list[CheckpointRecord] = []
    transcript: list[dict] = []
    p_tok = g_tok = 0

    for t in CHECKPOINT_HOURS:
        view = time_scoped_view(store, stay_id, t)
        tools = _Tools(view, library, sql_timeout)
        system = Message("system", surveillance_system_prompt(tools.names))
        called: list[str] = []
        outputs: list[str] = []
        repeated: list[str] = []
        decision, flags, error_turn = None, [], None
        turns = 0
        for turn in range(budget + 1):
            final_turn = turn == budget
            payload = build_payload(stay_id, t, ["call_function", "run_sql"], called, outputs, repeated, history,
                                    f"{stay_id}")
            msgs = [system, Message("user", json.dumps(payload))]  # insertion order keeps history chronological
            if error_turn is not None:
                msgs += [error_turn[0], Message("user", f"DECISION ERROR: {error_turn[1]}")]
            if final_turn:
                msgs.append(Message("user", "Turn budget exhausted. Reply now with the final decision JSON only.",
                                    tag="final_demand"))
            step_episode = f"{episode}:t{t}"
            try:
                c = backend.complete(msgs, () if final_turn else TOOL_SPECS, step_episode, turn)
            except BackendError as exc:
                flags.append("episode_error")
                logger.warning("%s: %s", step_episode, exc)
                break
            turns += 1
            p_tok += c.prompt_tokens
            g_tok += c.completion_tokens
            transcript.append({"episode": step_episode, "turn": turn, "request": [m.to_record() for m in msgs],
                               "response": c.message.to_record()})
            if c.message.tool_calls and not final_turn:
                call = c.message.tool_calls[0]
                key = describe_call(call.name, call.arguments)
                if key in called and key not in repeated:
                    repeated.append(key)
                out = tools.call(call.name, call.arguments)
                called.append(key)
                outputs.append(out)
                continue
            try:
                decision = parse_decision(c.message.content)
                break
            except DecisionParseError as exc:
                error_turn = (c.message, str(exc))
                flags.append("parse_error")
        if decision is None:
            decision = DEFAULT_DECISION
            flags.append("contract_violation")
        elif decision.violates_contract:
            flags.append("contract_violation")
        if tools.violations:
            flags.append("visibility_violation")
        if summaries == "model" and decision.summary:
            summary = decision.summary.strip()
        else:
            summary = template_summary(t, decision)
            if summaries == "model":
                flags.append("template_summary")
        history[t] = summary
        checkpoints.append(CheckpointRecord(t, decision, summary, turns, called, tuple(dict.fromkeys(flags))))

    return SurveillanceResult(stay_id, checkpoints, p_tok, g_tok, transcript)
