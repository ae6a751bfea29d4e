"""Compositional question answering with or without a skill library."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from clinskill.agents.backends import BackendError, GenerationBackend, Message
from clinskill.bench.generate import QAInstance
from clinskill.ehr.sql import DEFAULT_TIMEOUT_S
from clinskill.metrics.core import answers_match
from clinskill.skills.library import SkillLibrary
from clinskill.skills.tools import TOOLSETS, ToolContext, run_tool, specs

logger = logging.getLogger(__name__)

QA_BUDGET = 15
QA_CONFIGS = ("zeroshot", "autoform")
_VERDICT = re.compile(r"^\s*VERDICT:\s*(.+?)\s*$", re.MULTILINE)
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")

FINAL_DEMAND = "Turn budget exhausted. Reply now with your final answer on a last line of the form VERDICT: <answer>."


def parse_verdict(text: str) -> str | None:
    found = _VERDICT.findall(text or "")
    return found[-1] if found else None


def verdict_value(verdict: str | None, truth):
    """Numeric truths take the first number in the verdict; categorical ones the lowercase word."""
    if verdict is None:
        return None
    if isinstance(truth, str):
        return verdict.strip().strip(".").strip("'\"").lower()
    m = _NUMBER.search(verdict.replace(",", ""))
    return float(m.group()) if m else None


def qa_system_prompt(config: str) -> str:
    tools = TOOLSETS[config]
    text = (
        "You answer questions about one ICU patient using a clinical database.\n"
        f"Tools: {', '.join(tools)}.\n"
        "Use the tools as needed, then give the answer on a final line of the form VERDICT: <answer>. "
        "Numeric answers are plain numbers in the unit asked for; yes/no questions are answered yes or no."
    )
    if config == "autoform":
        text += ("\nA library of verified functions is available: search it, load what fits and run it with "
                 "call_function before writing queries by hand.")
    return text


def qa_user_prompt(instance: QAInstance) -> str:
    return (f"Patient identifiers: subject_id={instance.subject_id}, hadm_id={instance.hadm_id}, "
            f"stay_id={instance.stay_id}.\nQuestion: {instance.question_text}")


@dataclass
class QAResult:
    instance_id: str
    config: str
    verdict: str | None
    answer: float | str | None
    correct: bool
    prompt_tokens: int
    completion_tokens: int
    turns: int
    flags: tuple[str, ...] = ()
    transcript: list[Message] = field(default_factory=list, repr=False)

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "config": self.config,
            "verdict": self.verdict,
            "answer": self.answer,
            "correct": self.correct,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "tokens": self.tokens,
            "turns": self.turns,
            "flags": list(self.flags),
        }


def run_qa_episode(
    instance: QAInstance,
    store,
    backend: GenerationBackend,
    library: SkillLibrary | None = None,
    config: str = "zeroshot",
    budget: int = QA_BUDGET,
    sql_timeout: float | None = DEFAULT_TIMEOUT_S,
) -> QAResult:
    if config not in QA_CONFIGS:
        raise ValueError(f"config must be one of {QA_CONFIGS}")
    if budget < 1:
        raise ValueError("budget must be positive")
    if config == "autoform" and library is None:
        raise ValueError("the autoform configuration needs a skill library")
    allowed = TOOLSETS[config]
    tools = specs(allowed)
    ctx = ToolContext(store, None, library if config == "autoform" else None, sql_timeout)
    episode = f"qa:{config}:{instance.instance_id}"
    msgs = [Message("system", qa_system_prompt(config)), Message("user", qa_user_prompt(instance))]
    prompt_tok = gen_tok = turns = 0
    flags: list[str] = []
    verdict = None

    for turn in range(budget + 1):
        final_turn = turn == budget
        if final_turn:
            msgs.append(Message("user", FINAL_DEMAND, tag="final_demand"))
        try:
            c = backend.complete(msgs, () if final_turn else tools, episode, turn)
        except BackendError as exc:
            flags.append("episode_error")
            logger.warning("%s: %s", episode, exc)
            break
        turns += 1
        prompt_tok += c.prompt_tokens
        gen_tok += c.completion_tokens
        msgs.append(c.message)
        if c.message.tool_calls and not final_turn:
            for call in c.message.tool_calls:
                text, ok = run_tool(call.name, call.arguments, ctx, allowed)
                msgs.append(Message("tool", text, tool_call_id=call.call_id, name=call.name))
            continue
        verdict = parse_verdict(c.message.content)
        break

    answer = verdict_value(verdict, instance.truth)
    if verdict is None and "episode_error" not in flags:
        flags.append("parse_failure")
    elif verdict is not None and answer is None:
        flags.append("parse_failure")
    correct = answer is not None and answers_match(answer, instance.truth).correct
    return QAResult(instance.instance_id, config, verdict, answer, correct, prompt_tok, gen_tok, turns,
                    tuple(flags), msgs)
