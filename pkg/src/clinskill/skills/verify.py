"""Verifying candidate skills on labelled train-split questions."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Iterable

from clinskill.bench.generate import QAInstance
from clinskill.ehr.sql import DEFAULT_TIMEOUT_S, ResultTable
from clinskill.metrics.core import answers_match
from clinskill.skills.executor import Missing, Resolver, SkillRuntimeError, execute_skill, render_value
from clinskill.skills.program import SkillProgram

logger = logging.getLogger(__name__)

FEEDBACK_CAP = 10
OUTCOMES = ("correct", "incorrect", "error")


@dataclass(frozen=True)
class VerificationDataset:
    items: tuple[QAInstance, ...]

    def __post_init__(self):
        if not self.items:
            raise ValueError("verification dataset is empty")
        bad = [i.instance_id for i in self.items if i.split != "train"]
        if bad:
            raise ValueError(f"verification items must come from the train split: {bad[:3]}")

    @classmethod
    def from_instances(cls, instances: Iterable[QAInstance], concept: str | None = None) -> "VerificationDataset":
        items = [i for i in instances if i.split == "train" and (concept is None or i.concept == concept)]
        return cls(tuple(sorted(items, key=lambda i: i.instance_id)))

    @property
    def dataset_id(self) -> str:
        payload = json.dumps([[i.instance_id, i.truth] for i in self.items], sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ItemOutcome:
    instance_id: str
    question: str
    status: str
    predicted: str
    truth: str
    trace: str = ""


@dataclass(frozen=True)
class VerificationReport:
    accuracy: float
    outcomes: tuple[ItemOutcome, ...]

    @property
    def n_correct(self) -> int:
        return sum(o.status == "correct" for o in self.outcomes)

    def failures(self) -> list[ItemOutcome]:
        return sorted((o for o in self.outcomes if o.status != "correct"), key=lambda o: o.instance_id)

    def counts(self) -> dict[str, int]:
        return {s: sum(o.status == s for o in self.outcomes) for s in OUTCOMES}


def bind_args(program: SkillProgram, instance: QAInstance) -> dict:
    """Fill parameters from the question's identifiers by semantic type."""
    source = {
        "stay": instance.stay_id,
        "subject": instance.subject_id,
        "hadm": instance.hadm_id,
        "variant": instance.variant,
    }
    args = {}
    for name, kind in program.params:
        if kind not in source:
            raise SkillRuntimeError(program.name, None, f"parameter {name} of type {kind} cannot be bound from a question")
        args[name] = source[kind]
    return args


def _as_answer(value):
    if isinstance(value, ResultTable) and len(value.columns) == 1 and len(value.rows) == 1:
        value = value.rows[0][0]
    if isinstance(value, ResultTable):
        return None, "returned a table, expected a single value"
    if isinstance(value, Missing):
        return None, str(value)
    if isinstance(value, dt.datetime):
        return None, "returned a timestamp, expected a number or yes/no"
    return value, ""


def verify_skill(
    candidate: SkillProgram,
    dataset: VerificationDataset,
    store,
    resolve: Resolver | None = None,
    timeout_s: float | None = DEFAULT_TIMEOUT_S,
) -> VerificationReport:
    outcomes = []
    for item in dataset.items:
        truth_txt = render_value(item.truth)
        try:
            raw = execute_skill(candidate, bind_args(candidate, item), store, resolve, timeout_s)
        except SkillRuntimeError as exc:
            outcomes.append(ItemOutcome(item.instance_id, item.question_text, "error", "", truth_txt, exc.trace))
            continue
        value, why = _as_answer(raw)
        shown = render_value(raw) if not isinstance(raw, ResultTable) else why
        if value is None:
            outcomes.append(ItemOutcome(item.instance_id, item.question_text, "incorrect", shown, truth_txt, why))
            continue
        m = answers_match(value, item.truth)
        status = "correct" if m.correct else "incorrect"
        outcomes.append(ItemOutcome(item.instance_id, item.question_text, status, shown, truth_txt, m.flag or ""))
    correct = sum(o.status == "correct" for o in outcomes)
    return VerificationReport(correct / len(outcomes), tuple(outcomes))


def build_feedback(report: VerificationReport, theta: float, cap: int = FEEDBACK_CAP) -> str:
    """Accuracy against the threshold plus the first failing items by id."""
    c = report.counts()
    fails = report.failures()
    lines = [
        f"VERIFICATION: accuracy {report.accuracy:.4f} is below the threshold {theta:.4f}.",
        f"{c['correct']} correct, {c['incorrect']} incorrect, {c['error']} errors out of {len(report.outcomes)}.",
        f"Showing {min(cap, len(fails))} of {len(fails)} failing items:",
    ]
    for o in fails[:cap]:
        lines.append(f"- [{o.instance_id}] {o.question}")
        lines.append(f"  predicted: {o.predicted or '(none)'} | truth: {o.truth}")
        if o.trace:
            lines.append(f"  trace: {o.trace}")
    lines.append("Revise the skill and submit a new block returning FINAL.")
    return "\n".join(lines)
