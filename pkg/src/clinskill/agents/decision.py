"""The structured monitoring decision an agent commits to at each checkpoint."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

ACTIONS = ("continue_monitoring", "escalate")
PRIORITIES = ("low", "medium", "high")
KEYS = ("global_action", "suspected_conditions", "alerts", "priority", "rationale")


class DecisionParseError(ValueError):
    pass


@dataclass(frozen=True)
class CheckpointDecision:
    global_action: str
    suspected_conditions: frozenset[str] = frozenset()
    alerts: frozenset[str] = frozenset()
    priority: str = "low"
    rationale: str = ""
    summary: str = field(default="", compare=False)

    def __post_init__(self):
        if self.global_action not in ACTIONS:
            raise DecisionParseError(f"global_action must be one of {ACTIONS}, got {self.global_action!r}")
        if self.priority not in PRIORITIES:
            raise DecisionParseError(f"priority must be one of {PRIORITIES}, got {self.priority!r}")

    @property
    def violates_contract(self) -> bool:
        """Alerts were raised but the action is not escalate."""
        return bool(self.alerts) and self.global_action != "escalate"

    def to_record(self) -> dict:
        return {
            "global_action": self.global_action,
            "suspected_conditions": sorted(self.suspected_conditions),
            "alerts": sorted(self.alerts),
            "priority": self.priority,
            "rationale": self.rationale,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CheckpointDecision":
        return cls(rec["global_action"], frozenset(rec["suspected_conditions"]), frozenset(rec["alerts"]),
                   rec["priority"], rec.get("rationale", ""), rec.get("summary", ""))


DEFAULT_DECISION = CheckpointDecision("continue_monitoring", frozenset(), frozenset(), "low", "no valid decision")


def outermost_braces(text: str) -> str:
    """The first balanced ``{...}`` span, skipping braces inside JSON strings."""
    start = text.find("{")
    if start < 0:
        raise DecisionParseError("no JSON object found in the reply")
    depth, in_str, esc = 0, False, False
    for i in range(start, len(text)):
        c = text[i]
        if in_str:
            if esc:
                esc = False
            elif c == "\\":
                esc = True
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    raise DecisionParseError("unbalanced braces in the reply")


def _labels(payload: dict, key: str) -> frozenset[str]:
    v = payload[key]
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise DecisionParseError(f"{key} must be a list of strings")
    return frozenset(x.strip().lower() for x in v if x.strip())


def parse_decision(text: str) -> CheckpointDecision:
    """Strict parse of the five-key payload; extra keys are ignored."""
    try:
        payload = json.loads(outermost_braces(text))
    except json.JSONDecodeError as exc:
        raise DecisionParseError(f"decision is not valid JSON: {exc.msg}") from None
    if not isinstance(payload, dict):
        raise DecisionParseError("decision must be a JSON object")
    missing = [k for k in KEYS if k not in payload]
    if missing:
        raise DecisionParseError(f"decision is missing keys: {', '.join(missing)}")
    for k in ("global_action", "priority", "rationale"):
        if not isinstance(payload[k], str):
            raise DecisionParseError(f"{k} must be a string")
    summary = payload.get("checkpoint_summary")
    return CheckpointDecision(
        payload["global_action"],
        _labels(payload, "suspected_conditions"),
        _labels(payload, "alerts"),
        payload["priority"],
        payload["rationale"],
        summary if isinstance(summary, str) else "",
    )
