"""Checkpoint ground truth for the longitudinal surveillance task."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from clinskill.ehr.store import EhrStore, StayRecord
from clinskill.ehr.view import time_scoped_view
from clinskill.oracle.registry import Registry, load_registry
from clinskill.oracle.semantics import EMPTY_STATE, FindingState, evaluate_finding

logger = logging.getLogger(__name__)

CHECKPOINT_HOURS = tuple(range(0, 49, 4))
ACTIONS = ("continue_monitoring", "escalate")
PRIORITIES = ("low", "medium", "high")
HIGH_PRIORITY_FAMILIES = frozenset({"sepsis", "hemodynamic", "neurologic"})


@dataclass(frozen=True)
class CheckpointLabel:
    stay_id: int
    step_index: int
    t_hour: int
    active_findings: frozenset[str]
    suspected_conditions: frozenset[str]
    alerts: frozenset[str]
    global_action: str
    priority: str
    tiers: dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    def to_record(self) -> dict:
        return {
            "stay_id": self.stay_id,
            "step_index": self.step_index,
            "t_hour": self.t_hour,
            "active_findings": sorted(self.active_findings),
            "suspected_conditions": sorted(self.suspected_conditions),
            "alerts": sorted(self.alerts),
            "global_action": self.global_action,
            "priority": self.priority,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CheckpointLabel":
        return cls(
            int(rec["stay_id"]),
            int(rec["step_index"]),
            int(rec["t_hour"]),
            frozenset(rec["active_findings"]),
            frozenset(rec["suspected_conditions"]),
            frozenset(rec["alerts"]),
            rec["global_action"],
            rec["priority"],
        )


def derive_priority(alerts: Iterable[str], suspected: Iterable[str], registry: Registry) -> str:
    alerts = list(alerts)
    if len(alerts) >= 2 or any(registry.family_of(a) in HIGH_PRIORITY_FAMILIES for a in alerts):
        return "high"
    if alerts or list(suspected):
        return "medium"
    return "low"


def build_checkpoint_label(
    store: EhrStore,
    stay: StayRecord | int,
    t_hour: int,
    carry: dict[str, FindingState] | None = None,
    registry: Registry | None = None,
) -> tuple[CheckpointLabel, dict[str, FindingState]]:
    """Label one checkpoint; ``carry`` holds each finding's state from the previous one."""
    if t_hour not in CHECKPOINT_HOURS:
        raise ValueError(f"t_hour must be one of {CHECKPOINT_HOURS}, got {t_hour!r}")
    registry = registry or default_registry()
    stay_id = stay.stay_id if isinstance(stay, StayRecord) else int(stay)
    view = time_scoped_view(store, stay_id, t_hour)
    carry = carry or {}
    nxt: dict[str, FindingState] = {}
    resolved: dict[str, bool] = {}
    tiers: dict[str, str] = {}
    for defn in registry:
        active, tier, state = evaluate_finding(defn, view, carry.get(defn.finding_id, EMPTY_STATE), resolved)
        resolved[defn.finding_id] = active
        nxt[defn.finding_id] = state
        if active:
            tiers[defn.finding_id] = tier
    active_ids = frozenset(tiers)
    alerts = frozenset(f for f, t in tiers.items() if t == "alert")
    suspected = frozenset(registry.family_of(f) for f, t in tiers.items() if t == "suspected")
    label = CheckpointLabel(
        stay_id=stay_id,
        step_index=t_hour // 4,
        t_hour=t_hour,
        active_findings=active_ids,
        suspected_conditions=suspected,
        alerts=alerts,
        global_action="escalate" if alerts else "continue_monitoring",
        priority=derive_priority(alerts, suspected, registry),
        tiers=tiers,
    )
    return label, nxt


def build_trajectory_labels(
    store: EhrStore, stay: StayRecord | int, registry: Registry | None = None
) -> list[CheckpointLabel]:
    carry: dict[str, FindingState] = {}
    labels = []
    for t in CHECKPOINT_HOURS:
        label, carry = build_checkpoint_label(store, stay, t, carry, registry)
        labels.append(label)
    return labels


def build_trajectory_states(
    store: EhrStore, stay: StayRecord | int, registry: Registry | None = None
) -> list[tuple[CheckpointLabel, dict[str, FindingState]]]:
    """Labels together with the carry state produced at each checkpoint."""
    carry: dict[str, FindingState] = {}
    out = []
    for t in CHECKPOINT_HOURS:
        label, carry = build_checkpoint_label(store, stay, t, carry, registry)
        out.append((label, carry))
    return out


def label_distribution(labels: Iterable[CheckpointLabel]) -> dict[str, dict[str, int]]:
    """Counts of actions, priorities and active families (via suspected or alert tiers)."""
    registry = default_registry()
    action: Counter = Counter()
    priority: Counter = Counter()
    family: Counter = Counter()
    for lab in labels:
        action[lab.global_action] += 1
        priority[lab.priority] += 1
        for fam in {registry.family_of(f) for f in lab.active_findings}:
            family[fam] += 1
    return {"action": dict(action), "priority": dict(priority), "family": dict(family)}


def write_labels(labels: Iterable[CheckpointLabel], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for lab in labels:
            fh.write(json.dumps(lab.to_record(), sort_keys=True) + "\n")
    return path


def read_labels(path: str | Path) -> list[CheckpointLabel]:
    with Path(path).open() as fh:
        return [CheckpointLabel.from_record(json.loads(line)) for line in fh if line.strip()]


_DEFAULT: Registry | None = None


def default_registry() -> Registry:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_registry()
    return _DEFAULT
