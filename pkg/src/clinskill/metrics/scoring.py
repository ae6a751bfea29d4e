"""Aggregate scores for question answering and surveillance runs."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from clinskill.metrics.core import set_f1, trajectory_accuracy, wilson_interval

logger = logging.getLogger(__name__)

LEVELS = ("L1", "L2", "L3plus")
STEPS = 13
F1_MODES = ("checkpoint", "class")


class ScoringError(ValueError):
    pass


def _rec(x) -> Mapping:
    return x.to_record() if hasattr(x, "to_record") else x


@dataclass(frozen=True)
class LevelScore:
    accuracy: float
    n_concepts: int
    n_items: int
    n_correct: int
    wilson: tuple[float, float]


@dataclass(frozen=True)
class QaScore:
    levels: dict[str, LevelScore]
    overall: float
    delta: float | None
    tokens_per_q: float
    per_concept: dict[str, tuple[str, float, int]] = field(default_factory=dict)
    n_items: int = 0

    def level_accuracy(self, level: str) -> float | None:
        return self.levels[level].accuracy if level in self.levels else None


def score_qa(results: Iterable, instances: Iterable) -> QaScore:
    """Macro accuracy: variant means, then concept means, then level or overall means."""
    index = {i.instance_id: i for i in instances}
    seen: dict[str, Mapping] = {}
    for r in map(_rec, results):
        iid = r["instance_id"]
        if iid not in index:
            raise ScoringError(f"result {iid!r} has no matching instance")
        if iid in seen:
            raise ScoringError(f"duplicate result for {iid!r}")
        seen[iid] = r
    if not seen:
        raise ScoringError("no results to score")

    by_variant: dict[str, dict[str, list[bool]]] = defaultdict(lambda: defaultdict(list))
    level_of: dict[str, str] = {}
    for iid, r in seen.items():
        inst = index[iid]
        by_variant[inst.concept][inst.variant].append(bool(r["correct"]))
        level_of[inst.concept] = inst.level
    per_concept = {}
    for c in sorted(by_variant):
        variant_means = [fmean(v) for _, v in sorted(by_variant[c].items())]
        n = sum(len(v) for v in by_variant[c].values())
        per_concept[c] = (level_of[c], fmean(variant_means), n)

    levels = {}
    for lv in LEVELS:
        cs = [c for c in per_concept if per_concept[c][0] == lv]
        if not cs:
            continue
        items = [ok for c in cs for v in by_variant[c].values() for ok in v]
        k = sum(items)
        levels[lv] = LevelScore(fmean(per_concept[c][1] for c in cs), len(cs), len(items), k,
                                wilson_interval(k, len(items)))
    overall = fmean(a for _, a, _ in per_concept.values())
    delta = None
    if "L1" in levels and "L3plus" in levels:
        delta = levels["L1"].accuracy - levels["L3plus"].accuracy
    tokens = fmean(float(r.get("tokens", 0)) for r in seen.values())
    return QaScore(levels, overall, delta, tokens, per_concept, len(seen))


@dataclass(frozen=True)
class SurveillanceScore:
    action_accuracy: float
    priority_accuracy: float
    suspected_f1: float
    alerts_f1: float
    trajectory_accuracy: float
    n_stays: int
    n_checkpoints: int
    flagged_stays: tuple[int, ...] = ()
    contract_violations: int = 0
    f1_mode: str = "checkpoint"


def _class_f1(pairs: Sequence[tuple[frozenset, frozenset]]) -> float:
    classes = sorted(set().union(*(p | t for p, t in pairs))) if pairs else []
    if not classes:
        return 1.0
    scores = []
    for c in classes:
        tp = sum(c in p and c in t for p, t in pairs)
        fp = sum(c in p and c not in t for p, t in pairs)
        fn = sum(c not in p and c in t for p, t in pairs)
        scores.append(2 * tp / (2 * tp + fp + fn))
    return fmean(scores)


def _decision_fields(d) -> tuple[str, frozenset, frozenset, str]:
    rec = _rec(d)
    return rec["global_action"], frozenset(rec["suspected_conditions"]), frozenset(rec["alerts"]), rec["priority"]


def score_surveillance(results: Mapping[int, Sequence], labels: Iterable, f1_mode: str = "checkpoint") -> SurveillanceScore:
    """``results`` maps stay id to its ordered decisions; ``labels`` are CheckpointLabels."""
    if f1_mode not in F1_MODES:
        raise ValueError(f"f1_mode must be one of {F1_MODES}")
    by_stay: dict[int, list] = defaultdict(list)
    for lab in labels:
        by_stay[lab.stay_id].append(lab)
    orphans = sorted(set(results) - set(by_stay))
    if orphans:
        raise ScoringError(f"decisions for unlabelled stays: {orphans[:5]}")
    if not by_stay:
        raise ScoringError("no labels to score against")

    action = priority = violations = 0
    sus_f1, al_f1 = [], []
    sus_pairs, al_pairs = [], []
    traj_pred, traj_true = {}, {}
    n = 0
    for stay in sorted(by_stay):
        labs = sorted(by_stay[stay], key=lambda x: x.step_index)
        decs = [_decision_fields(d) for d in results.get(stay, ())]
        traj_true[stay] = [x.global_action for x in labs]
        traj_pred[stay] = [d[0] for d in decs]
        for i, lab in enumerate(labs):
            n += 1
            if i >= len(decs):
                sus_f1.append(0.0 if lab.suspected_conditions else 1.0)
                al_f1.append(0.0 if lab.alerts else 1.0)
                sus_pairs.append((frozenset(), lab.suspected_conditions))
                al_pairs.append((frozenset(), lab.alerts))
                continue
            act, sus, al, pri = decs[i]
            action += act == lab.global_action
            priority += pri == lab.priority
            violations += bool(al) and act != "escalate"
            sus_f1.append(set_f1(sus, lab.suspected_conditions)[2])
            al_f1.append(set_f1(al, lab.alerts)[2])
            sus_pairs.append((sus, lab.suspected_conditions))
            al_pairs.append((al, lab.alerts))
    traj, flagged = trajectory_accuracy(traj_pred, traj_true, STEPS)
    if f1_mode == "class":
        s_f1, a_f1 = _class_f1(sus_pairs), _class_f1(al_pairs)
    else:
        s_f1, a_f1 = fmean(sus_f1), fmean(al_f1)
    return SurveillanceScore(action / n, priority / n, s_f1, a_f1, traj, len(by_stay), n,
                             tuple(flagged), violations, f1_mode)
