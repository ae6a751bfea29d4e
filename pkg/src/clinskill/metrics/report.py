"""Writing ``report.md`` and ``scores.jsonl`` with fixed 4-decimal formatting."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Mapping

from clinskill.metrics.scoring import LEVELS, QaScore, SurveillanceScore

logger = logging.getLogger(__name__)


def fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def _table(header: list[str], rows: list[list]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(fmt(c) for c in r) + " |" for r in rows]
    return out


def _level_label(lv: str) -> str:
    return "L3+" if lv == "L3plus" else lv


def qa_section(qa: Mapping[str, QaScore]) -> list[str]:
    lines = ["## Compositional question answering", "", "### Accuracy by difficulty level", ""]
    header = ["Config"] + [_level_label(lv) for lv in LEVELS] + ["Overall", "Δ (L1→L3+)", "Tokens/Q"]
    rows = [[name] + [s.level_accuracy(lv) for lv in LEVELS] + [s.overall, s.delta, s.tokens_per_q]
            for name, s in sorted(qa.items())]
    lines += _table(header, rows)
    for name, s in sorted(qa.items()):
        lines += ["", f"### {name}: per-level detail (95% Wilson interval over items)", ""]
        rows = [[_level_label(lv), s.levels[lv].accuracy, s.levels[lv].n_concepts, s.levels[lv].n_items,
                 s.levels[lv].n_correct, s.levels[lv].wilson[0], s.levels[lv].wilson[1]]
                for lv in LEVELS if lv in s.levels]
        rows.append(["Overall", s.overall, len(s.per_concept), s.n_items,
                     sum(x.n_correct for x in s.levels.values()), None, None])
        lines += _table(["Level", "Accuracy", "Concepts", "Items", "Correct", "Wilson lo", "Wilson hi"], rows)
        lines += ["", f"### {name}: per-concept accuracy", ""]
        rows = [[c, _level_label(lv), acc, n] for c, (lv, acc, n) in sorted(s.per_concept.items())]
        lines += _table(["Concept", "Level", "Accuracy", "Items"], rows)
    return lines


def surveillance_section(sv: Mapping[str, SurveillanceScore]) -> list[str]:
    lines = ["## Longitudinal surveillance", ""]
    header = ["Config", "Action acc", "Priority acc", "Suspected F1", "Alerts F1", "Trajectory acc", "Stays",
              "Checkpoints", "Contract violations"]
    rows = [[name, s.action_accuracy, s.priority_accuracy, s.suspected_f1, s.alerts_f1, s.trajectory_accuracy,
             s.n_stays, s.n_checkpoints, s.contract_violations] for name, s in sorted(sv.items())]
    lines += _table(header, rows)
    return lines


def score_records(qa: Mapping[str, QaScore], sv: Mapping[str, SurveillanceScore]) -> list[dict]:
    recs = []
    for name, s in sorted(qa.items()):
        for lv in LEVELS:
            if lv in s.levels:
                L = s.levels[lv]
                recs.append({"task": "qa", "config": name, "scope": lv, "accuracy": fmt(L.accuracy),
                             "n_items": L.n_items, "wilson_lo": fmt(L.wilson[0]), "wilson_hi": fmt(L.wilson[1])})
        recs.append({"task": "qa", "config": name, "scope": "overall", "accuracy": fmt(s.overall),
                     "delta_l1_l3plus": fmt(s.delta), "tokens_per_q": fmt(s.tokens_per_q), "n_items": s.n_items})
        for c, (lv, acc, n) in sorted(s.per_concept.items()):
            recs.append({"task": "qa", "config": name, "scope": f"concept:{c}", "level": lv,
                         "accuracy": fmt(acc), "n_items": n})
    for name, s in sorted(sv.items()):
        recs.append({"task": "surveillance", "config": name, "scope": "overall",
                     "action_accuracy": fmt(s.action_accuracy), "priority_accuracy": fmt(s.priority_accuracy),
                     "suspected_f1": fmt(s.suspected_f1), "alerts_f1": fmt(s.alerts_f1),
                     "trajectory_accuracy": fmt(s.trajectory_accuracy), "n_stays": s.n_stays,
                     "n_checkpoints": s.n_checkpoints, "contract_violations": s.contract_violations,
                     "f1_mode": s.f1_mode})
    return recs


def emit_report(out_dir: str | Path, qa: Mapping[str, QaScore] | None = None,
                surveillance: Mapping[str, SurveillanceScore] | None = None) -> tuple[Path, Path]:
    """Write both files; sections with no scores are left out entirely."""
    qa, surveillance = dict(qa or {}), dict(surveillance or {})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# Evaluation report", ""]
    if qa:
        lines += qa_section(qa) + [""]
    if surveillance:
        lines += surveillance_section(surveillance) + [""]
    if not qa and not surveillance:
        lines += ["No scores were provided.", ""]
    md, jl = out / "report.md", out / "scores.jsonl"
    md.write_text("\n".join(lines))
    jl.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in score_records(qa, surveillance)))
    return md, jl
