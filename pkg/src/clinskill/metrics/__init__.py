from clinskill.metrics.core import (
    Match,
    answers_match,
    bootstrap_ci,
    numeric_match,
    numeric_match_detail,
    set_f1,
    trajectory_accuracy,
    wilson_interval,
)
from clinskill.metrics.report import emit_report
from clinskill.metrics.scoring import QaScore, ScoringError, SurveillanceScore, score_qa, score_surveillance

__all__ = [
    "Match",
    "QaScore",
    "ScoringError",
    "SurveillanceScore",
    "answers_match",
    "bootstrap_ci",
    "emit_report",
    "numeric_match",
    "numeric_match_detail",
    "score_qa",
    "score_surveillance",
    "set_f1",
    "trajectory_accuracy",
    "wilson_interval",
]
