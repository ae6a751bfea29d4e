"""Answer matching, set agreement and confidence intervals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

REL_TOL = 0.01
ABS_FLOOR = 1e-9
Z95 = 1.96


@dataclass(frozen=True)
class Match:
    correct: bool
    flag: str | None = None


def numeric_match_detail(pred: float, truth: float) -> Match:
    """|pred - truth| <= max(1% of |truth|, 1e-9); non-finite input never matches."""
    try:
        p, t = float(pred), float(truth)
    except (TypeError, ValueError):
        return Match(False, "non-numeric")
    if not (math.isfinite(p) and math.isfinite(t)):
        return Match(False, "non-finite")
    return Match(abs(p - t) <= max(REL_TOL * abs(t), ABS_FLOOR))


def numeric_match(pred: float, truth: float) -> bool:
    m = numeric_match_detail(pred, truth)
    if m.flag:
        logger.debug("numeric_match(%r, %r): %s", pred, truth, m.flag)
    return m.correct


def answers_match(pred, truth) -> Match:
    """Numeric truth uses the tolerance band; categorical truth needs equal tokens."""
    if pred is None:
        return Match(False, "missing")
    if isinstance(truth, str):
        return Match(str(pred).strip().lower() == truth.strip().lower())
    if isinstance(pred, bool) or isinstance(pred, str):
        try:
            pred = float(pred)
        except ValueError:
            return Match(False, "non-numeric")
    return numeric_match_detail(pred, truth)


def set_f1(pred: Iterable[str], truth: Iterable[str]) -> tuple[float, float, float]:
    """(precision, recall, f1); two empty sets agree perfectly."""
    p, t = set(pred), set(truth)
    if not p and not t:
        return 1.0, 1.0, 1.0
    tp = len(p & t)
    precision = tp / len(p) if p else 0.0
    recall = tp / len(t) if t else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def trajectory_accuracy(
    decisions: dict[int, Sequence[str]], labels: dict[int, Sequence[str]], steps: int = 13
) -> tuple[float, list[int]]:
    """Share of stays whose action is right at every checkpoint.

    ``decisions`` and ``labels`` map stay id to the ordered global actions.
    Returns the accuracy and the stays flagged for having too few decisions.
    """
    if not labels:
        raise ValueError("no labelled stays")
    flagged, ok = [], 0
    for stay, truth in labels.items():
        got = list(decisions.get(stay, ()))
        if len(got) < steps:
            flagged.append(stay)
            continue
        ok += all(a == b for a, b in zip(got[:steps], truth[:steps]))
    return ok / len(labels), flagged


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n < 1:
        raise ValueError("wilson_interval needs n >= 1")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    p = k / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def bootstrap_ci(
    samples: Sequence[float], resamples: int = 2000, seed: int = 0, level: float = 0.95
) -> tuple[float, float]:
    """Percentile interval of resampled means."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("bootstrap_ci needs at least one sample")
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    chunk = max(1, 2_000_000 // x.size)
    for start in range(0, resamples, chunk):
        stop = min(resamples, start + chunk)
        idx = rng.integers(0, x.size, size=(stop - start, x.size))
        means[start:stop] = x[idx].mean(axis=1)
    tail = (1 - level) / 2 * 100
    lo, hi = np.percentile(means, [tail, 100 - tail])
    return float(lo), float(hi)
