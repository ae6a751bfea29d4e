"""Sampling question instances per concept with subject-level splits."""

from __future__ import annotations

import json
import logging
import zlib
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping

import duckdb
import numpy as np

from clinskill.bench.derive import materialize
from clinskill.bench.extract import truth_table
from clinskill.bench.variants import (
    REFERENCE_TYPE_MIX,
    QuestionVariant,
    TemplatePack,
    instantiate_variants,
    load_template_pack,
)
from clinskill.ehr.splits import SplitAssignment
from clinskill.ehr.store import EhrStore
from clinskill.graph.dag import ConceptGraph, ConceptNode

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 1000
TRAIN_SHARE = 0.1


@dataclass(frozen=True)
class QAInstance:
    instance_id: str
    concept: str
    variant: str
    question_type: str
    subject_id: int
    hadm_id: int
    stay_id: int
    question_text: str
    truth: float | str
    unit: str
    level: str
    split: str

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: Mapping) -> "QAInstance":
        return cls(**{k: rec[k] for k in cls.__dataclass_fields__})


def _largest_remainder(total: int, weights: list[float]) -> list[int]:
    """Integer shares of ``total`` proportional to ``weights``; ties go to earlier entries."""
    s = sum(weights)
    if total <= 0 or s <= 0:
        return [0] * len(weights)
    exact = [total * w / s for w in weights]
    base = [int(np.floor(x)) for x in exact]
    left = total - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def variant_quotas(
    variants: list[QuestionVariant], budget: int, type_mix: Mapping[str, float] | None = None
) -> list[int]:
    """Round-robin shares of ``budget``, or shares weighted by question type."""
    n = len(variants)
    if type_mix is None:
        return [budget // n + (1 if i < budget % n else 0) for i in range(n)]
    per_type = Counter(v.question_type for v in variants)
    weights = [type_mix.get(v.question_type, 0.0) / per_type[v.question_type] for v in variants]
    if sum(weights) == 0:
        weights = [1.0] * n
    return _largest_remainder(budget, weights)


def _fill(quotas: list[int], pools: list[list[int]], used: set[int]) -> list[list[int]]:
    """Round-robin draws without replacement; shortfalls move to variants with spare stays."""
    picks: list[list[int]] = [[] for _ in quotas]
    ptr = [0] * len(quotas)

    def take(v: int) -> bool:
        pool = pools[v]
        while ptr[v] < len(pool) and pool[ptr[v]] in used:
            ptr[v] += 1
        if ptr[v] >= len(pool):
            return False
        sid = pool[ptr[v]]
        ptr[v] += 1
        used.add(sid)
        picks[v].append(sid)
        return True

    live = [q > 0 for q in quotas]
    while any(live):
        for v in range(len(quotas)):
            if live[v] and (len(picks[v]) >= quotas[v] or not take(v)):
                live[v] = False
    deficit = sum(quotas) - sum(len(p) for p in picks)
    spare = [True] * len(quotas)
    while deficit > 0 and any(spare):
        for v in range(len(quotas)):
            if deficit == 0:
                break
            if spare[v]:
                if take(v):
                    deficit -= 1
                else:
                    spare[v] = False
    return picks


def generate_instances(
    concept: ConceptNode,
    store: EhrStore,
    budget: int,
    split_assignment: SplitAssignment,
    seed: int,
    variants: list[QuestionVariant] | None = None,
    con: duckdb.DuckDBPyConnection | None = None,
    graph: ConceptGraph | None = None,
    train_share: float = TRAIN_SHARE,
    type_mix: Mapping[str, float] | None = None,
) -> list[QAInstance]:
    """Up to ``budget`` instances on distinct stays of ``concept``.

    ``round(train_share * budget)`` instances come from train-split stays and
    the rest from test-split stays; within each split variants share the
    quota round-robin.
    """
    if not 0 < budget <= 1000:
        raise ValueError("budget must be in 1..1000")
    if variants is None:
        variants = instantiate_variants(concept, load_template_pack())
    if not variants:
        raise ValueError(f"{concept.name}: no question variants")
    if con is None:
        if graph is None:
            raise ValueError("pass a materialized connection or the concept graph")
        con = materialize(store, graph, [concept.name])
    level = concept.level or "L1"
    rng = np.random.default_rng([seed, zlib.crc32(concept.name.encode())])
    tables = [truth_table(con, v) for v in variants]
    quotas = variant_quotas(variants, budget, type_mix)
    train_total = int(np.floor(train_share * budget + 0.5))
    train_q = _largest_remainder(train_total, [float(q) for q in quotas])
    test_q = [q - t for q, t in zip(quotas, train_q)]

    instances: list[QAInstance] = []
    for split, split_quota in (("train", train_q), ("test", test_q)):
        members = set(split_assignment.stays_in(split))
        pools = []
        for table in tables:
            eligible = sorted(s for s in table if s in members)
            pools.append([eligible[i] for i in rng.permutation(len(eligible))])
        picks = _fill(split_quota, pools, set())
        for variant, table, chosen in zip(variants, tables, picks):
            for sid in chosen:
                stay = store.stay(sid)
                instances.append(
                    QAInstance(
                        instance_id=f"{concept.name}:{variant.key}:{sid}",
                        concept=concept.name,
                        variant=variant.key,
                        question_type=variant.question_type,
                        subject_id=stay.subject_id,
                        hadm_id=stay.hadm_id,
                        stay_id=sid,
                        question_text=variant.question_for(sid, stay.subject_id, stay.hadm_id),
                        truth=table[sid],
                        unit=variant.unit,
                        level=level,
                        split=split,
                    )
                )
    if len(instances) < budget:
        logger.warning("%s: only %d of %d instances had qualifying stays", concept.name, len(instances), budget)
    instances.sort(key=lambda i: i.instance_id)
    return instances


def generate_benchmark(
    store: EhrStore,
    graph: ConceptGraph,
    split_assignment: SplitAssignment,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    concepts: Iterable[str] | None = None,
    template_pack: TemplatePack | None = None,
    type_mix: Mapping[str, float] | None = None,
) -> list[QAInstance]:
    """Instances for every derived concept (or the named subset)."""
    pack = template_pack or load_template_pack()
    names = list(concepts) if concepts is not None else graph.names("derived")
    con = materialize(store, graph, names)
    out: list[QAInstance] = []
    for name in names:
        node = graph[name]
        out.extend(
            generate_instances(
                node, store, budget, split_assignment, seed,
                variants=instantiate_variants(node, pack), con=con, type_mix=type_mix,
            )
        )
    return out


def reference_type_mix() -> dict[str, float]:
    total = sum(REFERENCE_TYPE_MIX.values())
    return {k: v / total for k, v in REFERENCE_TYPE_MIX.items()}


def type_census(instances: Iterable[QAInstance]) -> dict[str, int]:
    return dict(Counter(i.question_type for i in instances))


def write_instances(instances: Iterable[QAInstance], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(), sort_keys=True) + "\n")
    return path


def read_instances(path: str | Path) -> list[QAInstance]:
    with Path(path).open() as fh:
        return [QAInstance.from_record(json.loads(line)) for line in fh if line.strip()]
