"""Materializing derived concept tables over an EHR store."""

from __future__ import annotations

import logging
import time

import duckdb

from clinskill.ehr.store import EhrStore, load_tables
from clinskill.graph.dag import ConceptGraph, topological_batches

logger = logging.getLogger(__name__)


class DerivationError(RuntimeError):
    def __init__(self, concept: str, message: str):
        self.concept = concept
        super().__init__(f"{concept}: {message}")


def materialize(store: EhrStore, graph: ConceptGraph, concepts: list[str] | None = None) -> duckdb.DuckDBPyConnection:
    """Connection holding the raw tables plus ``derived.<concept>`` tables.

    Concepts are created in topological order; ``concepts`` restricts the
    set to those names and everything upstream of them. Single-threaded so
    floating-point aggregates come out identical on every run.
    """
    wanted = None
    if concepts is not None:
        wanted = set()
        stack = list(concepts)
        while stack:
            n = stack.pop()
            if n in wanted:
                continue
            wanted.add(n)
            stack.extend(p for p in graph.derived_predecessors(n) if graph[p].kind == "derived")
    con = load_tables(store.tables, locked=False)
    con.execute("SET threads = 1")
    con.execute("CREATE SCHEMA derived")
    t0 = time.perf_counter()
    for batch in topological_batches(graph):
        for name in batch:
            node = graph[name]
            if node.kind != "derived" or (wanted is not None and name not in wanted):
                continue
            try:
                con.execute(f"CREATE TABLE derived.{name} AS {node.sql_definition}")
            except duckdb.Error as exc:
                raise DerivationError(name, str(exc)) from exc
    con.execute("SET enable_external_access = false")
    con.execute("SET lock_configuration = true")
    logger.info("materialized derived tables in %.2fs", time.perf_counter() - t0)
    return con
