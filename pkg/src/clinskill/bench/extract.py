"""Compiling declarative extractors to SQL over the derived tables."""

from __future__ import annotations

import logging
import math
import re
from functools import lru_cache
from typing import Mapping

import duckdb

from clinskill.bench.derive import materialize
from clinskill.bench.variants import ConfigError, Extractor, QuestionVariant
from clinskill.ehr.store import EhrStore, StayRecord
from clinskill.graph.dag import ConceptGraph

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\s*(?:('(?:[^']|'')*')|(-?\d+(?:\.\d+)?)|([A-Za-z_][A-Za-z0-9_]*)|(<=|>=|!=|<>|=|<|>|\+|-|\*|/|\(|\)))")
_WORDS = {"and", "or", "not", "is", "null", "in", "true", "false"}
_AGG = {"max": "MAX", "min": "MIN", "mean": "AVG", "sum": "SUM", "value": "MAX"}


def _where_sql(expr: str, columns: Mapping[str, str]) -> str:
    """Qualify a small boolean expression over concept columns with ``d.``."""
    out = []
    pos = 0
    expr = expr.strip()
    while pos < len(expr):
        m = _TOKEN.match(expr, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse filter near {expr[pos:]!r}")
        lit, num, ident, op = m.groups()
        if ident is not None:
            if ident.lower() in _WORDS:
                out.append(ident.upper())
            elif ident in columns:
                out.append(f"d.{ident}")
            else:
                raise ConfigError(f"filter names unknown column {ident!r}")
        else:
            out.append(lit or num or op)
        pos = m.end()
    return " ".join(out)


def _is_time(column: str, columns: Mapping[str, str]) -> bool:
    return columns.get(column, "").upper().startswith(("TIMESTAMP", "DATE"))


def _time_column(ex: Extractor, columns: Mapping[str, str]) -> str | None:
    if ex.time:
        if ex.time not in columns:
            raise ConfigError(f"time column {ex.time!r} not in concept")
        return ex.time
    for c in ("charttime", "starttime", "endtime"):
        if c in columns:
            return c
    return None


def _agg(op: str, col: str, time: str | None) -> str:
    c = f"d.{col}"
    if op in _AGG:
        return f"{_AGG[op]}({c})"
    if op in ("first", "last"):
        if time is None:
            raise ConfigError(f"op {op!r} needs a time column")
        direction = "" if op == "first" else " DESC"
        return f"first({c} ORDER BY d.{time}{direction}, {c}{direction}) FILTER (WHERE {c} IS NOT NULL)"
    raise ConfigError(f"op {op!r} cannot be used as an aggregate")


def _core(ex: Extractor, time: str | None, columns: Mapping[str, str]) -> str:
    op = ex.op
    if op in _AGG or op in ("first", "last"):
        return _agg(op, ex.column, time)
    if op == "count":
        return f"COUNT(d.{ex.column})" if ex.column else "COUNT(d.stay_id)"
    if op == "count_distinct":
        return f"COUNT(DISTINCT d.{ex.column})"
    if op == "exists":
        return "CASE WHEN COUNT(d.stay_id) > 0 THEN 'yes' ELSE 'no' END"
    if op == "delta":
        return f"({_agg('last', ex.column, time)} - {_agg('first', ex.column, time)})"
    if op == "max_diff":
        return f"MAX(d.{ex.column} - d.{ex.column_b})"
    if op == "max_ratio":
        return f"MAX(d.{ex.column} / NULLIF(d.{ex.column_b}, 0))"
    if op == "hours_to_first":
        # a value column is timed by the row's own timestamp
        if _is_time(ex.column, columns):
            return f"date_diff('second', ie.intime, MIN(d.{ex.column})) / 3600.0"
        if time is None:
            raise ConfigError(f"op {op!r} on a value column needs a time column")
        return f"date_diff('second', ie.intime, MIN(d.{time}) FILTER (WHERE d.{ex.column} IS NOT NULL)) / 3600.0"
    if op == "hours_between":
        return f"date_diff('second', MIN(d.{ex.column}), MIN(d.{ex.column_b})) / 3600.0"
    if op == "duration_hours":
        start = ex.time or "starttime"
        return f"SUM(date_diff('second', d.{start}, d.{ex.end})) / 3600.0"
    raise ConfigError(f"unsupported op {op!r}")


def _apply_post(ex: Extractor, core: str, time: str | None) -> str:
    post = ex.post
    if post is None:
        return core
    if post in ("ratio", "difference"):
        other = _agg(ex.op_b or ex.op, ex.column_b, time)
        if post == "ratio":
            return f"({core}) / NULLIF({other}, 0)"
        return f"({core}) - ({other})"
    if post == "decade":
        return f"FLOOR(({core}) / 10.0) * 10"
    kind, _, arg = post.partition(":")
    if kind == "minus":
        return f"({core}) - {arg}"
    if kind == "below":
        return f"{arg} - ({core})"
    if kind == "scale":
        return f"({core}) * {arg}"
    raise ConfigError(f"unsupported post-op {post!r}")


def compile_extractor(
    concept: str, ex: Extractor, columns: Mapping[str, str], stay_filter: bool = False
) -> str:
    """SQL returning ``(stay_id, truth)`` for every ICU stay.

    ``columns`` maps the concept's column names to their SQL types. Stays
    with no qualifying rows yield NULL (or the extractor default).
    ``stay_filter`` adds a ``$stay_id`` parameter restricting to one stay.
    """
    for c in (ex.column, ex.column_b):
        if c is not None and c not in columns:
            raise ConfigError(f"{concept}: column {c!r} not produced by the concept")
    time = _time_column(ex, columns)
    join = ["d.stay_id = ie.stay_id"]
    if ex.filter == "first_day":
        if time is None:
            raise ConfigError(f"{concept}: first_day filter needs a time column")
        join.append(f"d.{time} >= ie.intime AND d.{time} <= ie.intime + INTERVAL 24 HOUR")
    if ex.where:
        join.append(f"({_where_sql(ex.where, columns)})")
    expr = _apply_post(ex, _core(ex, time, columns), time)
    if ex.default is not None and not ex.categorical:
        expr = f"COALESCE({expr}, {ex.default!r})"
    where = "WHERE ie.stay_id = $stay_id\n" if stay_filter else ""
    return (
        f"SELECT ie.stay_id, {expr} AS truth\n"
        f"FROM icustays ie\n"
        f"LEFT JOIN derived.{concept} d ON {' AND '.join(join)}\n"
        f"{where}"
        f"GROUP BY ie.stay_id, ie.intime\n"
        f"ORDER BY ie.stay_id"
    )


def concept_columns(con: duckdb.DuckDBPyConnection, concept: str) -> dict[str, str]:
    rows = con.execute(
        "SELECT column_name, data_type FROM information_schema.columns "
        "WHERE table_schema = 'derived' AND table_name = ?",
        [concept],
    ).fetchall()
    return {name: dtype for name, dtype in rows}


def _clean(value):
    if value is None:
        return None
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value) or math.isinf(value):
        return None
    return value


def truth_table(con: duckdb.DuckDBPyConnection, variant: QuestionVariant) -> dict[int, float | str]:
    """Truth per stay for every stay where the variant yields a value."""
    sql = compile_extractor(variant.concept, variant.extractor, concept_columns(con, variant.concept))
    out = {}
    for sid, val in con.execute(sql).fetchall():
        v = _clean(val)
        if v is not None:
            out[int(sid)] = v
    return out


def extract_ground_truth(
    variant: QuestionVariant,
    stay: StayRecord | int,
    store: EhrStore,
    graph: ConceptGraph | None = None,
    con: duckdb.DuckDBPyConnection | None = None,
) -> float | str | None:
    """Truth for one stay; None when the stay has no qualifying rows.

    Without ``con`` the concept and its ancestors are derived from the rows
    of this stay's subject only, which gives the same value as deriving over
    the whole store since no concept reads across subjects.
    """
    stay_id = stay.stay_id if isinstance(stay, StayRecord) else int(stay)
    if con is None:
        if graph is None:
            graph = _default_graph()
        subject = store.stay(stay_id).subject_id
        sids = [s.stay_id for s in store.stays() if s.subject_id == subject]
        con = materialize(store.subset(sids), graph, [variant.concept])
    sql = compile_extractor(variant.concept, variant.extractor, concept_columns(con, variant.concept), stay_filter=True)
    row = con.execute(sql, {"stay_id": stay_id}).fetchone()
    value = _clean(row[1]) if row else None
    if value is None:
        logger.info("%s: stay %s has no qualifying rows", variant.variant_id, stay_id)
    return value


@lru_cache(maxsize=1)
def _default_graph() -> ConceptGraph:
    from clinskill.graph.manifest import load_graph

    return load_graph()
