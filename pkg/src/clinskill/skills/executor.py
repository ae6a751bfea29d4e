"""Deterministic evaluation of skill programs against a store or a view."""

from __future__ import annotations

import datetime as dt
import logging
import math
import operator
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from clinskill.ehr.sql import DEFAULT_TIMEOUT_S, ResultTable, SqlError, execute_sql
from clinskill.skills.program import Operand, SkillProgram, Step, to_engine_sql

logger = logging.getLogger(__name__)

MAX_CALL_DEPTH = 8
_CMP = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "=": operator.eq, "!=": operator.ne}
_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv}


@dataclass(frozen=True)
class Missing:
    """A value that could not be computed, e.g. a division by zero."""

    reason: str

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        return f"NA({self.reason})"


class SkillRuntimeError(RuntimeError):
    """Execution failure; ``trace`` is what the agent gets to see."""

    def __init__(self, skill: str, step: Step | None, message: str):
        self.skill = skill
        self.step = step
        where = f"{skill}, line {step.line} ({step.kind} {step.out})" if step else skill
        self.trace = f"{where}: {message}"
        super().__init__(self.trace)


class SkillTypeError(SkillRuntimeError):
    pass


Resolver = Callable[[str], SkillProgram]


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _col(table: ResultTable, name: str, skill: str, step: Step) -> int:
    if name not in table.columns:
        raise SkillRuntimeError(skill, step, f"column {name!r} not in table (columns: {', '.join(table.columns)})")
    return table.columns.index(name)


def _aggregate(fn: str, values: list) -> Any:
    if fn == "count":
        return float(sum(v is not None for v in values))
    vals = [v for v in values if v is not None]
    if not vals:
        return Missing("no rows")
    if fn == "first":
        return vals[0]
    if fn == "last":
        return vals[-1]
    if fn == "min":
        return min(vals)
    if fn == "max":
        return max(vals)
    if not all(_is_num(v) for v in vals):
        raise TypeError(f"{fn} needs numeric values")
    # math.fsum keeps sums independent of row order
    total = math.fsum(vals)
    return total if fn == "sum" else total / len(vals)


def _sort_key(v):
    return (v is None, v if v is not None else 0)


class _Frame:
    def __init__(self, program: SkillProgram, args: Mapping[str, Any], target, resolve, timeout, depth):
        self.p = program
        self.args = args
        self.target = target
        self.resolve = resolve
        self.timeout = timeout
        self.depth = depth
        self.env: dict[str, Any] = {}

    def fail(self, step, msg, cls=SkillRuntimeError):
        raise cls(self.p.name, step, msg)

    def value(self, op: Operand, step: Step):
        if op.kind in ("number", "text"):
            return op.value
        if op.kind == "param":
            return self.args[op.value]
        return self.env[op.value]

    def table(self, name: str, step: Step) -> ResultTable:
        v = self.env[name]
        if not isinstance(v, ResultTable):
            self.fail(step, f"{name!r} is a {type(v).__name__}, expected a table", SkillTypeError)
        return v

    def scalar(self, op: Operand, step: Step):
        v = self.value(op, step)
        if isinstance(v, ResultTable):
            if len(v.columns) == 1 and len(v.rows) == 1:
                return v.rows[0][0]
            self.fail(step, f"{op.render()} is a table, expected a single value", SkillTypeError)
        return v

    def run(self):
        for step in self.p.steps:
            self.env[step.out] = getattr(self, "_" + step.kind)(step)
        return self.scalar(self.p.return_value, None) if self.p.return_value.kind != "ref" else self.env[self.p.return_value.value]

    # -- steps -------------------------------------------------------------
    def _sql(self, step):
        sql = step.args["sql"]
        engine_sql = to_engine_sql(sql)
        used = {n: self.args[n] for n in self.p.param_names if f"${n}" in engine_sql}
        try:
            return execute_sql(self.target, engine_sql, timeout_s=self.timeout, params=used or None)
        except SqlError as exc:
            self.fail(step, f"{type(exc).__name__}: {exc}")

    def _filter(self, step):
        t = self.table(step.args["table"], step)
        i = _col(t, step.args["column"], self.p.name, step)
        ref = self.scalar(step.args["value"], step)
        cmp = _CMP[step.args["op"]]
        rows = []
        for r in t.rows:
            v = r[i]
            if v is None or isinstance(ref, Missing):
                continue
            try:
                if cmp(v, ref):
                    rows.append(r)
            except TypeError:
                self.fail(step, f"cannot compare {type(v).__name__} with {type(ref).__name__}", SkillTypeError)
        return ResultTable(t.columns, t.types, tuple(rows))

    def _select(self, step):
        t = self.table(step.args["table"], step)
        idx = [_col(t, c, self.p.name, step) for c in step.args["columns"]]
        return ResultTable(
            tuple(t.columns[i] for i in idx),
            tuple(t.types[i] for i in idx),
            tuple(tuple(r[i] for i in idx) for r in t.rows),
        )

    def _sort(self, step):
        t = self.table(step.args["table"], step)
        i = _col(t, step.args["column"], self.p.name, step)
        try:
            rows = sorted(t.rows, key=lambda r: _sort_key(r[i]), reverse=step.args["desc"])
        except TypeError:
            self.fail(step, "column mixes incomparable types", SkillTypeError)
        return ResultTable(t.columns, t.types, tuple(rows))

    def _agg(self, step):
        t = self.table(step.args["table"], step)
        if step.args["column"] is None:
            return float(len(t.rows))
        i = _col(t, step.args["column"], self.p.name, step)
        try:
            return _aggregate(step.args["fn"], [r[i] for r in t.rows])
        except TypeError as exc:
            self.fail(step, str(exc), SkillTypeError)

    def _group(self, step):
        t = self.table(step.args["table"], step)
        k = _col(t, step.args["key"], self.p.name, step)
        c = _col(t, step.args["column"], self.p.name, step)
        groups: dict[Any, list] = {}
        for r in t.rows:
            groups.setdefault(r[k], []).append(r[c])
        rows = []
        for key in sorted(groups, key=_sort_key):
            try:
                v = _aggregate(step.args["fn"], groups[key])
            except TypeError as exc:
                self.fail(step, str(exc), SkillTypeError)
            rows.append((key, None if isinstance(v, Missing) else v))
        name = f"{step.args['fn']}_{step.args['column']}"
        return ResultTable((t.columns[k], name), (t.types[k], "DOUBLE"), tuple(rows))

    def _calc(self, step):
        a, b = self.scalar(step.args["a"], step), self.scalar(step.args["b"], step)
        for v in (a, b):
            if isinstance(v, Missing):
                return v
            if v is None:
                return Missing("null operand")
            if not _is_num(v):
                self.fail(step, f"arithmetic needs numbers, got {type(v).__name__}", SkillTypeError)
        if step.args["op"] == "/" and b == 0:
            return Missing("division by zero")
        return float(_ARITH[step.args["op"]](a, b))

    def _hours(self, step):
        a, b = self.scalar(step.args["a"], step), self.scalar(step.args["b"], step)
        for v in (a, b):
            if isinstance(v, Missing):
                return v
            if v is None:
                return Missing("null timestamp")
            if not isinstance(v, dt.datetime):
                self.fail(step, f"hours needs timestamps, got {type(v).__name__}", SkillTypeError)
        return (a - b).total_seconds() / 3600.0

    def _compare(self, step):
        a, b = self.scalar(step.args["a"], step), self.scalar(step.args["b"], step)
        if isinstance(a, Missing) or isinstance(b, Missing):
            return a if isinstance(a, Missing) else b
        if a is None or b is None:
            return Missing("null operand")
        try:
            return "yes" if _CMP[step.args["op"]](a, b) else "no"
        except TypeError:
            self.fail(step, f"cannot compare {type(a).__name__} with {type(b).__name__}", SkillTypeError)

    def _join(self, step):
        left, right = self.table(step.args["left"], step), self.table(step.args["right"], step)
        key = step.args["key"]
        li, ri = _col(left, key, self.p.name, step), _col(right, key, self.p.name, step)
        keep = [j for j in range(len(right.columns)) if j != ri]
        index: dict[Any, list] = {}
        for r in right.rows:
            index.setdefault(r[ri], []).append(r)
        rows = tuple(lr + tuple(rr[j] for j in keep) for lr in left.rows for rr in index.get(lr[li], ()))
        cols = left.columns + tuple(right.columns[j] for j in keep)
        if len(set(cols)) != len(cols):
            self.fail(step, "joined tables share column names besides the key; select first", SkillTypeError)
        return ResultTable(cols, left.types + tuple(right.types[j] for j in keep), rows)

    def _call(self, step):
        name = step.args["skill"]
        if self.depth >= MAX_CALL_DEPTH:
            self.fail(step, "helper calls nested too deeply")
        try:
            helper = self.resolve(name) if self.resolve else None
        except KeyError:
            helper = None
        if helper is None:
            self.fail(step, f"helper skill {name!r} is not loaded")
        args = {k: self.scalar(v, step) for k, v in step.args["binds"].items()}
        return execute_skill(helper, args, self.target, self.resolve, self.timeout, self.depth + 1)

    def _choose(self, step):
        key = str(self.args[step.args["param"]])
        cases = step.args["cases"]
        if key not in cases:
            if "default" in cases:
                return self.value(cases["default"], step)
            return Missing(f"no case for {key!r}")
        return self.value(cases[key], step)


def execute_skill(
    program: SkillProgram,
    args: Mapping[str, Any],
    target,
    resolve: Resolver | None = None,
    timeout_s: float | None = DEFAULT_TIMEOUT_S,
    _depth: int = 0,
):
    """Run ``program`` with ``args`` on an EhrStore or TimeScopedView.

    Returns a scalar, a ``ResultTable`` or a ``Missing``; raises
    ``SkillRuntimeError`` with a readable trace on failure.
    """
    declared = program.param_names
    missing = [p for p in declared if p not in args]
    extra = [a for a in args if a not in declared]
    if missing or extra:
        raise SkillRuntimeError(
            program.name, None, f"arguments do not match {program.signature}: missing {missing}, unexpected {extra}"
        )
    return _Frame(program, dict(args), target, resolve, timeout_s, _depth).run()


def render_value(value) -> str:
    if isinstance(value, ResultTable):
        return value.to_text(max_rows=20)
    if isinstance(value, float):
        return format(value, ".10g")
    if isinstance(value, dt.datetime):
        return value.strftime("%Y-%m-%d %H:%M:%S")
    return str(value)
