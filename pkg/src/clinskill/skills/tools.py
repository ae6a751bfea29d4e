"""Tools exposed to a backend during synthesis and question answering.

Every tool takes a JSON-like argument dict and returns text. Failures come
back as text starting with ``ERROR:`` so the agent can react to them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from clinskill.agents.backends import ToolSpec
from clinskill.ehr.sql import DEFAULT_TIMEOUT_S, SqlError, execute_sql
from clinskill.guidelines.store import GuidelineError, GuidelineStore
from clinskill.skills.executor import SkillRuntimeError, execute_skill, render_value
from clinskill.skills.library import LibraryError, SkillLibrary
from clinskill.skills.program import SkillProgram

logger = logging.getLogger(__name__)

MAX_ROWS = 50


class ToolError(Exception):
    pass


@dataclass
class ToolContext:
    """What tools may touch. ``target`` is an EhrStore or a TimeScopedView."""

    target: Any
    guidelines: GuidelineStore | None = None
    library: SkillLibrary | None = None
    sql_timeout: float | None = DEFAULT_TIMEOUT_S
    loaded: dict[str, SkillProgram] = field(default_factory=dict)

    def resolve(self, name: str) -> SkillProgram:
        if name in self.loaded:
            return self.loaded[name]
        if self.library is None:
            raise KeyError(name)
        return self.library.get(name).program


@dataclass(frozen=True)
class Tool:
    spec: ToolSpec
    fn: Callable[[ToolContext, Mapping[str, Any]], str]


def _need(args: Mapping, key: str, kind=str):
    if key not in args:
        raise ToolError(f"missing argument {key!r}")
    v = args[key]
    if kind is str and not isinstance(v, str):
        raise ToolError(f"argument {key!r} must be a string")
    if kind is dict and not isinstance(v, dict):
        raise ToolError(f"argument {key!r} must be an object")
    return v


def _guides(ctx: ToolContext) -> GuidelineStore:
    if ctx.guidelines is None:
        raise ToolError("no guideline corpus is available")
    return ctx.guidelines


def _lib(ctx: ToolContext) -> SkillLibrary:
    if ctx.library is None:
        raise ToolError("no skill library is available")
    return ctx.library


def query_db(ctx: ToolContext, args) -> str:
    table = execute_sql(ctx.target, _need(args, "sql"), timeout_s=ctx.sql_timeout)
    return table.to_text(max_rows=MAX_ROWS)


def search_guidelines(ctx: ToolContext, args) -> str:
    g = _guides(ctx)
    hits = g.search(_need(args, "query"), limit=5)
    if not hits:
        return "no matching guidelines; available: " + ", ".join(g.names())
    return "\n".join(f"{n}: {g.doc(n).title}" for n in hits)


def get_guideline(ctx: ToolContext, args) -> str:
    return _guides(ctx).get_guideline(_need(args, "name")).render()


def get_guideline_section(ctx: ToolContext, args) -> str:
    return _guides(ctx).get_guideline_section(_need(args, "name"), _need(args, "section"))


def search_functions(ctx: ToolContext, args) -> str:
    lib = _lib(ctx)
    names = lib.query(str(args.get("keyword", "")))[:10]
    if not names:
        return "no matching functions"
    lines = []
    for n in names:
        rec = lib.get(n)
        first = rec.docstring.splitlines()[0] if rec.docstring else ""
        lines.append(f"{rec.signature}: {first}")
    return "\n".join(lines)


def get_function_info(ctx: ToolContext, args) -> str:
    return _lib(ctx).get(_need(args, "name")).info()


def load_function(ctx: ToolContext, args) -> str:
    rec = _lib(ctx).get(_need(args, "name"))
    ctx.loaded[rec.name] = rec.program
    for dep in rec.dependencies:
        if dep not in ctx.loaded:
            ctx.loaded[dep] = _lib(ctx).get(dep).program
    return f"loaded {rec.signature}\n{rec.program.source}"


def call_function(ctx: ToolContext, args) -> str:
    name = _need(args, "name")
    if name not in ctx.loaded:
        raise ToolError(f"{name!r} is not loaded; call load_function first")
    fargs = args.get("args", {})
    if not isinstance(fargs, dict):
        raise ToolError("argument 'args' must be an object")
    return render_value(execute_skill(ctx.loaded[name], fargs, ctx.target, ctx.resolve, ctx.sql_timeout))


def _spec(tool: str, desc: str, **params: str) -> ToolSpec:
    return ToolSpec(tool, desc, params)


TOOLS: dict[str, Tool] = {
    t.spec.name: t
    for t in (
        Tool(_spec("query_db", "Run one read-only SQL query against the clinical database.", sql="string"), query_db),
        Tool(_spec("search_guidelines", "Rank clinical guideline documents for a query.", query="string"),
             search_guidelines),
        Tool(_spec("get_guideline", "Preview a guideline and list its sections.", name="string"), get_guideline),
        Tool(_spec("get_guideline_section", "Full text of one guideline section.", name="string", section="string"),
             get_guideline_section),
        Tool(_spec("search_functions", "Search verified library functions by keyword.", keyword="string"),
             search_functions),
        Tool(_spec("get_function_info", "Signature and docstring of a library function.", name="string"),
             get_function_info),
        Tool(_spec("load_function", "Load a library function (and its helpers) for use.", name="string"),
             load_function),
        Tool(_spec("call_function", "Run a loaded function with named arguments.", name="string", args="object"),
             call_function),
    )
}

SYNTHESIS_TOOLS = ("query_db", "search_guidelines", "get_guideline", "get_guideline_section",
                   "search_functions", "get_function_info", "load_function")
TOOLSETS = {
    "zeroshot": ("query_db",),
    "autoform": ("query_db", "search_functions", "get_function_info", "load_function", "call_function"),
    "synthesis": SYNTHESIS_TOOLS,
}


def specs(names) -> list[ToolSpec]:
    return [TOOLS[n].spec for n in names]


def run_tool(name: str, args: Mapping[str, Any], ctx: ToolContext, allowed) -> tuple[str, bool]:
    """Dispatch one call; returns (text, ok). Unknown or disallowed tools are errors."""
    if name not in allowed:
        return f"ERROR: unknown tool {name!r}; available: {', '.join(allowed)}", False
    try:
        return TOOLS[name].fn(ctx, args or {}), True
    except (ToolError, SqlError, GuidelineError, LibraryError, SkillRuntimeError) as exc:
        return f"ERROR: {type(exc).__name__}: {exc}", False


def describe_call(name: str, args: Mapping[str, Any]) -> str:
    return f"{name}({json.dumps(args, sort_keys=True)})"
