"""Skill programs: a small declarative language of SQL and pipeline steps.

Wire format, one block per skill::

    <skill name=max_milrinone params=stay_id:stay>
    doc: Highest milrinone rate charted during the stay, in mcg/kg/min.
    sql rates = SELECT rate FROM infusions
        WHERE stay_id = :stay_id AND itemid = 221986
    agg top = max rates.rate
    return FINAL top
    </skill>

Lines inside a block (blank lines and ``#`` comments are ignored; a line
indented further than the step above continues that step)::

    doc: <text>                             docstring, may repeat
    uses: <skill>[, <skill>]                helper skills loaded from a library
    sql <out> = <SELECT ...>                read-only query, :param placeholders
    filter <out> = <table> where <col> <op> <operand>
    select <out> = <table> cols <col>[, <col>]
    sort <out> = <table> by <col> [asc|desc]
    agg <out> = <fn> <table>.<col>          fn: min max sum mean count first last
    group <out> = <table> by <key> <fn> <col>
    calc <out> = <operand> <+|-|*|/> <operand>
    hours <out> = <operand> - <operand>     timestamp difference in hours
    compare <out> = <operand> <op> <operand>   yields 'yes' or 'no'
    join <out> = <table> <table> on <key>
    call <out> = <skill>(<param>=<operand>, ...)
    choose <out> = :<param> {<key>: <operand>, ...}
    return <label> <operand>

Operands are step outputs, numbers, quoted strings or ``:params``.
A block whose return label is FINAL is a final candidate.
Parameter semantic types: stay, subject, hadm, variant, number, text.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field

from clinskill.ehr.sql import SqlError, check_read_only

logger = logging.getLogger(__name__)

FINAL = "FINAL"
PARAM_TYPES = ("stay", "subject", "hadm", "variant", "number", "text")
AGG_FNS = ("min", "max", "sum", "mean", "count", "first", "last")
ARITH_OPS = ("+", "-", "*", "/")
CMP_OPS = ("<", "<=", ">", ">=", "=", "!=")
STEP_KINDS = ("sql", "filter", "select", "sort", "agg", "group", "calc", "hours", "compare", "join", "call", "choose")

_BLOCK = re.compile(r"<skill\b([^>]*)>(.*?)</skill>", re.DOTALL)
_OPEN = re.compile(r"<skill\b")
_ATTR = re.compile(r"(\w+)\s*=\s*(\"[^\"]*\"|'[^']*'|[^\s>]+)")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_PARAM_REF = re.compile(r"(?<![:\w]):([A-Za-z_]\w*)")
_SQL_LITERALS = re.compile(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"|--[^\n]*|/\*.*?\*/", re.DOTALL)
_NUMBER = re.compile(r"^-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?$")


class SkillParseError(ValueError):
    """Malformed skill block; the message is shown to the agent."""


@dataclass(frozen=True)
class Operand:
    kind: str  # ref, param, number, text
    value: str | float

    @classmethod
    def parse(cls, token: str, params: dict[str, str]) -> "Operand":
        token = token.strip()
        if _NUMBER.match(token):
            return cls("number", float(token))
        if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
            return cls("text", token[1:-1])
        if token.startswith(":"):
            name = token[1:]
            if name not in params:
                raise SkillParseError(f"parameter :{name} is not declared in the signature")
            return cls("param", name)
        if _NAME.match(token):
            return cls("ref", token)
        raise SkillParseError(f"cannot read operand {token!r}")

    def render(self) -> str:
        if self.kind == "number":
            return format(self.value, "g")
        if self.kind == "text":
            return f"'{self.value}'"
        if self.kind == "param":
            return f":{self.value}"
        return str(self.value)


@dataclass(frozen=True)
class Step:
    kind: str
    out: str
    args: dict = field(hash=False)
    line: int = 0

    def inputs(self) -> list[str]:
        refs = []
        for v in self.args.values():
            vals = v if isinstance(v, (list, tuple)) else (v.values() if isinstance(v, dict) else [v])
            for x in vals:
                if isinstance(x, Operand) and x.kind == "ref":
                    refs.append(str(x.value))
        for key in ("table", "left", "right"):
            if key in self.args:
                refs.append(self.args[key])
        return refs


@dataclass(frozen=True)
class SkillProgram:
    name: str
    params: tuple[tuple[str, str], ...]
    steps: tuple[Step, ...]
    return_label: str
    return_value: Operand
    doc: str = ""
    uses: tuple[str, ...] = ()
    source: str = field(default="", compare=False)

    @property
    def is_final(self) -> bool:
        return self.return_label == FINAL

    @property
    def param_names(self) -> list[str]:
        return [p for p, _ in self.params]

    @property
    def signature(self) -> str:
        return f"{self.name}(" + ", ".join(f"{p}: {t}" for p, t in self.params) + ")"

    @property
    def calls(self) -> tuple[str, ...]:
        """Helper skills referenced by ``uses`` or ``call`` steps, in first-use order."""
        seen = dict.fromkeys(self.uses)
        for s in self.steps:
            if s.kind == "call":
                seen.setdefault(s.args["skill"])
        return tuple(seen)

    @property
    def version(self) -> str:
        return program_hash(self.source)

    def text(self) -> str:
        return self.source


def program_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()[:16]


def _split_top(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside quotes, braces and parentheses."""
    out, depth, quote, cur = [], 0, None, []
    for ch in text:
        if quote:
            cur.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "'\"":
            quote = ch
        elif ch in "({":
            depth += 1
        elif ch in ")}":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        out.append(tail)
    return out


def _binary(expr: str, ops: tuple[str, ...], params) -> tuple[Operand, str, Operand]:
    # longest operators first so "<=" is not read as "<"
    for op in sorted(ops, key=len, reverse=True):
        pattern = re.compile(r"^(.+?)\s+" + re.escape(op) + r"\s+(.+)$")
        m = pattern.match(expr.strip())
        if m:
            return Operand.parse(m.group(1), params), op, Operand.parse(m.group(2), params)
    raise SkillParseError(f"expected '<a> <op> <b>' with op in {' '.join(ops)}, got {expr!r}")


def _sql_params(sql: str) -> set[str]:
    return set(_PARAM_REF.findall(_SQL_LITERALS.sub(" ", sql)))


def to_engine_sql(sql: str) -> str:
    """Rewrite ``:name`` placeholders (outside literals) to the engine's ``$name``."""
    out, pos = [], 0
    for m in _SQL_LITERALS.finditer(sql):
        out.append(_PARAM_REF.sub(r"$\1", sql[pos:m.start()]))
        out.append(m.group(0))
        pos = m.end()
    out.append(_PARAM_REF.sub(r"$\1", sql[pos:]))
    return "".join(out)


def _parse_step(kind: str, out: str, rhs: str, params: dict[str, str], line: int) -> Step:
    if kind == "sql":
        try:
            check_read_only(rhs)
        except SqlError as exc:
            raise SkillParseError(f"line {line}: {exc}") from None
        missing = _sql_params(rhs) - set(params)
        if missing:
            raise SkillParseError(f"line {line}: SQL uses undeclared parameters {sorted(missing)}")
        return Step(kind, out, {"sql": rhs}, line)
    if kind == "filter":
        m = re.match(r"^(\w+)\s+where\s+(\w+)\s+(<=|>=|!=|<|>|=)\s+(.+)$", rhs)
        if not m:
            raise SkillParseError(f"line {line}: filter needs '<table> where <col> <op> <operand>'")
        return Step(kind, out, {"table": m.group(1), "column": m.group(2), "op": m.group(3),
                                "value": Operand.parse(m.group(4), params)}, line)
    if kind == "select":
        m = re.match(r"^(\w+)\s+cols\s+(.+)$", rhs)
        if not m:
            raise SkillParseError(f"line {line}: select needs '<table> cols <col>, ...'")
        return Step(kind, out, {"table": m.group(1), "columns": tuple(_split_top(m.group(2)))}, line)
    if kind == "sort":
        m = re.match(r"^(\w+)\s+by\s+(\w+)(?:\s+(asc|desc))?$", rhs)
        if not m:
            raise SkillParseError(f"line {line}: sort needs '<table> by <col> [asc|desc]'")
        return Step(kind, out, {"table": m.group(1), "column": m.group(2), "desc": m.group(3) == "desc"}, line)
    if kind == "agg":
        m = re.match(r"^(\w+)\s+(\w+)(?:\.(\w+))?$", rhs)
        if not m or m.group(1) not in AGG_FNS:
            raise SkillParseError(f"line {line}: agg needs '<fn> <table>.<col>' with fn in {', '.join(AGG_FNS)}")
        if m.group(3) is None and m.group(1) != "count":
            raise SkillParseError(f"line {line}: only count may omit the column")
        return Step(kind, out, {"fn": m.group(1), "table": m.group(2), "column": m.group(3)}, line)
    if kind == "group":
        m = re.match(r"^(\w+)\s+by\s+(\w+)\s+(\w+)\s+(\w+)$", rhs)
        if not m or m.group(3) not in AGG_FNS:
            raise SkillParseError(f"line {line}: group needs '<table> by <key> <fn> <col>'")
        return Step(kind, out, {"table": m.group(1), "key": m.group(2), "fn": m.group(3), "column": m.group(4)}, line)
    if kind in ("calc", "hours", "compare"):
        ops = {"calc": ARITH_OPS, "hours": ("-",), "compare": CMP_OPS}[kind]
        a, op, b = _binary(rhs, ops, params)
        return Step(kind, out, {"a": a, "op": op, "b": b}, line)
    if kind == "join":
        m = re.match(r"^(\w+)\s+(\w+)\s+on\s+(\w+)$", rhs)
        if not m:
            raise SkillParseError(f"line {line}: join needs '<table> <table> on <key>'")
        return Step(kind, out, {"left": m.group(1), "right": m.group(2), "key": m.group(3)}, line)
    if kind == "call":
        m = re.match(r"^(\w+)\((.*)\)$", rhs, re.DOTALL)
        if not m:
            raise SkillParseError(f"line {line}: call needs '<skill>(<param>=<operand>, ...)'")
        binds = {}
        for part in _split_top(m.group(2)):
            k, eq, v = part.partition("=")
            if not eq or not _NAME.match(k.strip()):
                raise SkillParseError(f"line {line}: call argument {part!r} is not 'name=operand'")
            binds[k.strip()] = Operand.parse(v, params)
        return Step(kind, out, {"skill": m.group(1), "binds": binds}, line)
    if kind == "choose":
        m = re.match(r"^:(\w+)\s*\{(.*)\}$", rhs, re.DOTALL)
        if not m:
            raise SkillParseError(f"line {line}: choose needs ':<param> {{key: operand, ...}}'")
        if m.group(1) not in params:
            raise SkillParseError(f"line {line}: parameter :{m.group(1)} is not declared in the signature")
        cases = {}
        for part in _split_top(m.group(2)):
            k, colon, v = part.partition(":")
            if not colon:
                raise SkillParseError(f"line {line}: choose case {part!r} is not 'key: operand'")
            cases[k.strip()] = Operand.parse(v, params)
        return Step(kind, out, {"param": m.group(1), "cases": cases}, line)
    raise SkillParseError(f"line {line}: unknown step {kind!r}; expected one of {', '.join(STEP_KINDS)}")


def _attrs(text: str) -> dict[str, str]:
    out = {}
    for k, v in _ATTR.findall(text):
        out[k] = v[1:-1] if v[:1] in "\"'" else v
    return out


def parse_skill(header: str, body: str, source: str | None = None) -> SkillProgram:
    attrs = _attrs(header)
    name = attrs.get("name", "")
    if not _NAME.match(name):
        raise SkillParseError(f"skill needs a name=<identifier> attribute, got {name!r}")
    params: dict[str, str] = {}
    for part in _split_top(attrs.get("params", "")):
        p, _, t = part.partition(":")
        p, t = p.strip(), (t.strip() or "text")
        if not _NAME.match(p):
            raise SkillParseError(f"{name}: bad parameter {part!r}")
        if t not in PARAM_TYPES:
            raise SkillParseError(f"{name}: parameter {p} has unknown type {t!r}; use one of {', '.join(PARAM_TYPES)}")
        if p in params:
            raise SkillParseError(f"{name}: parameter {p} declared twice")
        params[p] = t

    # fold continuation lines into the step above
    logical: list[tuple[int, str]] = []
    base_indent = None
    for i, raw in enumerate(body.splitlines(), 1):
        if not raw.strip() or raw.strip().startswith("#"):
            continue
        indent = len(raw) - len(raw.lstrip())
        if base_indent is None:
            base_indent = indent
        if logical and indent > base_indent:
            n, prev = logical[-1]
            logical[-1] = (n, prev + "\n" + raw.strip())
        else:
            logical.append((i, raw.strip()))

    docs, uses, steps = [], [], []
    ret = None
    names = set(params)
    for n, text in logical:
        if ret is not None:
            raise SkillParseError(f"{name}: line {n}: nothing may follow the return step")
        head, _, rest = text.partition(" ")
        if text.startswith("doc:"):
            docs.append(text[4:].strip())
            continue
        if text.startswith("uses:"):
            uses.extend(u.strip() for u in text[5:].split(",") if u.strip())
            continue
        if head == "return":
            parts = rest.split(None, 1)
            if len(parts) != 2 or not _NAME.match(parts[0]):
                raise SkillParseError(f"{name}: line {n}: return needs '<label> <operand>'")
            ret = (parts[0], Operand.parse(parts[1], params))
            continue
        m = re.match(r"^(\w+)\s*=\s*(.+)$", rest, re.DOTALL)
        if not m:
            raise SkillParseError(f"{name}: line {n}: expected '{head} <out> = ...'")
        out = m.group(1)
        if out in names:
            raise SkillParseError(f"{name}: line {n}: {out!r} is already defined")
        try:
            step = _parse_step(head, out, m.group(2).strip(), params, n)
        except SkillParseError as exc:
            raise SkillParseError(f"{name}: {exc}") from None
        undefined = [r for r in step.inputs() if r not in names]
        if undefined:
            raise SkillParseError(f"{name}: line {n}: {', '.join(undefined)} used before definition")
        names.add(out)
        steps.append(step)
    if ret is None:
        raise SkillParseError(f"{name}: missing return step")
    if ret[1].kind == "ref" and ret[1].value not in names:
        raise SkillParseError(f"{name}: return value {ret[1].value!r} is not defined")
    src = source if source is not None else f"<skill{header}>{body}</skill>"
    return SkillProgram(
        name=name,
        params=tuple(params.items()),
        steps=tuple(steps),
        return_label=ret[0],
        return_value=ret[1],
        doc="\n".join(docs),
        uses=tuple(dict.fromkeys(uses)),
        source=src,
    )


def parse_program(text: str) -> SkillProgram:
    """Exactly one block from ``text``."""
    progs, errors = extract_skill_candidates(text)
    if errors:
        raise SkillParseError(errors[0])
    if len(progs) != 1:
        raise SkillParseError(f"expected one skill block, found {len(progs)}")
    return progs[0]


def extract_skill_candidates(response_text: str) -> tuple[list[SkillProgram], list[str]]:
    """Every well-formed block in order, plus a diagnostic per malformed one."""
    programs, errors = [], []
    matched_spans = []
    for m in _BLOCK.finditer(response_text):
        matched_spans.append(m.start())
        try:
            programs.append(parse_skill(m.group(1), m.group(2), m.group(0)))
        except SkillParseError as exc:
            errors.append(str(exc))
    for m in _OPEN.finditer(response_text):
        if m.start() not in matched_spans:
            errors.append("unterminated <skill> block: close it with </skill>")
    return programs, errors


def final_candidate(programs: list[SkillProgram]) -> SkillProgram | None:
    finals = [p for p in programs if p.is_final]
    return finals[-1] if finals else None
