"""Read-only SQL execution against a store or a time-scoped view."""

from __future__ import annotations

import datetime as _dt
import decimal
import logging
import re
import threading
from dataclasses import dataclass
from typing import Any, Sequence

import duckdb

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 10.0

_LEADING = {"select", "with", "from", "values", "table", "describe", "show", "summarize", "explain"}
_FORBIDDEN = re.compile(
    r"\b(insert|update|delete|create|drop|alter|copy|attach|detach|install|load|set|reset|"
    r"pragma|export|import|call|truncate|vacuum|checkpoint|begin|commit|rollback|abort|"
    r"grant|revoke|merge|upsert|use)\b",
    re.IGNORECASE,
)
_LITERALS = re.compile(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"|--[^\n]*|/\*.*?\*/", re.DOTALL)


class SqlError(Exception):
    """Base class; ``str(err)`` is surfaced verbatim to agents."""


class SqlSyntaxError(SqlError):
    pass


class WriteRejected(SqlError):
    pass


class QueryTimeout(SqlError):
    pass


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    types: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]

    def __len__(self) -> int:
        return len(self.rows)

    def records(self) -> list[dict[str, Any]]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def column(self, name: str) -> list[Any]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def scalar(self) -> Any:
        if not self.rows or not self.columns:
            return None
        return self.rows[0][0]

    def to_text(self, max_rows: int = 50) -> str:
        """Pipe-separated rendering for agent transcripts."""
        lines = [" | ".join(self.columns)]
        for r in self.rows[:max_rows]:
            lines.append(" | ".join(format_cell(v) for v in r))
        if len(self.rows) > max_rows:
            lines.append(f"... ({len(self.rows) - max_rows} more rows)")
        lines.append(f"({len(self.rows)} rows)")
        return "\n".join(lines)


def format_cell(v: Any) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, float):
        return format(v, ".10g")
    if isinstance(v, _dt.datetime):
        return v.strftime("%Y-%m-%d %H:%M:%S")
    return str(v)


def _cell(v: Any) -> Any:
    if isinstance(v, decimal.Decimal):
        return float(v)
    return v


def check_read_only(sql: str) -> str:
    """Reject anything but a single read statement; returns the statement stripped."""
    body = _LITERALS.sub(" ", sql)
    stripped = body.strip().rstrip(";").strip()
    if not stripped:
        raise SqlSyntaxError("empty statement")
    if ";" in stripped:
        raise WriteRejected("only a single statement is allowed")
    head = stripped.lstrip("(").split(None, 1)[0].lower() if stripped.lstrip("(") else ""
    if head not in _LEADING:
        raise WriteRejected(f"statement type {head.upper()!r} is not allowed; read-only queries only")
    m = _FORBIDDEN.search(stripped)
    if m:
        raise WriteRejected(f"keyword {m.group(1).upper()!r} is not allowed; read-only queries only")
    return sql.strip().rstrip(";").strip()


def run_query(
    con: duckdb.DuckDBPyConnection,
    sql: str,
    params: dict[str, Any] | Sequence[Any] | None = None,
    timeout_s: float | None = DEFAULT_TIMEOUT_S,
) -> ResultTable:
    """Execute a guarded statement on a fresh cursor inside a rolled-back transaction."""
    statement = check_read_only(sql)
    cur = con.cursor()
    timer = None
    if timeout_s is not None and timeout_s > 0:
        timer = threading.Timer(timeout_s, cur.interrupt)
        timer.daemon = True
        timer.start()
    try:
        cur.execute("BEGIN TRANSACTION")
        try:
            if params:
                cur.execute(statement, params)
            else:
                cur.execute(statement)
            desc = cur.description or []
            rows = cur.fetchall() if desc else []
        finally:
            try:
                cur.execute("ROLLBACK")
            except duckdb.Error:
                pass
    except duckdb.InterruptException as err:
        raise QueryTimeout(f"query exceeded {timeout_s} s timeout") from err
    except duckdb.Error as err:
        if timer is not None and not timer.is_alive() and "interrupt" in str(err).lower():
            raise QueryTimeout(f"query exceeded {timeout_s} s timeout") from err
        raise SqlSyntaxError(str(err)) from err
    finally:
        if timer is not None:
            timer.cancel()
        cur.close()
    return ResultTable(
        tuple(d[0] for d in desc),
        tuple(str(d[1]) for d in desc),
        tuple(tuple(_cell(v) for v in r) for r in rows),
    )


def execute_sql(target, sql: str, timeout_s: float | None = DEFAULT_TIMEOUT_S, params=None) -> ResultTable:
    """Run ``sql`` on an EhrStore or a TimeScopedView.

    On a view only rows visible at its horizon exist, so no query can see
    later data.
    """
    return run_query(target.connection(), sql, params=params, timeout_s=timeout_s)
