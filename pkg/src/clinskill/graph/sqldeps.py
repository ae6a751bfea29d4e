"""Regex-level dependency extraction from concept SQL."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable

logger = logging.getLogger(__name__)

# schemas whose qualified names resolve to the bare table name
KNOWN_SCHEMAS = frozenset(
    {"derived", "mimiciv_derived", "mimiciv_icu", "mimiciv_hosp", "icu", "hosp", "main"}
)

_COMMENT = re.compile(r"--[^\n]*|/\*.*?\*/", re.DOTALL)
_STRING = re.compile(r"'(?:[^']|'')*'")
_IDENT = re.compile(r"(?<![\w.])([a-z_][a-z0-9_]*)(?:\s*\.\s*([a-z_][a-z0-9_]*))?(?![\w])")
_ITEM_EQ = re.compile(r"\bitemid\s*(?:=|==)\s*(\d+)")
_ITEM_IN = re.compile(r"\bitemid\s+in\s*\(([^)]*)\)")
_INT = re.compile(r"\b\d+\b")


@dataclass(frozen=True)
class Catalog:
    derived: frozenset[str]
    raw: frozenset[str]

    @classmethod
    def of(cls, derived: Iterable[str], raw: Iterable[str]) -> "Catalog":
        d = frozenset(n.lower() for n in derived)
        r = frozenset(n.lower() for n in raw)
        if not d and not r:
            raise ValueError("catalog must name at least one table")
        return cls(d, r)


@dataclass(frozen=True)
class DependencySet:
    derived: frozenset[str] = frozenset()
    raw: frozenset[str] = frozenset()
    item_ids: frozenset[int] = frozenset()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __bool__(self) -> bool:
        return bool(self.derived or self.raw or self.item_ids)


def strip_sql(sql_text: str) -> tuple[str, list[str]]:
    """Lowercase, drop comments and string literals; report unbalanced quoting."""
    warnings = []
    text = _COMMENT.sub(" ", sql_text)
    if text.count("/*") > text.count("*/"):
        warnings.append("unterminated block comment")
        text = text.split("/*", 1)[0]
    text = _STRING.sub("''", text)
    if text.count("'") % 2:
        warnings.append("unbalanced string quote")
        text = text.replace("'", " ")
    if text.count("(") != text.count(")"):
        warnings.append("unbalanced parentheses")
    return text.lower(), warnings


def parse_sql_dependencies(sql_text: str, catalog: Catalog) -> DependencySet:
    """Tables and item ids referenced by ``sql_text``.

    Identifiers match catalog names case-insensitively as whole tokens; a
    qualified ``schema.table`` resolves to ``table`` for known schema names.
    """
    if not catalog.derived and not catalog.raw:
        raise ValueError("catalog must be non-empty")
    text, warnings = strip_sql(sql_text)
    derived: set[str] = set()
    raw: set[str] = set()
    for m in _IDENT.finditer(text):
        first, second = m.group(1), m.group(2)
        if second is not None:
            if first in KNOWN_SCHEMAS:
                names = [second]
            else:
                # alias.column or unknown_schema.table; only the first part can be a table
                names = [first]
        else:
            names = [first]
        for name in names:
            if name in catalog.derived:
                derived.add(name)
            elif name in catalog.raw:
                raw.add(name)
    items: set[int] = {int(x) for x in _ITEM_EQ.findall(text)}
    for group in _ITEM_IN.findall(text):
        items.update(int(x) for x in _INT.findall(group))
    if warnings:
        logger.debug("sql dependency warnings: %s", warnings)
    return DependencySet(frozenset(derived), frozenset(raw), frozenset(items), tuple(warnings))
