"""Concept dependency DAG: construction, difficulty levels and synthesis batches."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from clinskill.ehr import schema
from clinskill.graph.sqldeps import Catalog, parse_sql_dependencies

logger = logging.getLogger(__name__)

KINDS = ("raw_table", "derived", "condition")
LEVELS = ("L1", "L2", "L3plus")


class CycleError(ValueError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("dependency cycle: " + " -> ".join(cycle))


@dataclass(frozen=True)
class ConceptNode:
    name: str
    kind: str
    sql_definition: str | None = None
    guideline_name: str | None = None
    depth: int | None = None
    level: str | None = None
    description: str = ""
    keywords: tuple[str, ...] = ()
    spec_text: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "derived" and not self.sql_definition:
            raise ValueError(f"{self.name}: derived nodes need a SQL definition")
        if self.kind == "condition" and not self.guideline_name:
            raise ValueError(f"{self.name}: condition nodes need a guideline name")

    @property
    def label(self) -> str:
        return self.name.replace("_", " ")


def level_of(depth: int) -> str:
    if depth < 1:
        raise ValueError("levels are defined for depth >= 1")
    return LEVELS[min(depth, 3) - 1]


@dataclass(frozen=True)
class ConceptGraph:
    nodes: Mapping[str, ConceptNode]
    edges: frozenset[tuple[str, str]]

    def __contains__(self, name: str) -> bool:
        return name in self.nodes

    def __getitem__(self, name: str) -> ConceptNode:
        return self.nodes[name]

    def names(self, kind: str | None = None) -> list[str]:
        return sorted(n for n, v in self.nodes.items() if kind is None or v.kind == kind)

    def predecessors(self, name: str) -> list[str]:
        return sorted(u for u, v in self.edges if v == name)

    def successors(self, name: str) -> list[str]:
        return sorted(v for u, v in self.edges if u == name)

    def derived_predecessors(self, name: str) -> list[str]:
        return [u for u in self.predecessors(name) if self.nodes[u].kind != "raw_table"]

    def level_census(self) -> dict[str, int]:
        c = Counter(v.level for v in self.nodes.values() if v.kind == "derived")
        return {lvl: c.get(lvl, 0) for lvl in LEVELS}

    def with_edge(self, u: str, v: str) -> "ConceptGraph":
        return ConceptGraph(self.nodes, self.edges | {(u, v)})

    def to_dot(self) -> str:
        shapes = {"raw_table": "box", "derived": "ellipse", "condition": "diamond"}
        lines = ["digraph concepts {", "  rankdir=LR;"]
        for name in self.names():
            node = self.nodes[name]
            extra = f', label="{name}\\n{node.level}"' if node.level else ""
            lines.append(f'  "{name}" [shape={shapes[node.kind]}{extra}];')
        for u, v in sorted(self.edges):
            lines.append(f'  "{u}" -> "{v}";')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_adjacency(self) -> str:
        """One line per node: ``name: predecessor predecessor ...``."""
        return "".join(f"{n}: {' '.join(self.predecessors(n))}".rstrip() + "\n" for n in self.names())


def find_cycle(names: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    succ: dict[str, list[str]] = {n: [] for n in names}
    for u, v in edges:
        succ.setdefault(u, []).append(v)
        succ.setdefault(v, [])
    color = dict.fromkeys(succ, 0)
    stack: list[str] = []

    def visit(n: str) -> list[str] | None:
        color[n] = 1
        stack.append(n)
        for m in sorted(succ[n]):
            if color[m] == 1:
                return stack[stack.index(m):] + [m]
            if color[m] == 0:
                found = visit(m)
                if found:
                    return found
        stack.pop()
        color[n] = 2
        return None

    for n in sorted(succ):
        if color[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def infer_condition_edges(
    spec_text: str, node_catalog: Iterable[ConceptNode] | Mapping[str, Iterable[str]], target: str = "condition"
) -> frozenset[tuple[str, str]]:
    """Edges ``(node, target)`` for every catalog node named in ``spec_text``.

    A node matches when its label (name with spaces) or any of its keywords
    occurs as a whole word, case-insensitively, without stemming.
    """
    if not spec_text or not spec_text.strip():
        raise ValueError("spec_text must be non-empty")
    if isinstance(node_catalog, Mapping):
        terms = {name: [name.replace("_", " "), *kws] for name, kws in node_catalog.items()}
    else:
        terms = {n.name: [n.label, *n.keywords] for n in node_catalog}
    text = spec_text.lower()
    edges = set()
    for name, words in terms.items():
        for w in words:
            w = w.strip().lower()
            if w and re.search(r"(?<![\w])" + re.escape(w) + r"(?![\w])", text):
                edges.add((name, target))
                break
    return frozenset(edges)


def build_graph(
    manifest: Iterable[ConceptNode], raw_tables: Iterable[str] = schema.RAW_TABLES
) -> ConceptGraph:
    """Nodes plus SQL- and keyword-derived edges; raises CycleError."""
    nodes: dict[str, ConceptNode] = {}
    for node in manifest:
        if node.name in nodes:
            raise ValueError(f"duplicate concept name {node.name!r}")
        nodes[node.name] = node
    for t in raw_tables:
        nodes.setdefault(t, ConceptNode(t, "raw_table"))
    derived = [n for n in nodes.values() if n.kind == "derived"]
    catalog = Catalog.of(
        (n.name for n in derived), (n.name for n in nodes.values() if n.kind == "raw_table")
    )
    edges: set[tuple[str, str]] = set()
    for node in derived:
        deps = parse_sql_dependencies(node.sql_definition, catalog)
        if deps.warnings:
            logger.warning("%s: %s", node.name, "; ".join(deps.warnings))
        # a concept naming its own output column is not a self-dependency
        for dep in (deps.derived | deps.raw) - {node.name}:
            edges.add((dep, node.name))
    for node in nodes.values():
        if node.kind == "condition" and node.spec_text:
            edges |= infer_condition_edges(node.spec_text, derived, target=node.name)
    cycle = find_cycle(nodes, edges)
    if cycle:
        raise CycleError(cycle)
    return ConceptGraph(nodes, frozenset(edges))


def _depths(graph: ConceptGraph) -> dict[str, int]:
    preds: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for u, v in graph.edges:
        if graph.nodes[u].kind != "raw_table":
            preds[v].append(u)
    depth: dict[str, int] = {}
    visiting: set[str] = set()

    def resolve(n: str) -> int:
        if n in depth:
            return depth[n]
        if n in visiting:
            raise CycleError([n, n])
        visiting.add(n)
        d = 1 + max((resolve(p) for p in preds[n]), default=0)
        visiting.discard(n)
        depth[n] = d
        return d

    for n, node in graph.nodes.items():
        if node.kind == "raw_table":
            depth[n] = 0
    for n in sorted(graph.nodes):
        resolve(n)
    return depth


def assign_levels(graph: ConceptGraph) -> ConceptGraph:
    """Fill depth (longest derived chain) and level on every non-raw node."""
    cycle = find_cycle(graph.nodes, graph.edges)
    if cycle:
        raise CycleError(cycle)
    depth = _depths(graph)
    nodes = {}
    for name, node in graph.nodes.items():
        if node.kind == "raw_table":
            nodes[name] = replace(node, depth=0, level=None)
        else:
            nodes[name] = replace(node, depth=depth[name], level=level_of(depth[name]))
    return ConceptGraph(nodes, graph.edges)


def topological_batches(graph: ConceptGraph) -> list[list[str]]:
    """Derived and condition nodes grouped so each batch only needs earlier ones."""
    depth = _depths(graph)
    batches: dict[int, list[str]] = {}
    for name, node in graph.nodes.items():
        if node.kind != "raw_table":
            batches.setdefault(depth[name], []).append(name)
    return [sorted(batches[d]) for d in sorted(batches)]
