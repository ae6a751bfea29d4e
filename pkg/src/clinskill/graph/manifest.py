"""Reading the on-disk concept manifest and exporting the resulting graph."""

from __future__ import annotations

import configparser
import logging
from importlib import resources
from pathlib import Path
from typing import Callable

from clinskill.graph.dag import ConceptGraph, ConceptNode, assign_levels, build_graph

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


def default_manifest_dir() -> Path:
    return Path(str(resources.files("clinskill.data").joinpath("manifest")))


def read_ini(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    return cp


def read_concept(directory: Path, spec_text: Callable[[str], str | None] | None = None) -> ConceptNode:
    meta_path = directory / "meta"
    if not meta_path.exists():
        raise ManifestError(f"{directory}: missing meta file")
    meta = read_ini(meta_path)
    if "concept" not in meta:
        raise ManifestError(f"{meta_path}: missing [concept] section")
    m = meta["concept"]
    name = m.get("name", directory.name)
    if name != directory.name:
        raise ManifestError(f"{directory}: meta name {name!r} does not match directory")
    kind = m.get("kind", "derived")
    sql = None
    sql_path = directory / "definition.sql"
    if sql_path.exists():
        sql = sql_path.read_text()
    keywords = tuple(k.strip() for k in m.get("keywords", "").split(",") if k.strip())
    guideline = m.get("guideline_name") or None
    text = spec_text(guideline) if (spec_text and guideline) else None
    try:
        return ConceptNode(
            name=name,
            kind=kind,
            sql_definition=sql,
            guideline_name=guideline,
            description=m.get("description", ""),
            keywords=keywords,
            spec_text=text,
        )
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc


def load_manifest(
    path: str | Path | None = None, spec_text: Callable[[str], str | None] | None = None
) -> list[ConceptNode]:
    """All concepts under ``path`` (one sub-directory each), sorted by name.

    ``spec_text`` maps a guideline name to its full text; condition nodes use
    it to infer their inputs.
    """
    root = Path(path) if path is not None else default_manifest_dir()
    if not root.is_dir():
        raise ManifestError(f"manifest directory {root} does not exist")
    nodes = [read_concept(d, spec_text) for d in sorted(root.iterdir()) if d.is_dir() and not d.name.startswith((".", "_"))]
    if not nodes:
        raise ManifestError(f"manifest directory {root} holds no concepts")
    return nodes


def load_graph(
    path: str | Path | None = None,
    spec_text: Callable[[str], str | None] | None = None,
    guidelines: str | Path | None = None,
) -> ConceptGraph:
    """Manifest to leveled graph in one call.

    Condition texts come from ``spec_text`` when given, else from the
    guideline corpus at ``guidelines`` (the bundled one by default).
    """
    if spec_text is None:
        from clinskill.guidelines.store import GuidelineStore

        spec_text = GuidelineStore.load(guidelines).spec_text
    return assign_levels(build_graph(load_manifest(path, spec_text)))


def export_graph(graph: ConceptGraph, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dot = out / "concept_graph.dot"
    adj = out / "concept_graph.adj"
    dot.write_text(graph.to_dot())
    adj.write_text(graph.to_adjacency())
    return dot, adj
