from clinskill.graph.dag import (
    ConceptGraph,
    ConceptNode,
    CycleError,
    assign_levels,
    build_graph,
    infer_condition_edges,
    topological_batches,
)
from clinskill.graph.manifest import ManifestError, export_graph, load_graph, load_manifest
from clinskill.graph.sqldeps import Catalog, DependencySet, parse_sql_dependencies

__all__ = [
    "Catalog",
    "ConceptGraph",
    "ConceptNode",
    "CycleError",
    "DependencySet",
    "ManifestError",
    "assign_levels",
    "build_graph",
    "export_graph",
    "infer_condition_edges",
    "load_graph",
    "load_manifest",
    "parse_sql_dependencies",
    "topological_batches",
]
