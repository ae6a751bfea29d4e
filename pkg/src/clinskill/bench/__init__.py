"""Compositional question generation over derived concept tables."""

from clinskill.bench.derive import DerivationError, materialize
from clinskill.bench.extract import compile_extractor, extract_ground_truth, truth_table
from clinskill.bench.generate import (
    QAInstance,
    generate_benchmark,
    generate_instances,
    read_instances,
    reference_type_mix,
    type_census,
    variant_quotas,
    write_instances,
)
from clinskill.bench.variants import (
    QUESTION_TYPES,
    ConfigError,
    Extractor,
    QuestionVariant,
    TemplatePack,
    bind_template,
    instantiate_variants,
    load_template_pack,
    parse_template_pack,
)

__all__ = [
    "QUESTION_TYPES",
    "ConfigError",
    "DerivationError",
    "Extractor",
    "QAInstance",
    "QuestionVariant",
    "TemplatePack",
    "bind_template",
    "compile_extractor",
    "extract_ground_truth",
    "generate_benchmark",
    "generate_instances",
    "instantiate_variants",
    "load_template_pack",
    "materialize",
    "parse_template_pack",
    "read_instances",
    "reference_type_mix",
    "truth_table",
    "type_census",
    "variant_quotas",
    "write_instances",
]
