"""Question variants: template packs, extractor specs and their binding."""

from __future__ import annotations

import configparser
import logging
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from clinskill.graph.dag import ConceptNode
from clinskill.graph.manifest import default_manifest_dir, read_ini

logger = logging.getLogger(__name__)

QUESTION_TYPES = (
    "comparative",
    "aggregation",
    "temporal",
    "direct",
    "count",
    "derived",
    "ratio",
    "arithmetic",
)
# instance counts per type in the reference benchmark of 63,000 questions
REFERENCE_TYPE_MIX = {
    "comparative": 16800,
    "aggregation": 15600,
    "temporal": 14400,
    "direct": 6000,
    "count": 4200,
    "derived": 3400,
    "ratio": 1800,
    "arithmetic": 800,
}
OPS = (
    "max",
    "min",
    "mean",
    "sum",
    "first",
    "last",
    "count",
    "count_distinct",
    "exists",
    "value",
    "delta",
    "max_diff",
    "max_ratio",
    "hours_to_first",
    "hours_between",
    "duration_hours",
)
STAY_FIELDS = ("stay_id", "subject_id", "hadm_id")
DEFAULT_PREFIX = "For ICU stay {stay_id} (subject {subject_id}, admission {hadm_id}): "
SCOPES = {None: "during the ICU stay", "first_day": "on the first ICU day"}
_POST = re.compile(r"^(minus|below|scale):(-?\d+(?:\.\d+)?(?:e-?\d+)?)$|^(decade|ratio|difference)$")


class ConfigError(ValueError):
    """A template pack or variant definition that cannot be bound."""


@dataclass(frozen=True)
class Extractor:
    op: str
    column: str | None = None
    column_b: str | None = None
    op_b: str | None = None
    time: str | None = None
    end: str = "endtime"
    filter: str | None = None
    where: str | None = None
    post: str | None = None
    default: float | None = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ConfigError(f"unknown extractor op {self.op!r}")
        if self.filter not in SCOPES:
            raise ConfigError(f"unknown filter {self.filter!r}")
        if self.post is not None and not _POST.match(self.post):
            raise ConfigError(f"unknown post-op {self.post!r}")
        needs_col = self.op not in ("count", "exists", "duration_hours")
        if needs_col and not self.column:
            raise ConfigError(f"op {self.op!r} needs a column")
        needs_b = self.op in ("hours_between", "max_diff", "max_ratio") or self.post in ("ratio", "difference")
        if needs_b and not self.column_b:
            raise ConfigError(f"op {self.op!r} with post {self.post!r} needs column_b")

    @property
    def categorical(self) -> bool:
        return self.op == "exists"


@dataclass(frozen=True)
class QuestionVariant:
    concept: str
    key: str
    attribute: str
    question_type: str
    template: str
    extractor: Extractor
    unit: str = ""
    params: Mapping[str, str] = field(default_factory=dict, hash=False)

    @property
    def variant_id(self) -> str:
        return f"{self.concept}.{self.key}"

    def question_for(self, stay_id: int, subject_id: int, hadm_id: int) -> str:
        return self.template.format(stay_id=stay_id, subject_id=subject_id, hadm_id=hadm_id)


@dataclass(frozen=True)
class TemplatePack:
    templates: Mapping[str, Mapping[str, str]]
    prefix: str = DEFAULT_PREFIX

    def get(self, ref: str) -> tuple[str, str]:
        """``type.name`` to (question type, template text)."""
        try:
            qtype, name = ref.split(".", 1)
            return qtype, self.templates[qtype][name]
        except (ValueError, KeyError):
            raise ConfigError(f"template {ref!r} is not in the pack") from None

    def types(self) -> set[str]:
        return {t for t, group in self.templates.items() if group}


def parse_template_pack(text: str) -> TemplatePack:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    prefix = DEFAULT_PREFIX
    groups = {}
    for section in cp.sections():
        if section == "pack":
            prefix = cp["pack"].get("prefix", DEFAULT_PREFIX)
            continue
        if section not in QUESTION_TYPES:
            raise ConfigError(f"unknown question type section [{section}]")
        groups[section] = dict(cp[section])
    return TemplatePack(groups, prefix)


def load_template_pack(path: str | Path | None = None) -> TemplatePack:
    if path is None:
        text = resources.files("clinskill.data").joinpath("templates.ini").read_text()
    else:
        text = Path(path).read_text()
    return parse_template_pack(text)


def bind_template(template: str, values: Mapping[str, object]) -> str:
    """Fill every placeholder except stay identifiers; unbound names raise."""
    out = []
    for literal, name, spec, conv in string.Formatter().parse(template):
        out.append(literal.replace("{", "{{").replace("}", "}}"))
        if name is None:
            continue
        if name in STAY_FIELDS:
            out.append("{" + name + "}")
        elif name in values and values[name] not in (None, ""):
            out.append(str(values[name]).replace("{", "{{").replace("}", "}}"))
        else:
            raise ConfigError(f"placeholder {{{name}}} is not bound")
    return "".join(out)


def _num(text: str | None) -> float | None:
    if text is None or text == "":
        return None
    return float(text)


def _fmt_threshold(text: str) -> str:
    v = float(text)
    return f"{v:g}"


def read_variant_specs(concept: str, manifest_dir: str | Path | None = None) -> dict[str, dict[str, str]]:
    root = Path(manifest_dir) if manifest_dir is not None else default_manifest_dir()
    path = root / concept / "variants"
    if not path.exists():
        return {}
    cp = read_ini(path)
    return {s: dict(cp[s]) for s in cp.sections()}


def instantiate_variants(
    concept: ConceptNode | str,
    template_pack: TemplatePack,
    specs: Mapping[str, Mapping[str, str]] | None = None,
    manifest_dir: str | Path | None = None,
) -> list[QuestionVariant]:
    """Bind each declared variant of ``concept`` to its template."""
    name = concept if isinstance(concept, str) else concept.name
    if specs is None:
        specs = read_variant_specs(name, manifest_dir)
    declared = {s.get("type") for s in specs.values()}
    missing = {t for t in declared if t not in template_pack.types()}
    if missing:
        raise ConfigError(f"{name}: template pack has no templates for types {sorted(missing)}")
    out = []
    for key, spec in specs.items():
        qtype = spec.get("type")
        if qtype not in QUESTION_TYPES:
            raise ConfigError(f"{name}.{key}: unknown question type {qtype!r}")
        ref = spec.get("template") or f"{qtype}.{spec.get('op')}"
        ttype, text = template_pack.get(ref)
        if ttype != qtype:
            raise ConfigError(f"{name}.{key}: template {ref!r} belongs to type {ttype!r}, not {qtype!r}")
        try:
            ex = Extractor(
                op=spec.get("op", ""),
                column=spec.get("column") or None,
                column_b=spec.get("column_b") or None,
                op_b=spec.get("op_b") or None,
                time=spec.get("time") or None,
                end=spec.get("end") or "endtime",
                filter=spec.get("filter") or None,
                where=spec.get("where") or None,
                post=spec.get("post") or None,
                default=_num(spec.get("default")),
            )
        except ConfigError as exc:
            raise ConfigError(f"{name}.{key}: {exc}") from None
        values = dict(spec)
        values["scope"] = SCOPES[ex.filter]
        if "threshold" in values:
            values["threshold"] = _fmt_threshold(values["threshold"])
        question = bind_template(template_pack.prefix + text, values)
        out.append(
            QuestionVariant(
                concept=name,
                key=key,
                attribute=spec.get("attribute") or ex.column or key,
                question_type=qtype,
                template=question,
                extractor=ex,
                unit=spec.get("unit", ""),
                params={k: v for k, v in spec.items()},
            )
        )
    return out
