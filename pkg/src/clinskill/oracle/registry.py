"""Loading and validation of the surveillance finding registry."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from clinskill.ehr import schema

FAMILIES = (
    "infection",
    "sepsis",
    "renal",
    "respiratory",
    "hemodynamic",
    "neurologic",
    "metabolic",
    "coagulation",
)
SEMANTICS = ("latched", "interval_active", "windowed", "composite")
TIERS = ("none", "suspected", "alert")
REGISTRY_SIZE = 25

OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}
# signals computed from several items, with the unit they are expressed in
DERIVED_SIGNALS = {"gcs_total": "points", "pf_ratio": "mmHg"}


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdTier:
    op: str
    value: float
    tier: str

    def holds(self, x: float) -> bool:
        return OPS[self.op](x, self.value)


@dataclass(frozen=True)
class FindingDefinition:
    finding_id: str
    family: str
    semantics: str
    trigger: dict[str, Any] = field(hash=False)
    tiers: tuple[ThresholdTier, ...] = ()
    fixed_tier: str | None = None
    staleness_window: float | None = None
    latch: bool = False
    requires: tuple[str, ...] = ()

    @property
    def kind(self) -> str:
        return self.trigger["kind"]

    @property
    def is_latched(self) -> bool:
        return self.semantics == "latched" or self.latch

    def alert_grade(self) -> dict[str, bool]:
        """Per threshold tier, whether it is alert grade."""
        if self.tiers:
            return {f"{t.op}{t.value:g}": t.tier == "alert" for t in self.tiers}
        return {"active": self.fixed_tier == "alert"}

    def tier_for(self, value: float) -> str:
        best = "none"
        for t in self.tiers:
            if t.holds(value) and TIERS.index(t.tier) > TIERS.index(best):
                best = t.tier
        return best


@dataclass(frozen=True)
class Registry:
    findings: tuple[FindingDefinition, ...]

    def __iter__(self):
        return iter(self.findings)

    def __len__(self) -> int:
        return len(self.findings)

    def __getitem__(self, finding_id: str) -> FindingDefinition:
        for f in self.findings:
            if f.finding_id == finding_id:
                return f
        raise KeyError(finding_id)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(f.finding_id for f in self.findings)

    def family_of(self, finding_id: str) -> str:
        return self[finding_id].family

    def digest_tier(self, signal: int | str, value: float) -> str:
        """Highest tier any threshold finding on ``signal`` assigns to ``value``."""
        best = "none"
        for f in self.findings:
            if f.kind == "threshold" and str(f.trigger["signal"]) == str(signal):
                t = f.tier_for(value)
                if TIERS.index(t) > TIERS.index(best):
                    best = t
        return best


def _check_unit(fid: str, item: Any, unit: str | None) -> None:
    if unit is None:
        raise RegistryError(f"{fid}: trigger must state a unit")
    if isinstance(item, str):
        expected = DERIVED_SIGNALS.get(item)
        if expected is None:
            raise RegistryError(f"{fid}: unknown signal {item!r}")
    else:
        entry = schema.DICTIONARY.get(int(item))
        if entry is None:
            raise RegistryError(f"{fid}: item {item} not in dictionary")
        expected = entry.unit
    if expected != unit:
        raise RegistryError(f"{fid}: trigger unit {unit!r} does not match dictionary unit {expected!r}")


def _parse(raw: dict[str, Any]) -> FindingDefinition:
    fid = raw["id"]
    family, sem = raw["family"], raw["semantics"]
    if family not in FAMILIES:
        raise RegistryError(f"{fid}: unknown family {family!r}")
    if sem not in SEMANTICS:
        raise RegistryError(f"{fid}: unknown semantics {sem!r}")
    trigger = dict(raw["trigger"])
    tiers = tuple(
        ThresholdTier(t["op"], float(t["value"]), t["tier"]) for t in trigger.pop("tiers", [])
    )
    for t in tiers:
        if t.op not in OPS or t.tier not in TIERS[1:]:
            raise RegistryError(f"{fid}: bad tier {t}")
    fixed = raw.get("tier")
    if fixed is not None and fixed not in TIERS[1:]:
        raise RegistryError(f"{fid}: bad tier {fixed!r}")
    if not tiers and fixed is None:
        raise RegistryError(f"{fid}: needs tiers or a fixed tier")
    window = raw.get("window_hours")
    if sem == "windowed" and not (window and float(window) > 0):
        raise RegistryError(f"{fid}: windowed findings need window_hours > 0")
    if trigger["kind"] == "threshold":
        _check_unit(fid, trigger["signal"], trigger.get("unit"))
    elif trigger["kind"] == "text":
        for item in trigger["items"]:
            _check_unit(fid, item, trigger.get("unit"))
    elif trigger["kind"] in ("urine_rate", "septic_shock"):
        key = "urine_item" if trigger["kind"] == "urine_rate" else "lactate_item"
        _check_unit(fid, trigger[key], trigger.get("unit"))
    elif trigger["kind"] == "gcs_drop":
        _check_unit(fid, "gcs_total", trigger.get("unit"))
    elif trigger["kind"] == "interval":
        for item in trigger["items"]:
            if int(item) not in schema.DICTIONARY:
                raise RegistryError(f"{fid}: item {item} not in dictionary")
    return FindingDefinition(
        finding_id=fid,
        family=family,
        semantics=sem,
        trigger=trigger,
        tiers=tiers,
        fixed_tier=fixed,
        staleness_window=float(window) if window is not None else None,
        latch=bool(raw.get("latch", False)),
        requires=tuple(raw.get("requires", ())),
    )


def parse_registry(text: str, expected_size: int | None = REGISTRY_SIZE) -> Registry:
    data = yaml.safe_load(text)
    findings = tuple(_parse(r) for r in data["findings"])
    ids = [f.finding_id for f in findings]
    if len(set(ids)) != len(ids):
        raise RegistryError("duplicate finding ids")
    for f in findings:
        for dep in f.requires:
            if dep not in ids:
                raise RegistryError(f"{f.finding_id}: requires unknown finding {dep!r}")
    if expected_size is not None:
        if len(findings) != expected_size:
            raise RegistryError(f"registry holds {len(findings)} findings, expected {expected_size}")
        missing = set(FAMILIES) - {f.family for f in findings}
        if missing:
            raise RegistryError(f"families without findings: {sorted(missing)}")
    return Registry(_dependency_order(findings))


def _dependency_order(findings: tuple[FindingDefinition, ...]) -> tuple[FindingDefinition, ...]:
    """Stable order in which every finding follows the findings it requires."""
    by_id = {f.finding_id: f for f in findings}
    out: list[FindingDefinition] = []
    state: dict[str, int] = {}

    def visit(fid: str) -> None:
        if state.get(fid) == 2:
            return
        if state.get(fid) == 1:
            raise RegistryError(f"circular requires through {fid!r}")
        state[fid] = 1
        for dep in by_id[fid].requires:
            visit(dep)
        state[fid] = 2
        out.append(by_id[fid])

    for f in findings:
        visit(f.finding_id)
    return tuple(out)


def load_registry(path: str | Path | None = None) -> Registry:
    if path is None:
        text = resources.files("clinskill.data").joinpath("registry.yaml").read_text()
    else:
        text = Path(path).read_text()
    return parse_registry(text)
