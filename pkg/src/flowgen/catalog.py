"""Stage catalog: the operator vocabulary a flow can be built from.

A catalog lists every stage (transform or connector) with its description,
lookup synonyms, input/output cardinality bounds, and property schema.
Catalogs are stored as a single JSON object with a ``stages`` array; loading
re-serializes bit-exactly for the shipped fixtures so they can double as
round-trip regression data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import condexpr

__all__ = [
    "CardinalityBound",
    "ValueType",
    "PropertyDef",
    "StageDef",
    "Catalog",
    "Violation",
    "CatalogError",
    "CatalogParseError",
    "CatalogValidationError",
    "load_catalog",
    "parse_catalog",
    "dump_catalog",
    "validate_catalog",
    "lookup_stage",
]

VALUE_KINDS = ("string", "integer", "decimal", "boolean", "enum")


class CatalogError(Exception):
    pass


class CatalogParseError(CatalogError):
    def __init__(self, message: str, locus: str = ""):
        super().__init__(f"{locus}: {message}" if locus else message)
        self.locus = locus


class CatalogValidationError(CatalogError):
    def __init__(self, violations: list["Violation"]):
        lines = "\n".join(f"  - {v}" for v in violations)
        super().__init__(f"catalog failed validation:\n{lines}")
        self.violations = violations


@dataclass(frozen=True)
class CardinalityBound:
    """Inclusive link-count bounds; ``max=None`` means unbounded."""

    min: int
    max: int | None


@dataclass(frozen=True)
class ValueType:
    kind: str
    variants: tuple[str, ...] = ()  # non-empty iff kind == "enum"

    @classmethod
    def enum_of(cls, variants: tuple[str, ...] | list[str]) -> "ValueType":
        return cls("enum", tuple(variants))


STRING = ValueType("string")
INTEGER = ValueType("integer")
DECIMAL = ValueType("decimal")
BOOLEAN = ValueType("boolean")


@dataclass(frozen=True)
class PropertyDef:
    name: str
    description: str
    value_type: ValueType
    default: str | None = None
    availability: str | None = None  # condexpr source over sibling properties


@dataclass(frozen=True)
class StageDef:
    name: str
    description: str
    synonyms: tuple[str, ...]
    is_connector: bool
    inputs: CardinalityBound
    outputs: CardinalityBound
    properties: tuple[PropertyDef, ...]

    def find_property(self, name: str) -> PropertyDef | None:
        """Case-insensitive property lookup returning the declared definition."""
        lowered = name.lower()
        for prop in self.properties:
            if prop.name.lower() == lowered:
                return prop
        return None


@dataclass
class Violation:
    stage: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.stage}.{self.field}: {self.message}"


@dataclass
class Catalog:
    stages: dict[str, StageDef]
    # lowercase keyword -> stage names it identifies (names plus synonyms)
    synonym_index: dict[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.synonym_index:
            index: dict[str, set[str]] = {}
            for stage in self.stages.values():
                index.setdefault(stage.name.lower(), set()).add(stage.name)
                for syn in stage.synonyms:
                    index.setdefault(syn.lower(), set()).add(stage.name)
            self.synonym_index = {k: frozenset(v) for k, v in index.items()}


def lookup_stage(catalog: Catalog, name: str) -> StageDef | None:
    return catalog.stages.get(name)


# --- parsing ---------------------------------------------------------------


def _expect(value: object, typ: type, locus: str) -> object:
    if typ is bool:
        if not isinstance(value, bool):
            raise CatalogParseError(f"expected boolean, got {type(value).__name__}", locus)
    elif typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise CatalogParseError(f"expected integer, got {type(value).__name__}", locus)
    elif not isinstance(value, typ):
        raise CatalogParseError(f"expected {typ.__name__}, got {type(value).__name__}", locus)
    return value


def _parse_bound(raw: object, locus: str) -> CardinalityBound:
    if not isinstance(raw, dict):
        raise CatalogParseError("expected object with min/max", locus)
    bound_min = _expect(raw.get("min"), int, f"{locus}.min")
    raw_max = raw.get("max")
    if raw_max == "unbounded":
        bound_max: int | None = None
    else:
        bound_max = _expect(raw_max, int, f"{locus}.max")
    return CardinalityBound(bound_min, bound_max)  # type: ignore[arg-type]


def _parse_value_type(raw: object, locus: str) -> ValueType:
    if isinstance(raw, str):
        if raw not in ("string", "integer", "decimal", "boolean"):
            raise CatalogParseError(f"unknown value type {raw!r}", locus)
        return ValueType(raw)
    if isinstance(raw, dict) and set(raw) == {"enum"} and isinstance(raw["enum"], list):
        variants = tuple(_expect(v, str, f"{locus}.enum") for v in raw["enum"])
        return ValueType.enum_of(variants)  # type: ignore[arg-type]
    raise CatalogParseError('expected a type name or {"enum": [...]}', locus)


def _parse_property(raw: object, locus: str) -> PropertyDef:
    if not isinstance(raw, dict):
        raise CatalogParseError("expected property object", locus)
    return PropertyDef(
        name=_expect(raw.get("name"), str, f"{locus}.name"),  # type: ignore[arg-type]
        description=_expect(raw.get("description"), str, f"{locus}.description"),  # type: ignore[arg-type]
        value_type=_parse_value_type(raw.get("type"), f"{locus}.type"),
        default=None if raw.get("default") is None else str(raw["default"]),
        availability=(
            None
            if raw.get("availability") is None
            else _expect(raw["availability"], str, f"{locus}.availability")  # type: ignore[arg-type]
        ),
    )


def _parse_stage(raw: object, locus: str) -> StageDef:
    if not isinstance(raw, dict):
        raise CatalogParseError("expected stage object", locus)
    synonyms = raw.get("synonyms", [])
    if not isinstance(synonyms, list):
        raise CatalogParseError("expected list", f"{locus}.synonyms")
    properties = raw.get("properties", [])
    if not isinstance(properties, list):
        raise CatalogParseError("expected list", f"{locus}.properties")
    return StageDef(
        name=_expect(raw.get("name"), str, f"{locus}.name"),  # type: ignore[arg-type]
        description=_expect(raw.get("description"), str, f"{locus}.description"),  # type: ignore[arg-type]
        synonyms=tuple(_expect(s, str, f"{locus}.synonyms[{i}]") for i, s in enumerate(synonyms)),  # type: ignore[misc]
        is_connector=_expect(raw.get("is_connector", False), bool, f"{locus}.is_connector"),  # type: ignore[arg-type]
        inputs=_parse_bound(raw.get("inputs"), f"{locus}.inputs"),
        outputs=_parse_bound(raw.get("outputs"), f"{locus}.outputs"),
        properties=tuple(
            _parse_property(p, f"{locus}.properties[{i}]") for i, p in enumerate(properties)
        ),
    )


def _stage_violations(stage: StageDef) -> list[Violation]:
    out: list[Violation] = []
    for label, bound in (("inputs", stage.inputs), ("outputs", stage.outputs)):
        if bound.min < 0:
            out.append(Violation(stage.name, label, f"min {bound.min} is negative"))
        if bound.max is not None and bound.min > bound.max:
            out.append(Violation(stage.name, label, f"min {bound.min} exceeds max {bound.max}"))
    if not stage.description:
        out.append(Violation(stage.name, "description", "description is empty"))
    seen: set[str] = set()
    declared = {p.name for p in stage.properties}
    for prop in stage.properties:
        locus = f"properties[{prop.name}]"
        if prop.name in seen:
            out.append(Violation(stage.name, locus, "duplicate property name"))
        seen.add(prop.name)
        if prop.value_type.kind == "enum" and not prop.value_type.variants:
            out.append(Violation(stage.name, locus, "enum type with no variants"))
        if prop.availability is not None:
            try:
                expr = condexpr.parse_condition(prop.availability)
            except condexpr.ConditionSyntaxError as exc:
                out.append(Violation(stage.name, locus, f"availability does not parse: {exc}"))
            else:
                for path in _referenced_paths(expr):
                    if path not in declared:
                        out.append(
                            Violation(
                                stage.name,
                                locus,
                                f"availability references unknown property {path!r}",
                            )
                        )
    return out


def _referenced_paths(expr: condexpr.ConditionExpr) -> set[str]:
    if isinstance(expr, condexpr.PropertyRef):
        return {expr.path}
    if isinstance(expr, condexpr.Comparison):
        return {expr.ref.path}
    if isinstance(expr, condexpr.Defined):
        return {expr.path}
    if isinstance(expr, condexpr.Not):
        return _referenced_paths(expr.operand)
    if isinstance(expr, (condexpr.And, condexpr.Or)):
        return _referenced_paths(expr.left) | _referenced_paths(expr.right)
    return set()


def validate_catalog(catalog: Catalog) -> list[Violation]:
    """Check semantic invariants; returns all violations, mutating nothing."""
    out: list[Violation] = []
    for stage in catalog.stages.values():
        out.extend(_stage_violations(stage))
    return out


def parse_catalog(text: str) -> Catalog:
    """Parse and validate a catalog document from JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogParseError(f"malformed JSON: {exc}", f"line {exc.lineno}") from exc
    if not isinstance(doc, dict) or "stages" not in doc:
        raise CatalogParseError('expected an object with a "stages" array')
    raw_stages = doc["stages"]
    if not isinstance(raw_stages, list):
        raise CatalogParseError("expected list", "stages")
    stages = [_parse_stage(raw, f"stages[{i}]") for i, raw in enumerate(raw_stages)]

    violations: list[Violation] = []
    seen: set[str] = set()
    for stage in stages:
        if stage.name in seen:
            violations.append(Violation(stage.name, "name", "duplicate stage name"))
        seen.add(stage.name)
        violations.extend(_stage_violations(stage))
    if violations:
        raise CatalogValidationError(violations)
    return Catalog({s.name: s for s in stages})


def load_catalog(path: str | Path) -> Catalog:
    return parse_catalog(Path(path).read_text(encoding="utf-8"))


# --- serialization ---------------------------------------------------------


def _bound_doc(bound: CardinalityBound) -> dict:
    return {"min": bound.min, "max": "unbounded" if bound.max is None else bound.max}


def _type_doc(vt: ValueType) -> object:
    if vt.kind == "enum":
        return {"enum": list(vt.variants)}
    return vt.kind


def _property_doc(prop: PropertyDef) -> dict:
    doc: dict = {
        "name": prop.name,
        "description": prop.description,
        "type": _type_doc(prop.value_type),
    }
    if prop.default is not None:
        doc["default"] = prop.default
    if prop.availability is not None:
        doc["availability"] = prop.availability
    return doc


def dump_catalog(catalog: Catalog) -> str:
    """Serialize to the canonical JSON form (stable key order, 2-space indent)."""
    doc = {
        "stages": [
            {
                "name": s.name,
                "description": s.description,
                "synonyms": list(s.synonyms),
                "is_connector": s.is_connector,
                "inputs": _bound_doc(s.inputs),
                "outputs": _bound_doc(s.outputs),
                "properties": [_property_doc(p) for p in s.properties],
            }
            for s in catalog.stages.values()
        ]
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
