"""Per-node property prediction and validation.

The model proposes ``name = value`` lines from a node's sub-utterance; every
assignment then runs a four-step gauntlet, each rejection tagged with the
step that fired:

1. the name must exist in the stage's schema (``rejected_unknown_name``),
2. the raw value must coerce to the declared type (``rejected_type``),
3. the property's availability condition must hold against the assignments
   that survived steps 1–2 (``rejected_dependency``),
4. registry-bound values — connections, schemas, tables — must name
   something that actually exists (``rejected_external``).

Dependency evaluation is single-pass by default: the environment is fixed to
the step-1–2 survivors, so a later external rejection does not retroactively
re-reject a dependent sibling. An optional fixpoint mode re-evaluates until
stable for callers that prefer cascading.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, replace
from decimal import Decimal
from pathlib import Path
from typing import Iterable

from . import fixture_path
from .catalog import PropertyDef, StageDef, ValueType
from .condexpr import eval_condition, parse_condition
from .edgepred import NodeInstance
from .llm import CompletionParams, CompletionProvider, load_template, render_prompt

__all__ = [
    "ACCEPTED",
    "REJECTED_UNKNOWN_NAME",
    "REJECTED_TYPE",
    "REJECTED_DEPENDENCY",
    "REJECTED_EXTERNAL",
    "PropertyAssignment",
    "ExternalRegistry",
    "PropMetrics",
    "RegistryError",
    "predict_properties",
    "coerce",
    "canonical_value",
    "validate",
    "load_registry",
    "prop_metrics",
]

ACCEPTED = "accepted"
REJECTED_UNKNOWN_NAME = "rejected_unknown_name"
REJECTED_TYPE = "rejected_type"
REJECTED_DEPENDENCY = "rejected_dependency"
REJECTED_EXTERNAL = "rejected_external"

REGISTRY_KINDS = ("connection", "schema", "table")


class RegistryError(Exception):
    pass


@dataclass
class PropertyAssignment:
    name: str
    raw_value: str
    coerced: object | None = None
    status: str | None = None  # None until validated; exactly one status after
    detail: str = ""


@dataclass
class ExternalRegistry:
    """Known external names per kind, and which stage properties must use them."""

    kinds: dict[str, frozenset[str]]
    bindings: dict[str, dict[str, str]]  # stage -> property name -> kind


def load_registry(path: str | Path) -> ExternalRegistry:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    kinds_raw = raw.get("kinds")
    bindings_raw = raw.get("bindings")
    if not isinstance(kinds_raw, dict) or not isinstance(bindings_raw, dict):
        raise RegistryError(f"{path}: expected kinds and bindings objects")
    kinds = {}
    for kind, names in kinds_raw.items():
        if kind not in REGISTRY_KINDS:
            raise RegistryError(f"{path}: unknown registry kind {kind!r}")
        kinds[kind] = frozenset(str(n) for n in names)
    bindings: dict[str, dict[str, str]] = {}
    for stage, props in bindings_raw.items():
        bindings[stage] = {}
        for prop, kind in props.items():
            if kind not in kinds:
                raise RegistryError(f"{path}: binding {stage}/{prop} uses undeclared kind {kind!r}")
            bindings[stage][prop] = kind
    return ExternalRegistry(kinds=kinds, bindings=bindings)


# --- prediction -----------------------------------------------------------------


def predict_properties(
    node: NodeInstance,
    stage: StageDef,
    provider: CompletionProvider,
    usage=None,
    trace: list[dict] | None = None,
    params: CompletionParams | None = None,
) -> list[PropertyAssignment]:
    """Ask the model for ``name = value`` lines; zero parseable lines is fine."""
    template = load_template(fixture_path("templates", "properties.txt"), family="plain")
    prop_lines = "\n".join(f"{p.name}: {p.description}" for p in stage.properties)
    prompt = render_prompt(
        template,
        {
            "stage": stage.name,
            "properties": prop_lines,
            "sub_utterance": node.sub_utterance,
        },
    )
    result = provider.complete(prompt, params or CompletionParams())
    if usage is not None:
        usage.add(prompt.token_estimate, result.completion_tokens)
    if trace is not None:
        trace.append(
            {
                "event": "llm_call",
                "purpose": "properties",
                "node": node.unique_name,
                "prompt_tokens": prompt.token_estimate,
                "completion_tokens": result.completion_tokens,
            }
        )
    out: list[PropertyAssignment] = []
    for line in result.text.splitlines():
        if "=" not in line:
            continue
        name, _, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if name:
            out.append(PropertyAssignment(name=name, raw_value=value))
    return out


# --- coercion -------------------------------------------------------------------

_INT_RE = re.compile(r"[+-]?\d+$")
_DECIMAL_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)$")
_BOOLEANS = {
    "true": True,
    "yes": True,
    "on": True,
    "false": False,
    "no": False,
    "off": False,
}


def _strip_quotes(raw: str) -> str:
    s = raw.strip()
    while len(s) >= 2 and s[0] == s[-1] and s[0] in ("'", '"'):
        s = s[1:-1].strip()
    return s


def coerce(raw: str, value_type: ValueType) -> object | None:
    """Coerce a raw string to the declared type; ``None`` signals failure.

    Total and deterministic; re-coercing a canonical form is a fixpoint.
    """
    if value_type.kind == "string":
        return _strip_quotes(raw)
    s = raw.strip()
    if value_type.kind == "integer":
        return int(s) if _INT_RE.fullmatch(s) else None
    if value_type.kind == "decimal":
        return Decimal(s) if _DECIMAL_RE.fullmatch(s) else None
    if value_type.kind == "boolean":
        return _BOOLEANS.get(s.lower())
    if value_type.kind == "enum":
        lowered = s.lower()
        for variant in value_type.variants:
            if variant.lower() == lowered:
                return variant  # canonicalized to declared casing
        return None
    raise AssertionError(f"unknown value type {value_type.kind!r}")


def canonical_value(coerced: object) -> str:
    """Stable text form of a coerced value, used for emission and scoring."""
    if isinstance(coerced, bool):
        return "true" if coerced else "false"
    return str(coerced)


# --- validation ------------------------------------------------------------------


def validate(
    assignments: list[PropertyAssignment],
    stage: StageDef,
    registry: ExternalRegistry | None = None,
    fixpoint: bool = False,
) -> list[PropertyAssignment]:
    """Run the four validation steps; returns statused copies in input order.

    Property names match case-insensitively and are canonicalized to the
    declared spelling. With ``fixpoint=True`` the dependency step re-runs
    with dependency-rejected assignments removed from the environment until
    stable.
    """
    out: list[PropertyAssignment] = []
    for a in assignments:
        prop = stage.find_property(a.name)
        if prop is None:
            out.append(
                replace(a, status=REJECTED_UNKNOWN_NAME, detail=f"{stage.name} has no such property")
            )
            continue
        coerced = coerce(a.raw_value, prop.value_type)
        if coerced is None:
            out.append(
                replace(
                    a,
                    name=prop.name,
                    status=REJECTED_TYPE,
                    detail=f"{a.raw_value!r} is not a valid {prop.value_type.kind}",
                )
            )
            continue
        out.append(replace(a, name=prop.name, coerced=coerced, status=None))

    # dependency environment: assignments that survived steps 1-2 (first
    # occurrence wins on duplicate names)
    def build_env(items: list[PropertyAssignment]) -> dict[str, object]:
        env: dict[str, object] = {}
        for a in items:
            if a.status is None and a.name not in env:
                env[a.name] = a.coerced
        return env

    while True:
        env = build_env(out)
        changed = False
        for i, a in enumerate(out):
            if a.status is not None:
                continue
            prop = stage.find_property(a.name)
            assert prop is not None
            if prop.availability is None:
                continue
            if not eval_condition(parse_condition(prop.availability), env):
                out[i] = replace(
                    a,
                    status=REJECTED_DEPENDENCY,
                    detail=f"availability not met: {prop.availability}",
                )
                changed = True
        if not (fixpoint and changed):
            break

    bindings = registry.bindings.get(stage.name, {}) if registry else {}
    for i, a in enumerate(out):
        if a.status is not None:
            continue
        kind = bindings.get(a.name)
        if kind is not None:
            value = canonical_value(a.coerced)
            if value not in registry.kinds.get(kind, frozenset()):  # type: ignore[union-attr]
                out[i] = replace(
                    a,
                    status=REJECTED_EXTERNAL,
                    detail=f"{value!r} is not a registered {kind}",
                )
                continue
        out[i] = replace(a, status=ACCEPTED)
    return out


# --- metrics --------------------------------------------------------------------

PropTriple = tuple[str, str, str]  # (node unique_name, property name, canonical value)


@dataclass
class PropMetrics:
    precision: float
    recall: float
    f1: float
    matches: int = 0
    predicted: int = 0
    gold: int = 0


def prop_metrics(predicted: Iterable[PropTriple], gold: Iterable[PropTriple]) -> PropMetrics:
    """Set-match on (node, property, value) triples.

    Empty-versus-empty counts as perfect; empty-versus-nonempty as zero.
    F1 is the harmonic mean, zero when both components are zero.
    """
    pred_counts = Counter(predicted)
    gold_counts = Counter(gold)
    matches = sum((pred_counts & gold_counts).values())
    n_pred = sum(pred_counts.values())
    n_gold = sum(gold_counts.values())
    if n_pred == 0:
        precision = 1.0 if n_gold == 0 else 0.0
    else:
        precision = matches / n_pred
    if n_gold == 0:
        recall = 1.0 if n_pred == 0 else 0.0
    else:
        recall = matches / n_gold
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return PropMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        matches=matches,
        predicted=n_pred,
        gold=n_gold,
    )
