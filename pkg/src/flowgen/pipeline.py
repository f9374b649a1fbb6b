"""End-to-end generation: utterance in, validated workflow out.

The pipeline runs stage prediction, instantiates nodes, assigns each node
its utterance span, and then works two independent branches — edge
prediction (with cardinality validation and repair) and per-node property
prediction (with schema validation) — merging them into a single workflow.
The branches may run concurrently; results are keyed by node name and
assembled in a fixed order, so a parallel run is byte-identical to a
sequential one under a scripted provider.

Failure handling is deliberately asymmetric: without stages there is nothing
to build, so stage-prediction failure aborts with a structured error; a
failing edge or property step only degrades the result (empty edges, or an
empty property list for that node) and leaves a diagnostic behind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import fixture_path
from .catalog import Catalog, load_catalog
from .classify import StageClassifier, load_training_pairs, train
from .edgepred import (
    CardinalityViolation,
    EdgePredictionError,
    FlowGraph,
    NodeInstance,
    SegmentationError,
    build_nodes,
    predict_edges,
    repair_with_renames,
    segment_for_nodes,
    to_dot,
    validate_cardinality,
)
from .llm import (
    CompletionProvider,
    ProviderError,
    load_mock_scripts,
    provider_from_env,
)
from .proppred import (
    ACCEPTED,
    ExternalRegistry,
    PropertyAssignment,
    canonical_value,
    load_registry,
    predict_properties,
    validate,
)
from .stagepred import (
    DEFAULT_EXAMPLE_CAP,
    DEFAULT_MAX_STEPS,
    FewShotExample,
    SplitExample,
    StagePrediction,
    StagePredictionError,
    TokenUsage,
    load_examples,
    load_split_examples,
    predict_agentic,
    predict_cag,
    predict_single,
)

__all__ = [
    "PipelineConfig",
    "Runtime",
    "Workflow",
    "ConfigError",
    "PipelineError",
    "build_runtime",
    "generate",
    "generate_with_runtime",
    "emit",
    "load_workflow_doc",
]

STRATEGIES = ("cag", "single", "agentic")


class ConfigError(ValueError):
    pass


class PipelineError(Exception):
    def __init__(self, step: str, message: str, provenance: dict | None = None):
        super().__init__(f"{step}: {message}")
        self.step = step
        self.provenance = provenance or {}

    def envelope(self) -> dict:
        return {
            "error": {"step": self.step, "message": str(self)},
            "provenance": self.provenance,
        }


@dataclass
class PipelineConfig:
    strategy: str = "cag"
    catalog_path: str | Path = field(default_factory=lambda: fixture_path("demo_catalog.json"))
    examples_path: str | Path = field(default_factory=lambda: fixture_path("demo_bank.json"))
    split_examples_path: str | Path = field(
        default_factory=lambda: fixture_path("split_examples.json")
    )
    classifier_path: str | Path = field(
        default_factory=lambda: fixture_path("demo_training_pairs.json")
    )
    registry_path: str | Path | None = field(
        default_factory=lambda: fixture_path("demo_registry.json")
    )
    mock_scripts_path: str | Path | None = None
    classifier_endpoint: str | None = None
    family: str = "granite"
    parallel: int = 1
    example_cap: int = DEFAULT_EXAMPLE_CAP
    classifier_threshold: float = 0.25
    agent_max_steps: int = DEFAULT_MAX_STEPS
    fixpoint_dependencies: bool = False
    full_prompts: bool = False  # keep full prompt text in provenance instead of hashes


def _check_config(cfg: PipelineConfig) -> None:
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {cfg.strategy!r} (choose from {STRATEGIES})")
    if cfg.family not in ("granite", "llama"):
        raise ConfigError(f"unknown model family {cfg.family!r}")
    if cfg.parallel < 1:
        raise ConfigError("parallel width must be at least 1")
    paths = {
        "catalog": cfg.catalog_path,
        "examples": cfg.examples_path,
        "split-examples": cfg.split_examples_path,
        "classifier": cfg.classifier_path,
    }
    if cfg.registry_path is not None:
        paths["registry"] = cfg.registry_path
    if cfg.mock_scripts_path is not None:
        paths["mock-scripts"] = cfg.mock_scripts_path
    missing = [f"{label}: {path}" for label, path in paths.items() if not Path(path).is_file()]
    if missing:
        raise ConfigError("missing input files:\n  " + "\n  ".join(missing))


@dataclass
class Runtime:
    catalog: Catalog
    classifier: StageClassifier
    bank: list[FewShotExample]
    split_examples: list[SplitExample]
    registry: ExternalRegistry | None
    provider: CompletionProvider
    cfg: PipelineConfig


def build_runtime(cfg: PipelineConfig) -> Runtime:
    """Load every configured artifact once; reusable across generate calls."""
    _check_config(cfg)
    catalog = load_catalog(cfg.catalog_path)
    if cfg.classifier_endpoint:
        from .classify import RemoteClassifier

        classifier: StageClassifier = RemoteClassifier(cfg.classifier_endpoint)
    else:
        pairs = load_training_pairs(cfg.classifier_path)
        classifier = train(pairs, catalog.stages, threshold=cfg.classifier_threshold)
    bank = load_examples(cfg.examples_path, catalog)
    split_examples = load_split_examples(cfg.split_examples_path)
    registry = load_registry(cfg.registry_path) if cfg.registry_path else None
    if cfg.mock_scripts_path is not None:
        provider: CompletionProvider = load_mock_scripts(cfg.mock_scripts_path)
    else:
        provider = provider_from_env()
    return Runtime(
        catalog=catalog,
        classifier=classifier,
        bank=bank,
        split_examples=split_examples,
        registry=registry,
        provider=provider,
        cfg=cfg,
    )


@dataclass
class Workflow:
    graph: FlowGraph
    properties: dict[str, list[PropertyAssignment]]  # accepted assignments per node
    provenance: dict

    def accepted_properties(self, unique_name: str) -> list[PropertyAssignment]:
        return self.properties.get(unique_name, [])


# --- generation ----------------------------------------------------------------


def _predict_stages(utterance: str, rt: Runtime) -> StagePrediction:
    cfg = rt.cfg
    if cfg.strategy == "single":
        return predict_single(utterance, rt.catalog, rt.bank, rt.provider, cfg.family)
    if cfg.strategy == "cag":
        return predict_cag(
            utterance,
            rt.catalog,
            rt.classifier,
            rt.bank,
            rt.provider,
            cfg.family,
            rt.split_examples,
            cfg.example_cap,
        )
    return predict_agentic(
        utterance, rt.catalog, rt.classifier, rt.provider, cfg.agent_max_steps
    )


def _edge_branch(
    utterance: str,
    nodes: list[NodeInstance],
    rt: Runtime,
    usage: TokenUsage,
) -> tuple[FlowGraph, dict[str, list[str]], list[CardinalityViolation], list[dict], list[dict]]:
    trace: list[dict] = []
    diagnostics: list[dict] = []
    try:
        graph = predict_edges(nodes, utterance, rt.provider, usage, trace)
    except (EdgePredictionError, ProviderError) as exc:
        diagnostics.append({"step": "edge_prediction", "message": str(exc)})
        graph = FlowGraph(nodes=list(nodes))
    pre_violations = validate_cardinality(graph)
    repaired, renames = repair_with_renames(graph, trace)
    return repaired, renames, pre_violations, trace, diagnostics


def _property_branch_one(
    node: NodeInstance, rt: Runtime
) -> tuple[str, list[PropertyAssignment], list[dict], list[dict]]:
    trace: list[dict] = []
    diagnostics: list[dict] = []
    stage = rt.catalog.stages[node.stage]
    try:
        raw = predict_properties(node, stage, rt.provider, None, trace)
        statused = validate(
            raw, stage, rt.registry, fixpoint=rt.cfg.fixpoint_dependencies
        )
    except Exception as exc:  # degrade per node, keep the flow
        diagnostics.append(
            {"step": "properties", "node": node.unique_name, "message": str(exc)}
        )
        statused = []
    return node.unique_name, statused, trace, diagnostics


def generate(utterance: str, cfg: PipelineConfig | None = None) -> Workflow:
    """Convenience wrapper: build a runtime for one call."""
    return generate_with_runtime(utterance, build_runtime(cfg or PipelineConfig()))


def generate_with_runtime(utterance: str, rt: Runtime) -> Workflow:
    cfg = rt.cfg
    usage = TokenUsage()
    provenance: dict = {"utterance": utterance, "strategy": cfg.strategy}
    diagnostics: list[dict] = []

    try:
        prediction = _predict_stages(utterance, rt)
    except (StagePredictionError, ProviderError, ValueError) as exc:
        raise PipelineError("stage_prediction", str(exc), provenance) from exc
    provenance["stage_trace"] = prediction.trace
    provenance["stages"] = list(prediction.stages)
    usage.prompt_tokens += prediction.usage.prompt_tokens
    usage.completion_tokens += prediction.usage.completion_tokens
    usage.requests += prediction.usage.requests

    nodes = build_nodes(prediction.stages, rt.catalog)
    if not nodes:
        provenance["usage"] = vars(usage)
        provenance["diagnostics"] = diagnostics
        return Workflow(graph=FlowGraph(nodes=[]), properties={}, provenance=provenance)

    seg_trace: list[dict] = []
    try:
        segments = segment_for_nodes(utterance, nodes, rt.catalog, rt.provider, usage, seg_trace)
    except (SegmentationError, ProviderError) as exc:
        # degraded but total: every node falls back to the whole utterance
        diagnostics.append({"step": "segmentation", "message": str(exc)})
        segments = {n.unique_name: utterance for n in nodes}
    for node in nodes:
        node.sub_utterance = segments[node.unique_name]
    provenance["segments"] = {n.unique_name: n.sub_utterance for n in nodes}
    provenance["segment_trace"] = seg_trace

    edge_usage = TokenUsage()
    if cfg.parallel > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            edge_future = pool.submit(_edge_branch, utterance, nodes, rt, edge_usage)
            prop_futures = [pool.submit(_property_branch_one, n, rt) for n in nodes]
            graph, renames, pre_violations, edge_trace, edge_diags = edge_future.result()
            prop_results = [f.result() for f in prop_futures]
    else:
        graph, renames, pre_violations, edge_trace, edge_diags = _edge_branch(
            utterance, nodes, rt, edge_usage
        )
        prop_results = [_property_branch_one(n, rt) for n in nodes]

    usage.prompt_tokens += edge_usage.prompt_tokens
    usage.completion_tokens += edge_usage.completion_tokens
    usage.requests += edge_usage.requests
    diagnostics.extend(edge_diags)

    statused_by_node: dict[str, list[PropertyAssignment]] = {}
    prop_trace: list[dict] = []
    for name, statused, trace, diags in prop_results:
        statused_by_node[name] = statused
        prop_trace.extend(trace)
        diagnostics.extend(diags)
        for entry in trace:
            if entry.get("event") == "llm_call":
                usage.add(entry["prompt_tokens"], entry["completion_tokens"])

    # carry properties across repair renames (split copies share them)
    final_names = graph.node_names()
    properties: dict[str, list[PropertyAssignment]] = {}
    rejections: dict[str, list[dict]] = {}
    for original, statused in statused_by_node.items():
        targets = renames.get(original, [original])
        accepted = [a for a in statused if a.status == ACCEPTED]
        rejected = [
            {"name": a.name, "status": a.status, "detail": a.detail}
            for a in statused
            if a.status != ACCEPTED
        ]
        for target in targets:
            if target not in final_names:
                continue
            properties[target] = [replace(a) for a in accepted]
            if rejected:
                rejections[target] = rejected

    provenance["edge_trace"] = edge_trace
    provenance["property_trace"] = prop_trace
    provenance["pre_repair_violations"] = [str(v) for v in pre_violations]
    provenance["under_connections"] = [
        str(v) for v in validate_cardinality(graph) if v.kind == "under"
    ]
    provenance["renames"] = {k: v for k, v in sorted(renames.items())}
    provenance["rejections"] = {k: rejections[k] for k in sorted(rejections)}
    provenance["usage"] = vars(usage)
    provenance["diagnostics"] = diagnostics

    workflow = Workflow(graph=graph, properties=properties, provenance=provenance)
    _assert_workflow(workflow)
    return workflow


def _assert_workflow(w: Workflow) -> None:
    """Internal consistency: repaired graph, property keys subset of nodes."""
    names = w.graph.node_names()
    stray = set(w.properties) - names
    if stray:
        raise PipelineError("assembly", f"properties for unknown nodes {sorted(stray)}")
    over = [v for v in validate_cardinality(w.graph) if v.kind == "over"]
    if over:
        raise PipelineError("assembly", f"over-connections survived repair: {over}")


# --- emission --------------------------------------------------------------------


def emit(workflow: Workflow, format: str = "doc") -> str:
    """Serialize a workflow: canonical JSON document or GraphViz text."""
    if format == "dot":
        return to_dot(workflow.graph)
    if format != "doc":
        raise ValueError(f"unknown format {format!r}")
    nodes = sorted(workflow.graph.nodes, key=lambda n: n.unique_name)
    doc = {
        "nodes": [
            {
                "unique_name": n.unique_name,
                "stage": n.stage,
                "sub_utterance": n.sub_utterance,
                "properties": [
                    {"name": a.name, "value": canonical_value(a.coerced)}
                    for a in workflow.accepted_properties(n.unique_name)
                ],
            }
            for n in nodes
        ],
        "edges": [{"from": src, "to": dst} for src, dst in sorted(workflow.graph.edges)],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_workflow_doc(path: str | Path) -> Workflow:
    """Rebuild a workflow from an emitted document (for re-export).

    Bounds are not part of the document, so the graph carries permissive
    ones; property values are already canonical strings and re-emit as-is.
    """
    from .catalog import CardinalityBound

    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    anybound = CardinalityBound(0, None)
    try:
        nodes = []
        properties: dict[str, list[PropertyAssignment]] = {}
        for n in raw["nodes"]:
            nodes.append(
                NodeInstance(
                    unique_name=str(n["unique_name"]),
                    stage=str(n["stage"]),
                    inputs=anybound,
                    outputs=anybound,
                    sub_utterance=str(n.get("sub_utterance", "")),
                )
            )
            properties[nodes[-1].unique_name] = [
                PropertyAssignment(
                    name=str(p["name"]),
                    raw_value=str(p["value"]),
                    coerced=str(p["value"]),
                    status=ACCEPTED,
                )
                for p in n.get("properties", [])
            ]
        edges = [(str(e["from"]), str(e["to"])) for e in raw["edges"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: not a workflow document ({exc})") from exc
    graph = FlowGraph(nodes=nodes, edges=edges)
    return Workflow(graph=graph, properties=properties, provenance={"source": str(path)})
