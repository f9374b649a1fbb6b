"""Offline evaluation over labeled datasets.

A dataset is a JSON array of records: an ``utterance``, its ``gold_stages``
(ordered, so duplicate stages map to ``_1``/``_2`` node names), and
optionally ``gold_edges`` and per-node ``gold_properties``. The harness runs
the configured strategy per record and aggregates:

* stage accuracy — exact multiset match, bucketed into total / single-stage /
  multi-stage records,
* edge similarity — mean Dice over aligned edges plus an exact-graph rate,
* property precision/recall/F1 — micro-averaged over pooled
  (node, property, value) triples,
* tokens — mean prompt-token estimate per completion request, from the
  rendered prompts, not provider-reported usage.

Per-record failures land in a ``failures`` section and the run continues;
failed records are excluded from the metric denominators.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import Catalog
from .edgepred import FlowGraph, build_nodes, edge_metrics
from .pipeline import PipelineConfig, Runtime, build_runtime, generate_with_runtime, _predict_stages
from .proppred import PropMetrics, PropTriple, canonical_value, coerce, prop_metrics

__all__ = [
    "EvalRecord",
    "StageAccuracy",
    "MetricsReport",
    "DatasetError",
    "load_dataset",
    "stage_accuracy",
    "run_eval",
    "report_json",
    "report_table",
]

MEASURES = ("stages", "edges", "props")


class DatasetError(Exception):
    pass


@dataclass
class EvalRecord:
    utterance: str
    gold_stages: list[str]  # ordered; duplicates become _1/_2 instances
    gold_edges: list[tuple[str, str]] | None = None
    gold_properties: dict[str, list[tuple[str, str]]] | None = None


@dataclass
class StageAccuracy:
    total: float
    one_op: float
    n_op: float
    n_records: int = 0
    n_one_op: int = 0
    n_n_op: int = 0


@dataclass
class MetricsReport:
    measures: list[str]
    stages: StageAccuracy | None = None
    edge_similarity: float | None = None
    edge_exact_rate: float | None = None
    edge_records: int = 0
    props: PropMetrics | None = None
    tokens: dict[str, float] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)


def _gold_node_names(gold_stages: list[str]) -> list[str]:
    counts = Counter(gold_stages)
    seen: Counter[str] = Counter()
    names = []
    for stage in gold_stages:
        if counts[stage] > 1:
            seen[stage] += 1
            names.append(f"{stage}_{seen[stage]}")
        else:
            names.append(stage)
    return names


def load_dataset(path: str | Path) -> list[EvalRecord]:
    """Load and validate a dataset; edges must reference gold stage instances."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise DatasetError(f"{path}: expected a JSON array of records")
    records: list[EvalRecord] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "utterance" not in item or "gold_stages" not in item:
            raise DatasetError(f"{path}: record {i} needs utterance and gold_stages")
        gold_stages = [str(s) for s in item["gold_stages"]]
        if not gold_stages:
            raise DatasetError(f"{path}: record {i} has empty gold_stages")
        record = EvalRecord(utterance=str(item["utterance"]), gold_stages=gold_stages)
        if "gold_edges" in item and item["gold_edges"] is not None:
            names = set(_gold_node_names(gold_stages))
            edges = []
            for e in item["gold_edges"]:
                src, dst = str(e["from"]), str(e["to"])
                for endpoint in (src, dst):
                    if endpoint not in names:
                        raise DatasetError(
                            f"{path}: record {i} edge references unknown node {endpoint!r}"
                        )
                edges.append((src, dst))
            record.gold_edges = edges
        if "gold_properties" in item and item["gold_properties"] is not None:
            names = set(_gold_node_names(gold_stages))
            props: dict[str, list[tuple[str, str]]] = {}
            for node, items in item["gold_properties"].items():
                if node not in names:
                    raise DatasetError(
                        f"{path}: record {i} properties reference unknown node {node!r}"
                    )
                props[node] = [(str(p["name"]), str(p["value"])) for p in items]
            record.gold_properties = props
        records.append(record)
    return records


# --- stage accuracy ----------------------------------------------------------


def stage_accuracy(
    predictions: list[list[str]], golds: list[list[str]]
) -> StageAccuracy:
    """Exact multiset match rate, in percent, bucketed by gold size.

    A bucket with no records is vacuously 100.0.
    """
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    buckets = {"total": [0, 0], "one_op": [0, 0], "n_op": [0, 0]}
    for pred, gold in zip(predictions, golds):
        correct = Counter(pred) == Counter(gold)
        keys = ["total", "one_op" if len(gold) == 1 else "n_op"]
        for key in keys:
            buckets[key][1] += 1
            if correct:
                buckets[key][0] += 1

    def pct(hit: int, n: int) -> float:
        return 100.0 if n == 0 else 100.0 * hit / n

    return StageAccuracy(
        total=pct(*buckets["total"]),
        one_op=pct(*buckets["one_op"]),
        n_op=pct(*buckets["n_op"]),
        n_records=buckets["total"][1],
        n_one_op=buckets["one_op"][1],
        n_n_op=buckets["n_op"][1],
    )


# --- full harness --------------------------------------------------------------


def _gold_graph(record: EvalRecord, catalog: Catalog) -> FlowGraph:
    nodes = build_nodes(record.gold_stages, catalog)
    return FlowGraph(nodes=nodes, edges=list(record.gold_edges or []))


def _gold_triples(record: EvalRecord, catalog: Catalog) -> list[PropTriple]:
    triples: list[PropTriple] = []
    for node, items in (record.gold_properties or {}).items():
        stage_name = node.rsplit("_", 1)[0] if node not in catalog.stages else node
        stage = catalog.stages.get(stage_name) or catalog.stages.get(node)
        for name, value in items:
            canon = value.strip()
            declared = stage.find_property(name) if stage else None
            if declared is not None:
                coerced = coerce(value, declared.value_type)
                if coerced is not None:
                    canon = canonical_value(coerced)
                name = declared.name
            triples.append((node, name, canon))
    return triples


@dataclass
class _RecordResult:
    pred: list[str] | None = None
    edge: tuple[float, bool] | None = None
    pred_triples: list[PropTriple] = field(default_factory=list)
    gold_triples: list[PropTriple] = field(default_factory=list)
    prompt_tokens: int = 0
    requests: int = 0
    failure: str | None = None


def _eval_record(record: EvalRecord, rt: Runtime, measures: tuple[str, ...]) -> _RecordResult:
    result = _RecordResult()
    needs_pipeline = ("edges" in measures and record.gold_edges is not None) or (
        "props" in measures and record.gold_properties is not None
    )
    try:
        if needs_pipeline:
            workflow = generate_with_runtime(record.utterance, rt)
            usage = workflow.provenance.get("usage", {})
            result.prompt_tokens = usage.get("prompt_tokens", 0)
            result.requests = usage.get("requests", 0)
            result.pred = [n.stage for n in workflow.graph.nodes]
            if "edges" in measures and record.gold_edges is not None:
                metrics = edge_metrics(workflow.graph, _gold_graph(record, rt.catalog))
                result.edge = (metrics.similarity, metrics.exact)
            if "props" in measures and record.gold_properties is not None:
                for node in sorted(workflow.properties):
                    for a in workflow.properties[node]:
                        result.pred_triples.append((node, a.name, canonical_value(a.coerced)))
                result.gold_triples = _gold_triples(record, rt.catalog)
        else:
            prediction = _predict_stages(record.utterance, rt)
            result.prompt_tokens = prediction.usage.prompt_tokens
            result.requests = prediction.usage.requests
            result.pred = list(prediction.stages)
    except Exception as exc:
        result.failure = str(exc)
    return result


def run_eval(
    dataset: list[EvalRecord],
    cfg: PipelineConfig,
    measures: tuple[str, ...] = ("stages",),
    runtime: Runtime | None = None,
) -> MetricsReport:
    """Evaluate the configured strategy over a dataset.

    ``stages`` only needs stage predictions; ``edges`` and ``props`` run the
    full pipeline for records that carry the corresponding gold data. Records
    run concurrently up to the configured width; aggregation is keyed by
    record index, so the report does not depend on completion order.
    """
    for m in measures:
        if m not in MEASURES:
            raise ValueError(f"unknown measure {m!r} (choose from {MEASURES})")
    rt = runtime or build_runtime(cfg)
    report = MetricsReport(measures=list(measures))

    if rt.cfg.parallel > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=rt.cfg.parallel) as pool:
            results = list(pool.map(lambda r: _eval_record(r, rt, measures), dataset))
    else:
        results = [_eval_record(r, rt, measures) for r in dataset]

    prompt_tokens = 0
    requests = 0
    preds: list[list[str]] = []
    golds: list[list[str]] = []
    edge_sims: list[float] = []
    edge_exacts: list[bool] = []
    pred_triples: list[PropTriple] = []
    gold_triples: list[PropTriple] = []
    for index, (record, result) in enumerate(zip(dataset, results)):
        if result.failure is not None:
            report.failures.append({"record": index, "message": result.failure})
            continue
        prompt_tokens += result.prompt_tokens
        requests += result.requests
        if "stages" in measures and result.pred is not None:
            preds.append(result.pred)
            golds.append(record.gold_stages)
        if result.edge is not None:
            edge_sims.append(result.edge[0])
            edge_exacts.append(result.edge[1])
        pred_triples.extend(result.pred_triples)
        gold_triples.extend(result.gold_triples)

    if "stages" in measures:
        report.stages = stage_accuracy(preds, golds)
    if "edges" in measures and edge_sims:
        report.edge_similarity = sum(edge_sims) / len(edge_sims)
        report.edge_exact_rate = sum(edge_exacts) / len(edge_exacts)
        report.edge_records = len(edge_sims)
    if "props" in measures:
        report.props = prop_metrics(pred_triples, gold_triples)
    if requests:
        report.tokens = {rt.cfg.strategy: prompt_tokens / requests}
    return report


# --- rendering -------------------------------------------------------------------


def report_json(report: MetricsReport) -> str:
    doc: dict = {"measures": report.measures}
    if report.stages is not None:
        doc["stage_accuracy"] = {
            "total": report.stages.total,
            "one_op": report.stages.one_op,
            "n_op": report.stages.n_op,
            "records": report.stages.n_records,
            "one_op_records": report.stages.n_one_op,
            "n_op_records": report.stages.n_n_op,
        }
    if report.edge_similarity is not None:
        doc["edges"] = {
            "mean_similarity": report.edge_similarity,
            "exact_rate": report.edge_exact_rate,
            "records": report.edge_records,
        }
    if report.props is not None:
        doc["properties"] = {
            "precision": report.props.precision,
            "recall": report.props.recall,
            "f1": report.props.f1,
            "matches": report.props.matches,
            "predicted": report.props.predicted,
            "gold": report.props.gold,
        }
    doc["tokens"] = report.tokens
    doc["failures"] = report.failures
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def report_table(report: MetricsReport) -> str:
    lines: list[str] = []
    if report.stages is not None:
        s = report.stages
        lines.append(f"{'stage accuracy [%]':24} {'total':>8} {'1-op':>8} {'n-op':>8}")
        lines.append(f"{'':24} {s.total:>8.1f} {s.one_op:>8.1f} {s.n_op:>8.1f}")
    if report.edge_similarity is not None:
        lines.append(f"{'edge similarity':24} {report.edge_similarity:>8.4f}")
        lines.append(f"{'edge exact rate':24} {report.edge_exact_rate:>8.4f}")
    if report.props is not None:
        p = report.props
        lines.append(f"{'properties':24} {'P':>8} {'R':>8} {'F1':>8}")
        lines.append(f"{'':24} {p.precision:>8.4f} {p.recall:>8.4f} {p.f1:>8.4f}")
    for strategy, mean in sorted(report.tokens.items()):
        lines.append(f"{'mean prompt tokens':24} {strategy}: {mean:.1f}")
    if report.failures:
        lines.append(f"failures: {len(report.failures)}")
        for failure in report.failures:
            lines.append(f"  record {failure['record']}: {failure['message']}")
    return "\n".join(lines) + "\n"
