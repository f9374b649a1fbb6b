"""Command-line front end.

Subcommands::

    flowgen generate          compile one utterance into a workflow document
    flowgen eval              run the offline harness over a labeled dataset
    flowgen classify          score a text span against the trained classifier
    flowgen catalog-validate  check a stage catalog and report violations
    flowgen export            re-emit a saved workflow document as JSON or DOT

Exit codes: 0 on success, 1 for usage or configuration problems, 2 when the
pipeline itself fails (a JSON error envelope goes to stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .catalog import CatalogParseError, CatalogValidationError, parse_catalog
from .classify import load_training_pairs, train
from .evaluation import DatasetError, load_dataset, report_json, report_table, run_eval
from .llm import ProviderError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    PipelineError,
    build_runtime,
    emit,
    generate_with_runtime,
    load_workflow_doc,
)

__all__ = ["main", "build_parser"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; we reserve 2 for pipeline failures
    def error(self, message: str):  # noqa: D102
        raise _UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=("single", "agentic", "cag"), default="cag")
    p.add_argument("--catalog", help="stage catalog JSON path")
    p.add_argument("--examples", help="few-shot example bank JSON path")
    p.add_argument("--split-examples", help="decomposition example JSON path")
    p.add_argument("--classifier", help="classifier training pairs JSON path, or http(s) endpoint")
    p.add_argument("--registry", help="external name registry JSON path")
    p.add_argument("--mock-scripts", help="scripted provider JSON path (offline mode)")
    p.add_argument("--family", choices=("granite", "llama"), default="granite")
    p.add_argument("--parallel", type=int, default=1, help="worker threads for edge/property branches")
    p.add_argument("--cap", type=int, default=None, help="max few-shot examples per stage prompt")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig(strategy=args.strategy, family=args.family, parallel=args.parallel)
    if args.cap is not None:
        cfg = replace(cfg, example_cap=args.cap)
    if args.catalog:
        cfg = replace(cfg, catalog_path=Path(args.catalog))
    if args.examples:
        cfg = replace(cfg, examples_path=Path(args.examples))
    if args.split_examples:
        cfg = replace(cfg, split_examples_path=Path(args.split_examples))
    if args.registry:
        cfg = replace(cfg, registry_path=Path(args.registry))
    if args.mock_scripts:
        cfg = replace(cfg, mock_scripts_path=Path(args.mock_scripts))
    if args.classifier:
        if args.classifier.startswith(("http://", "https://")):
            cfg = replace(cfg, classifier_endpoint=args.classifier)
        else:
            cfg = replace(cfg, classifier_path=Path(args.classifier))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowgen", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="compile an utterance into a workflow")
    source = p_gen.add_mutually_exclusive_group(required=True)
    source.add_argument("--utterance", help="flow description text")
    source.add_argument("--stdin", action="store_true", help="read the utterance from stdin")
    _add_config_flags(p_gen)
    p_gen.add_argument("--out", help="write the workflow document here instead of stdout")
    p_gen.add_argument("--dot", help="also write a DOT rendering to this path")
    p_gen.add_argument("--trace", action="store_true", help="include provenance in the output")

    p_eval = sub.add_parser("eval", help="evaluate a strategy over a labeled dataset")
    p_eval.add_argument("--dataset", required=True, help="labeled dataset JSON path")
    p_eval.add_argument(
        "--measure",
        default="stages",
        help="comma-separated metric families: stages,edges,props (default: stages)",
    )
    p_eval.add_argument("--report", help="also write the structured JSON report to this path")
    _add_config_flags(p_eval)

    p_cls = sub.add_parser("classify", help="score a text span against the classifier")
    p_cls.add_argument("--text", required=True)
    p_cls.add_argument("--catalog", help="stage catalog JSON path")
    p_cls.add_argument("--classifier", help="classifier training pairs JSON path")
    p_cls.add_argument("--top", type=int, default=5, help="number of ranked labels to print")

    p_cat = sub.add_parser("catalog-validate", help="validate a stage catalog")
    p_cat.add_argument("--catalog", required=True)

    p_exp = sub.add_parser("export", help="re-emit a saved workflow document")
    p_exp.add_argument("--workflow", required=True, help="workflow document JSON path")
    p_exp.add_argument("--format", choices=("doc", "dot"), default="dot")
    p_exp.add_argument("--out", help="write here instead of stdout")

    return parser


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_generate(args: argparse.Namespace) -> int:
    # piped input always carries a trailing newline; it is not part of the flow text
    utterance = args.utterance if args.utterance is not None else sys.stdin.read().strip()
    if not utterance.strip():
        raise _UsageError("empty utterance")
    cfg = _config_from_args(args)
    runtime = build_runtime(cfg)
    workflow = generate_with_runtime(utterance, runtime)
    doc = emit(workflow, "doc")
    if args.trace:
        body = json.loads(doc)
        body["provenance"] = workflow.provenance
        doc = json.dumps(body, indent=2, ensure_ascii=False) + "\n"
    _write_out(doc, args.out)
    if args.dot:
        Path(args.dot).write_text(emit(workflow, "dot"), encoding="utf-8")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    dataset = load_dataset(args.dataset)
    measures = tuple(m.strip() for m in args.measure.split(",") if m.strip())
    if not measures:
        raise _UsageError("--measure needs at least one of stages,edges,props")
    report = run_eval(dataset, cfg, measures=measures)
    sys.stdout.write(report_table(report))
    if args.report:
        Path(args.report).write_text(report_json(report), encoding="utf-8")
    return 0


def _cmd_classify(args: argparse.Namespace) -> int:
    cfg = PipelineConfig()
    catalog_path = Path(args.catalog) if args.catalog else cfg.catalog_path
    pairs_path = Path(args.classifier) if args.classifier else cfg.classifier_path
    catalog = parse_catalog(Path(catalog_path).read_text(encoding="utf-8"))
    pairs = load_training_pairs(pairs_path)
    model = train(pairs, labels=frozenset(catalog.stages))
    result = model.classify(args.text)
    print(f"matched: {str(result.matched).lower()}")
    for label, score in result.ranked[: args.top]:
        print(f"{score:.4f}  {label}")
    return 0


def _cmd_catalog_validate(args: argparse.Namespace) -> int:
    try:
        catalog = parse_catalog(Path(args.catalog).read_text(encoding="utf-8"))
    except CatalogValidationError as exc:
        for violation in exc.violations:
            print(f"{violation.stage}: {violation.field}: {violation.message}", file=sys.stderr)
        return 1
    print(f"ok: {len(catalog.stages)} stages")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    workflow = load_workflow_doc(args.workflow)
    _write_out(emit(workflow, args.format), args.out)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "classify": _cmd_classify,
    "catalog-validate": _cmd_catalog_validate,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DatasetError, CatalogParseError, CatalogValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(json.dumps(exc.envelope(), indent=2, ensure_ascii=False), file=sys.stderr)
        return 2
    except ProviderError as exc:
        envelope = {"error": {"step": "provider", "message": str(exc)}}
        print(json.dumps(envelope, indent=2, ensure_ascii=False), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
