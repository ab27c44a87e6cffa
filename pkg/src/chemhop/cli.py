"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 stage error, 2 config error. A lock file in the
work directory keeps stage processes from overlapping on the same run.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .errors import ChemhopError, ConfigInvalid

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE_ERROR = 1
EXIT_CONFIG_ERROR = 2


@contextlib.contextmanager
def stage_lock(workdir: Path):
    workdir.mkdir(parents=True, exist_ok=True)
    lock_path = workdir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ChemhopError(
            f"another stage holds the lock {lock_path}; remove it if the run crashed"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            lock_path.unlink()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chemhop", description=__doc__)
    parser.add_argument("--config", "-c", required=True, help="run configuration file (YAML/JSON)")
    parser.add_argument("--mock-llm", help="scripted-responder file replacing all LLM providers")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="fetch articles, extract intro windows, chunk")
    sub.add_parser("extract-entities", help="NER detection + LLM verification per chunk")
    sub.add_parser("extract-relations", help="triplet extraction per chunk")
    sub.add_parser("enrich", help="encyclopedia + compound-database metadata per entity")
    sub.add_parser("build-graph", help="assemble and persist the knowledge graph")
    sub.add_parser("graph-stats", help="network statistics table for the built graph")

    p = sub.add_parser("sample-paths", help="sample K-hop paths with distinct sources")
    p.add_argument("--seed", type=int, help="overrides sampler.seed")

    sub.add_parser("gen-qa", help="one-hop generation, verification, aggregation")
    sub.add_parser("verify-qa", help="final gates and path verification")

    p = sub.add_parser("evaluate", help="run a model over the dataset")
    p.add_argument("--model-id", required=True)
    p.add_argument("--provider", default="default")
    p.add_argument("--run-id")
    ctx = p.add_mutually_exclusive_group(required=True)
    ctx.add_argument("--with-context", action="store_true", dest="with_context")
    ctx.add_argument("--no-context", action="store_false", dest="with_context")

    p = sub.add_parser("report", help="recompute the report for a finished run")
    p.add_argument("--run-id", required=True)

    p = sub.add_parser("annotate-import", help="import expert review annotations")
    p.add_argument("--file", required=True)

    return parser


def _dispatch(args: argparse.Namespace, cfg: RunConfig) -> int:
    mock = args.mock_llm
    if args.command == "ingest":
        summary = pipeline.stage_ingest(cfg)
    elif args.command == "extract-entities":
        summary = pipeline.stage_extract_entities(cfg, mock)
    elif args.command == "extract-relations":
        summary = pipeline.stage_extract_relations(cfg, mock)
    elif args.command == "enrich":
        summary = pipeline.stage_enrich(cfg)
    elif args.command == "build-graph":
        summary = pipeline.stage_build_graph(cfg)
    elif args.command == "graph-stats":
        summary, markdown = pipeline.stage_graph_stats(cfg)
        print(markdown)
    elif args.command == "sample-paths":
        summary = pipeline.stage_sample_paths(cfg, seed=args.seed)
    elif args.command == "gen-qa":
        summary = pipeline.stage_gen_qa(cfg, mock)
    elif args.command == "verify-qa":
        summary = pipeline.stage_verify_qa(cfg, mock)
    elif args.command == "evaluate":
        summary = pipeline.stage_evaluate(
            cfg, model_id=args.model_id, with_context=args.with_context,
            provider=args.provider, run_id=args.run_id, mock_llm=mock,
        )
    elif args.command == "report":
        summary, markdown = pipeline.stage_report(cfg, run_id=args.run_id)
        print(markdown)
    elif args.command == "annotate-import":
        summary = pipeline.stage_annotate_import(cfg, file=args.file)
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigInvalid(f"unknown command {args.command!r}")
    log.info("%s done: %s", args.command, summary)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        with stage_lock(cfg.workdir):
            return _dispatch(args, cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except ChemhopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
