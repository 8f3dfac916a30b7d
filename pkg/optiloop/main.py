"""
Command-line entry point: solve, evaluate, ingest, retrieve and replay.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from optiloop.config import load_run_config, settings
from optiloop.exceptions import ConfigError, PipelineError
from optiloop.providers.toy_solver import VariableDomain
from optiloop.services.evaluation import load_suite, run_suite
from optiloop.services.memory_store import MemoryStore, read_corpus
from optiloop.services.pipeline import (
    DecisionPipeline,
    build_embedder,
    build_llm,
    dump_json,
    offline_instance_runner,
    replay,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE_ERROR = 3
EXIT_CONFIG_ERROR = 4


def _config(args):
    overrides = {}
    if getattr(args, "script", None):
        overrides["llm_script"] = args.script
    if getattr(args, "memory", None):
        overrides["memory_path"] = args.memory
    if getattr(args, "run_root", None):
        overrides["run_dir"] = args.run_root
    return load_run_config(args.config, **overrides)


def _load_store(cfg) -> Optional[MemoryStore]:
    if not cfg.memory_path or not Path(cfg.memory_path).exists():
        return None
    return MemoryStore.load(cfg.memory_path)


def cmd_solve(args) -> int:
    cfg = _config(args)
    problem = Path(args.problem).read_text(encoding="utf-8")
    domain = VariableDomain.from_file(args.domain) if args.domain else None
    embedder = build_embedder(cfg)
    pipeline = DecisionPipeline(cfg, build_llm(cfg, args.run_dir), embedder, store=_load_store(cfg))
    bundle = pipeline.solve(problem, domain=domain, run_dir=args.run_dir, resume=args.resume)
    print(dump_json(bundle.model_dump(mode="json")), end="")
    return bundle.exit_code


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    instances = load_suite(args.suite)
    runner = offline_instance_runner(cfg, Path(cfg.run_dir) / "evaluate")
    report = run_suite(instances, runner, parallelism=cfg.batch_size)
    if args.out:
        Path(args.out).write_text(dump_json(report.to_json()), encoding="utf-8")
    print(report.summary_table())
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _config(args)
    embedder = build_embedder(cfg)
    # Existing stores keep their entries; only new content is embedded
    store = MemoryStore.load_or_create(args.memory, embedder)
    added = store.ingest(read_corpus(args.corpus), embedder, batch_size=args.batch_size)
    store.save(args.memory)
    print(f"added {added} entries; store holds {len(store)}")
    for label, count in store.type_histogram().items():
        print(f"  {label}: {count}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    overrides = {"retrieval": {"pool_size": args.pool, "select_k": args.k, "lambda": args.lambda_, "similarity_threshold": args.threshold}}
    cfg = load_run_config(args.config, **overrides)
    embedder = build_embedder(cfg)
    store = MemoryStore.load(args.memory)
    query = Path(args.query_file).read_text(encoding="utf-8") if args.query_file else args.query
    for example in store.search(query, embedder, cfg.retrieval):
        print(
            f"{example.entry.id}  similarity={example.similarity:.4f}  score={example.score:.4f}  "
            f"type={example.entry.problem_type.value}"
        )
    return EXIT_OK


def cmd_replay(args) -> int:
    target = args.out or f"{args.run_dir.rstrip('/')}-replay"
    identical, source_hash, replay_hash, _ = replay(args.run_dir, target)
    print(json.dumps({"identical": identical, "source": source_hash, "replay": replay_hash}, indent=2))
    return EXIT_OK if identical else EXIT_STAGE_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optiloop", description="Validated optimization from natural-language problems")
    parser.add_argument("--config", type=str, default=None, help="Run configuration JSON file")
    parser.add_argument("--log-level", type=str, default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    # End-to-end solving
    solve = sub.add_parser("solve", help="Solve one problem end to end")
    solve.add_argument("problem", type=str, help="Text file with the problem description")
    solve.add_argument("--domain", type=str, default=None, help="Variable domain JSON for the toy optimizer")
    solve.add_argument("--script", type=str, default=None, help="Scripted provider responses")
    solve.add_argument("--memory", type=str, default=None, help="Memory store file")
    solve.add_argument("--run-dir", type=str, default=None, help="Run directory (default: <run root>/<run id>)")
    solve.add_argument("--run-root", type=str, default=None)
    solve.add_argument("--resume", action="store_true", help="Continue after the last persisted stage")
    solve.set_defaults(handler=cmd_solve)

    # Benchmark scoring
    evaluate = sub.add_parser("evaluate", help="Score a benchmark suite")
    evaluate.add_argument("--suite", type=str, required=True, help="JSON-lines benchmark instances")
    evaluate.add_argument("--out", type=str, default=None, help="Report JSON path")
    evaluate.add_argument("--run-root", type=str, default=None)
    evaluate.set_defaults(handler=cmd_evaluate)

    # Memory store maintenance
    ingest = sub.add_parser("ingest", help="Add a corpus to the memory store")
    ingest.add_argument("--corpus", type=str, required=True)
    ingest.add_argument("--memory", type=str, required=True)
    ingest.add_argument("--batch-size", type=int, default=32)
    ingest.set_defaults(handler=cmd_ingest)

    retrieve = sub.add_parser("retrieve", help="Diversity-aware retrieval from the memory store")
    retrieve.add_argument("query", nargs="?", default="")
    retrieve.add_argument("--query-file", type=str, default=None)
    retrieve.add_argument("--memory", type=str, required=True)
    retrieve.add_argument("--k", type=int, default=3)
    retrieve.add_argument("--pool", type=int, default=9)
    retrieve.add_argument("--lambda", dest="lambda_", type=float, default=0.5)
    retrieve.add_argument("--threshold", type=float, default=0.6)
    retrieve.set_defaults(handler=cmd_retrieve)

    # Determinism check
    replay_cmd = sub.add_parser("replay", help="Re-execute a run from its provider log")
    replay_cmd.add_argument("run_dir", type=str)
    replay_cmd.add_argument("--out", type=str, default=None)
    replay_cmd.set_defaults(handler=cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(str(e))
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (PipelineError, OSError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
