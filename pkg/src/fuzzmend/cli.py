"""Command-line front door: generate, validate, refuzz, coverage, stats.

Exit codes: 0 on success, 1 when a campaign completed but hit tool errors
(infrastructure faults), 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import coverage as cov
from . import report
from .config import ConfigError, Settings, parse_config_file, parse_size
from .corpus import CorpusStore, Origin
from .generator import GenSpec, default_keyword_pool, generate, load_keyword_pool
from .llm import ENDPOINT_ENV, DEFAULT_ENDPOINT, MockClient, ModelConfig, OllamaClient
from .repair import (
    RepairPolicy,
    refuzz_corpus,
    stats_from_store,
    validate_corpus,
)
from .validator import ToolchainConfig

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzmend",
        description="Validate, repair and quarantine LLM-generated compiler test programs.",
    )
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument(
        "--print-config", action="store_true", help="print the effective settings and exit"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_corpus(p):
        p.add_argument("--corpus", help="corpus root directory")

    def add_toolchain(p):
        p.add_argument("--compiler", help="compiler executable (default clang)")
        p.add_argument("--opt-level", help="optimisation level flag (default -O0)")
        p.add_argument("--timeout", type=float, help="per-process timeout in seconds (default 60)")
        p.add_argument("--mem-limit", help="per-process memory limit, e.g. 16G (default 16G)")
        p.add_argument(
            "--determinism-runs", type=int, help="dynamic runs per sanitizer profile (default 1)"
        )
        p.add_argument("--workers", type=int, help="worker threads (default: logical cores)")

    def add_model(p):
        p.add_argument("--backend", choices=["live", "mock"], help="model backend (default live)")
        p.add_argument("--endpoint", help=f"model server URL (or ${ENDPOINT_ENV})")
        p.add_argument("--model", help="model name (default llama3.2)")
        p.add_argument("--cassette", help="canned-responses file for the mock backend")

    p = sub.add_parser("generate", help="generate candidate programs into the corpus")
    add_corpus(p)
    add_model(p)
    p.add_argument("--count", type=int, help="number of programs to request (default 10)")
    p.add_argument("--keywords", help="keyword pool file (default: built-in pool)")
    p.add_argument("--keywords-per-prompt", type=int, help="keywords sampled per prompt (default 3)")
    p.add_argument("--seed", type=int, help="RNG seed for keyword sampling (default 0)")

    p = sub.add_parser("ingest", help="copy externally fuzzed programs into the corpus")
    add_corpus(p)
    p.add_argument("paths", nargs="+", help="source files to ingest")
    p.add_argument(
        "--origin",
        choices=[o.value for o in Origin],
        default=Origin.EXTERNAL.value,
        help="which fuzzer produced these programs",
    )

    p = sub.add_parser("validate", help="classify corpus programs without repairing")
    add_corpus(p)
    add_toolchain(p)
    p.add_argument("--format", choices=["text", "json"], default="text")

    p = sub.add_parser("refuzz", help="run the repair loop over the corpus")
    add_corpus(p)
    add_toolchain(p)
    add_model(p)
    p.add_argument("--attempts", type=int, help="repair attempts per program (default 2)")
    p.add_argument("--format", choices=["text", "json", "markdown"], default="text")

    p = sub.add_parser("coverage", help="component coverage tables from lcov tracefiles")
    p.add_argument("--before", required=True, help="tracefile before refuzzing")
    p.add_argument("--after", required=True, help="tracefile after refuzzing")
    p.add_argument("--map", dest="component_map", help="glob = component rules file")
    p.add_argument("--format", choices=["text", "json", "md"], default="text")

    p = sub.add_parser("stats", help="campaign statistics from stored traces")
    add_corpus(p)
    p.add_argument("--format", choices=["text", "json", "markdown"], default="text")

    return parser


def _toolchain_config(args, settings: Settings, corpus_root: Path) -> ToolchainConfig:
    return ToolchainConfig(
        compiler_path=settings.get("toolchain.compiler", args.compiler, "clang"),
        opt_level=settings.get("toolchain.opt_level", args.opt_level, "-O0"),
        timeout_s=settings.get("toolchain.timeout_s", args.timeout, 60.0, float),
        memory_limit_bytes=settings.get(
            "toolchain.memory_limit",
            parse_size(args.mem_limit) if args.mem_limit is not None else None,
            16 * 1024**3,
            parse_size,
        ),
        determinism_runs=settings.get("toolchain.determinism_runs", args.determinism_runs, 1, int),
        work_dir=corpus_root / "work",
    )


def _model_client(args, settings: Settings):
    backend = settings.get("model.backend", args.backend, "live")
    endpoint_default = os.environ.get(ENDPOINT_ENV, DEFAULT_ENDPOINT)
    model_cfg = ModelConfig(
        endpoint=settings.get("model.endpoint", args.endpoint, endpoint_default),
        model_name=settings.get("model.name", args.model, "llama3.2"),
    )
    cassette = settings.get("model.cassette", args.cassette, "")
    if backend == "mock":
        if not cassette:
            raise ConfigError("mock backend requires --cassette")
        return MockClient.from_cassette(cassette, config=model_cfg)
    return OllamaClient(model_cfg)


def _corpus_root(args, settings: Settings) -> Path:
    root = settings.get("corpus.root", getattr(args, "corpus", None), "")
    if not root:
        raise ConfigError("no corpus directory given (use --corpus)")
    return Path(root)


def _workers(args, settings: Settings) -> int:
    return settings.get("workers", getattr(args, "workers", None), os.cpu_count() or 1, int)


def cmd_generate(args, settings: Settings) -> int:
    root = _corpus_root(args, settings)
    client = _model_client(args, settings)
    keywords_path = settings.get("generator.keywords", args.keywords, "")
    pool = load_keyword_pool(keywords_path) if keywords_path else default_keyword_pool()
    spec = GenSpec(
        keyword_pool=pool,
        keywords_per_prompt=settings.get(
            "generator.keywords_per_prompt", args.keywords_per_prompt, 3, int
        ),
        count=settings.get("generator.count", args.count, 10, int),
        seed=settings.get("generator.seed", args.seed, 0, int),
    )
    if args.print_config:
        print(settings.dump())
        return 0
    store = CorpusStore.open(root)
    result = generate(spec, client, store)
    print(
        f"generated {len(result.programs)} of {spec.count} "
        f"(skipped: {result.extraction_failures} without code, "
        f"{result.transport_failures} transport failures)"
    )
    return 1 if result.transport_failures else 0


def cmd_ingest(args, settings: Settings) -> int:
    root = _corpus_root(args, settings)
    if args.print_config:
        print(settings.dump())
        return 0
    store = CorpusStore.open(root)
    programs = store.ingest(args.paths, Origin(args.origin))
    skipped = len(args.paths) - len(programs)
    print(f"ingested {len(programs)} programs ({skipped} skipped)")
    return 0


def cmd_validate(args, settings: Settings) -> int:
    root = _corpus_root(args, settings)
    cfg = _toolchain_config(args, settings, root)
    workers = _workers(args, settings)
    if args.print_config:
        print(settings.dump())
        return 0
    store = CorpusStore.open(root)
    summary = validate_corpus(store, cfg, workers=workers)
    if args.format == "json":
        print(json.dumps({"counts": summary.counts, "tool_errors": summary.tool_errors}, indent=2))
    else:
        for status, count in summary.counts.items():
            print(f"{status}: {count}")
        print(f"tool errors: {summary.tool_errors}")
    return 1 if summary.tool_errors else 0


def cmd_refuzz(args, settings: Settings) -> int:
    root = _corpus_root(args, settings)
    cfg = _toolchain_config(args, settings, root)
    policy = RepairPolicy(
        max_attempts=settings.get("repair.max_attempts", args.attempts, 2, int),
        opt_level_arg=cfg.opt_level,
    )
    client = _model_client(args, settings)
    workers = _workers(args, settings)
    if args.print_config:
        print(settings.dump())
        return 0
    store = CorpusStore.open(root)
    stats = refuzz_corpus(store, cfg, policy, client, workers=workers)
    (root / "stats.json").write_text(report.render(stats, "json") + "\n", encoding="utf-8")
    print(report.render(stats, args.format), end="")
    return 1 if stats.tool_errors else 0


def cmd_coverage(args, settings: Settings) -> int:
    map_path = settings.get("coverage.map", args.component_map, "")
    cmap = cov.ComponentMap.from_file(map_path) if map_path else cov.default_component_map()
    if args.print_config:
        print(settings.dump())
        return 0
    try:
        before_text = Path(args.before).read_text(encoding="utf-8")
        after_text = Path(args.after).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    before = cov.component_table(cov.parse_lcov(before_text), cmap)
    after = cov.component_table(cov.parse_lcov(after_text), cmap)
    print(cov.render_delta(cov.delta(before, after), args.format), end="")
    return 0


def cmd_stats(args, settings: Settings) -> int:
    root = _corpus_root(args, settings)
    if args.print_config:
        print(settings.dump())
        return 0
    store = CorpusStore.open(root)
    stats = stats_from_store(store)
    print(report.render(stats, args.format), end="")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "validate": cmd_validate,
    "refuzz": cmd_refuzz,
    "coverage": cmd_coverage,
    "stats": cmd_stats,
}


def _normalize_argv(argv: list[str]) -> list[str]:
    """Join ``--opt-level -O0`` into one token; argparse rejects dash values."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--opt-level" and i + 1 < len(argv) and argv[i + 1].startswith("-O"):
            out.append(f"--opt-level={argv[i + 1]}")
            i += 2
            continue
        out.append(argv[i])
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_normalize_argv(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        settings = Settings(file_values)
        return _COMMANDS[args.command](args, settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
