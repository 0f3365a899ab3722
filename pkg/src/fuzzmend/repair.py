"""The feedback-driven fixing loop for invalid test programs.

One pass over a program: validate, and while it stays invalid and attempts
remain, prompt the local model with the source plus the captured error log,
extract a candidate program from the reply, swap it in as the working
source, and re-verify.  Programs the loop cannot fix are quarantined as
CrashOnly; fixed ones land in the seed bank.  No attempt is made to
preserve the original program's semantics - a differently-behaving but
valid program is a perfectly good fuzzing input.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from . import validator
from .corpus import CorpusStore, ProgramStatus, TestProgram
from .diagnostics import ErrorLog
from .llm import (
    CompletionClient,
    CompletionRequest,
    MockMiss,
    ProtocolError,
    TransportError,
    extract_code,
)
from .report import CampaignStats, compute_stats
from .validator import ToolchainConfig, ToolchainError, ValidationOutcome, Verdict

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = (
    "Given the following C program and its compilation error log with "
    "{opt_level} optimisation level, analyze and correct the program "
    "to resolve {error_class}.\n{program_to_fix}"
)
LOG_DELIMITER = "--- ERROR LOG ---"


class ErrorClass(str, Enum):
    COMPILATION = "compilation_errors"
    SANITIZER = "sanitizer_errors"

    @property
    def phrase(self) -> str:
        return "compilation errors" if self is ErrorClass.COMPILATION else "sanitizer errors"


@dataclass
class RepairPolicy:
    max_attempts: int = 2
    opt_level_arg: str = "-O0"
    stop_on: str = "first_valid"

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass
class RepairAttempt:
    attempt_index: int  # 1-based
    error_class: ErrorClass
    prompt: str
    response_excerpt_ref: str
    extracted: bool
    reverify_static: str | None = None
    reverify_dynamic: str | None = None
    wall_time_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "attempt_index": self.attempt_index,
            "error_class": self.error_class.value,
            "response_excerpt_ref": self.response_excerpt_ref,
            "extracted": self.extracted,
            "reverify_static": self.reverify_static,
            "reverify_dynamic": self.reverify_dynamic,
            "wall_time_ms": self.wall_time_ms,
        }


@dataclass
class RepairTrace:
    program_id: str
    attempts: list[RepairAttempt] = field(default_factory=list)
    final_status: ProgramStatus | None = None
    total_time_ms: int = 0
    incomplete: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "program_id": self.program_id,
            "attempts": [a.to_dict() for a in self.attempts],
            "final_status": self.final_status.value if self.final_status else None,
            "total_time_ms": self.total_time_ms,
            "incomplete": self.incomplete,
            "error": self.error,
        }


def build_prompt(
    source: str, log: ErrorLog, error_class: ErrorClass, opt_level_arg: str
) -> str:
    """Render the fixed repair-prompt template around source + verbatim log."""
    if not source:
        raise ValueError("source must be non-empty")
    program_to_fix = f"{source}\n{LOG_DELIMITER}\n{log.verbatim}"
    return PROMPT_TEMPLATE.format(
        opt_level=opt_level_arg,
        error_class=error_class.phrase,
        program_to_fix=program_to_fix,
    )


@dataclass
class _Verification:
    """One full static(+dynamic) check of a working source."""

    static: ValidationOutcome
    dynamics: list[ValidationOutcome]

    @property
    def valid(self) -> bool:
        # Overall dynamic verdict is pass iff every profile run passed
        # (vacuously true when no profiles are configured).
        return self.static.verdict is Verdict.PASS and all(
            o.verdict is Verdict.PASS for o in self.dynamics
        )

    @property
    def error_class(self) -> ErrorClass:
        if self.static.verdict is not Verdict.PASS:
            return ErrorClass.COMPILATION
        return ErrorClass.SANITIZER

    @property
    def failing_log(self) -> ErrorLog:
        if self.static.verdict is not Verdict.PASS:
            return self.static.error_log
        for outcome in self.dynamics:
            if outcome.verdict is not Verdict.PASS:
                return outcome.error_log
        return self.static.error_log

    @property
    def failing_ref(self) -> str:
        if self.static.verdict is not Verdict.PASS:
            return self.static.id
        for outcome in self.dynamics:
            if outcome.verdict is not Verdict.PASS:
                return outcome.id
        return self.static.id

    @property
    def dynamic_verdict(self) -> str | None:
        if not self.dynamics:
            return None
        for outcome in self.dynamics:
            if outcome.verdict is not Verdict.PASS:
                return outcome.verdict.value
        return Verdict.PASS.value

    @property
    def status(self) -> ProgramStatus:
        if self.valid:
            return ProgramStatus.VALID
        if self.error_class is ErrorClass.COMPILATION:
            return ProgramStatus.STATICALLY_INVALID
        return ProgramStatus.DYNAMICALLY_INVALID


def _verify(program: TestProgram, source_rel: str, cfg: ToolchainConfig, root: Path) -> _Verification:
    """Validate the program as if its source were at ``source_rel``.

    Raises ToolchainError on any infrastructure fault so the caller can
    abort without mis-classifying the program.
    """
    view = replace(program, source_path=source_rel)
    static = validator.validate_static(view, cfg, root)
    if static.verdict is Verdict.TOOL_ERROR:
        raise ToolchainError(static)
    if static.verdict is not Verdict.PASS:
        return _Verification(static=static, dynamics=[])
    dynamics = validator.validate_dynamic(view, cfg, root)
    for outcome in dynamics:
        if outcome.verdict is Verdict.TOOL_ERROR:
            raise ToolchainError(outcome)
    return _Verification(static=static, dynamics=dynamics)


def refuzz_one(
    program: TestProgram,
    store: CorpusStore,
    cfg: ToolchainConfig,
    policy: RepairPolicy,
    client: CompletionClient,
) -> RepairTrace:
    """Run the full detect-prompt-fix-reverify loop on one program."""
    start = time.monotonic()
    trace = RepairTrace(program_id=program.id)
    root = store.root
    trace_dir = root / "traces" / program.id
    trace_dir.mkdir(parents=True, exist_ok=True)
    ext = program.language.extension
    working_text = store.source_text(program)
    (trace_dir / f"original{ext}").write_text(working_text, encoding="utf-8")

    def finish(status: ProgramStatus | None, error: str | None = None) -> RepairTrace:
        trace.final_status = status
        trace.incomplete = status is None
        trace.error = error
        trace.total_time_ms = int((time.monotonic() - start) * 1000)
        (trace_dir / "trace.json").write_text(
            json.dumps(trace.to_dict(), indent=2), encoding="utf-8"
        )
        return trace

    try:
        check = _verify(program, program.source_path, cfg, root)
    except ToolchainError as exc:
        logger.error("%s: %s", program.id, exc)
        return finish(None, str(exc))

    if check.valid:
        store.transition(program.id, ProgramStatus.VALID, check.static.id)
        return finish(ProgramStatus.VALID)
    store.transition(program.id, check.status, check.failing_ref)

    error_class = check.error_class
    log = check.failing_log

    while len(trace.attempts) < policy.max_attempts:
        index = len(trace.attempts) + 1
        attempt_dir = trace_dir / f"attempt-{index}"
        attempt_dir.mkdir(exist_ok=True)
        prompt = build_prompt(working_text, log, error_class, policy.opt_level_arg)
        (attempt_dir / "prompt.txt").write_text(prompt, encoding="utf-8")
        attempt_start = time.monotonic()
        try:
            response = client.complete(CompletionRequest(prompt=prompt, config=client.config))
        except (TransportError, ProtocolError, MockMiss) as exc:
            # No completion was produced, so no fix attempt happened; leave
            # the attempt budget untouched and surface the fault.
            logger.error("%s: model unavailable: %s", program.id, exc)
            return finish(None, f"model unavailable: {exc}")
        (attempt_dir / "response.txt").write_text(response.text, encoding="utf-8")
        store.record_attempt(program.id)
        candidate = extract_code(response.text)
        attempt = RepairAttempt(
            attempt_index=index,
            error_class=error_class,
            prompt=prompt,
            response_excerpt_ref=f"attempt-{index}/response.txt",
            extracted=candidate is not None,
        )
        trace.attempts.append(attempt)
        if candidate is None:
            attempt.wall_time_ms = int((time.monotonic() - attempt_start) * 1000)
            continue  # attempt consumed; same log goes to the next try

        candidate_file = attempt_dir / f"candidate{ext}"
        candidate_file.write_text(candidate, encoding="utf-8")
        working_text = candidate
        candidate_rel = str(candidate_file.relative_to(root))
        try:
            check = _verify(program, candidate_rel, cfg, root)
        except ToolchainError as exc:
            attempt.wall_time_ms = int((time.monotonic() - attempt_start) * 1000)
            logger.error("%s: %s", program.id, exc)
            return finish(None, str(exc))
        attempt.reverify_static = check.static.verdict.value
        attempt.reverify_dynamic = check.dynamic_verdict
        attempt.wall_time_ms = int((time.monotonic() - attempt_start) * 1000)
        outcomes = [check.static.to_dict()] + [o.to_dict() for o in check.dynamics]
        (attempt_dir / "outcomes.json").write_text(
            json.dumps(outcomes, indent=2), encoding="utf-8"
        )
        if check.valid:
            store.replace_source(program.id, candidate)
            store.transition(program.id, ProgramStatus.VALID, check.static.id)
            return finish(ProgramStatus.VALID)
        store.transition(program.id, check.status, check.failing_ref)
        error_class = check.error_class
        log = check.failing_log

    store.transition(program.id, ProgramStatus.CRASH_ONLY, check.failing_ref)
    return finish(ProgramStatus.CRASH_ONLY)


@dataclass
class ValidationSummary:
    counts: dict[str, int]
    tool_errors: int = 0


def validate_corpus(store: CorpusStore, cfg: ToolchainConfig, workers: int = 1) -> ValidationSummary:
    """Classify every non-terminal program (no repair); tool errors are skipped."""
    pending = store.pending()
    tool_errors = 0

    def job(prog: TestProgram) -> bool:
        try:
            check = _verify(prog, prog.source_path, cfg, store.root)
        except ToolchainError as exc:
            logger.error("%s: %s", prog.id, exc)
            return False
        ref = check.static.id if check.valid else check.failing_ref
        store.transition(prog.id, check.status, ref)
        return True

    if pending:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for ok in pool.map(job, pending):
                if not ok:
                    tool_errors += 1
    return ValidationSummary(counts=store.counts(), tool_errors=tool_errors)


def load_traces(store: CorpusStore) -> list[RepairTrace]:
    """Rehydrate persisted traces from ``traces/<id>/trace.json`` files."""
    traces = []
    for trace_file in sorted(store.root.glob("traces/*/trace.json")):
        data = json.loads(trace_file.read_text(encoding="utf-8"))
        attempts = [
            RepairAttempt(
                attempt_index=a["attempt_index"],
                error_class=ErrorClass(a["error_class"]),
                prompt="",
                response_excerpt_ref=a["response_excerpt_ref"],
                extracted=a["extracted"],
                reverify_static=a.get("reverify_static"),
                reverify_dynamic=a.get("reverify_dynamic"),
                wall_time_ms=a.get("wall_time_ms", 0),
            )
            for a in data.get("attempts", [])
        ]
        traces.append(
            RepairTrace(
                program_id=data["program_id"],
                attempts=attempts,
                final_status=ProgramStatus(data["final_status"]) if data.get("final_status") else None,
                total_time_ms=data.get("total_time_ms", 0),
                incomplete=data.get("incomplete", False),
                error=data.get("error"),
            )
        )
    return traces


def stats_from_store(store: CorpusStore) -> CampaignStats:
    """Recompute campaign statistics from persisted traces plus the index."""
    traces = load_traces(store)
    traced_ids = {t.program_id for t in traces}
    pre_valid = sum(1 for p in store.seed_bank() if p.id not in traced_ids)
    return compute_stats(traces, pre_valid=pre_valid, total=pre_valid + len(traces))


def refuzz_corpus(
    store: CorpusStore,
    cfg: ToolchainConfig,
    policy: RepairPolicy,
    client: CompletionClient,
    workers: int = 1,
) -> CampaignStats:
    """Refuzz every non-terminal program once, across a thread pool."""
    pending = store.pending()
    pre_valid = len(store.seed_bank())
    traces: list[RepairTrace] = []

    def job(prog: TestProgram) -> RepairTrace:
        try:
            return refuzz_one(prog, store, cfg, policy, client)
        except Exception as exc:  # noqa: BLE001 - a wedged worker must not kill the campaign
            logger.exception("%s: unexpected failure", prog.id)
            return RepairTrace(program_id=prog.id, incomplete=True, error=str(exc))

    if pending:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            futures = [pool.submit(job, prog) for prog in pending]
            for future in as_completed(futures):
                traces.append(future.result())

    stats = compute_stats(traces, pre_valid=pre_valid, total=pre_valid + len(traces))
    logger.info(
        "campaign: %d tests, valid %d -> %d, crash-only %d, tool errors %d",
        stats.total_tests,
        stats.valid_before,
        stats.valid_after,
        stats.crash_only,
        stats.tool_errors,
    )
    return stats
