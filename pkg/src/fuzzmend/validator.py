"""Static (compile) and dynamic (sanitizer run) validation under resource limits.

Every child process runs in its own process group with a deadline; on
timeout the whole group is killed so forked children die too.  Memory is
bounded two ways: compiler invocations get an address-space rlimit, while
sanitizer-instrumented binaries are watched by RSS polling instead - ASan
and MSan reserve terabytes of shadow address space, so RLIMIT_AS would
kill them at startup regardless of real usage.
"""

from __future__ import annotations

import os
import re
import resource
import shutil
import signal
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import psutil

from .corpus import TestProgram
from .diagnostics import (
    DEFAULT_LOG_CAP,
    ErrorLog,
    parse_compiler_log,
    parse_sanitizer_log,
    tag_streams,
)

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_MEMORY_LIMIT = 16 * 1024**3
# The configured memory limit targets runaway test programs.  Compiler
# invocations get at least this much so that a deliberately tiny limit
# (used to catch allocator bombs) cannot starve the toolchain itself.
_COMPILE_MEMORY_FLOOR = 1024**3
_CAPTURE_CAP = 1024 * 1024  # raw bytes retained per stream before parsing
_POLL_INTERVAL = 0.02
_OPT_LEVEL_RE = re.compile(r"^-O[0123sz]$")


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    HANG = "hang"
    RESOURCE_EXCEEDED = "resource_exceeded"
    TOOL_ERROR = "tool_error"


class Phase(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class ToolchainError(Exception):
    """Infrastructure fault (missing compiler, broken instrumented build).

    Never counted as program invalidity; carries the offending outcome.
    """

    def __init__(self, outcome: "ValidationOutcome"):
        super().__init__(f"tool error during {outcome.phase.value} validation")
        self.outcome = outcome


@dataclass
class SanitizerProfile:
    name: str
    compile_flags: list[str]
    runtime_env: list[str] = field(default_factory=list)  # KEY=VALUE strings

    def env_overrides(self) -> dict[str, str]:
        out = {}
        for item in self.runtime_env:
            key, _, value = item.partition("=")
            out[key] = value
        return out


def default_profiles() -> list[SanitizerProfile]:
    """ASan+UBSan in one binary, then MSan (the two are incompatible)."""
    return [
        SanitizerProfile(
            name="address_undefined",
            compile_flags=["-fsanitize=address,undefined", "-g"],
            # Leaks are not undefined behaviour and fuzzed programs rarely
            # free; counting them would quarantine nearly everything.
            runtime_env=["ASAN_OPTIONS=detect_leaks=0"],
        ),
        SanitizerProfile(
            name="memory",
            compile_flags=["-fsanitize=memory", "-g"],
        ),
    ]


@dataclass
class ToolchainConfig:
    compiler_path: str = "clang"
    base_flags: list[str] = field(
        # Newer clangs reject implicit declarations by default; pin that
        # behaviour so static validity does not depend on compiler age.
        default_factory=lambda: ["-Werror=implicit-function-declaration"]
    )
    opt_level: str = "-O0"
    sanitizer_profiles: list[SanitizerProfile] = field(default_factory=default_profiles)
    timeout_s: float = DEFAULT_TIMEOUT_S
    memory_limit_bytes: int = DEFAULT_MEMORY_LIMIT
    work_dir: Path = Path("work")
    determinism_runs: int = 1
    log_cap_bytes: int = DEFAULT_LOG_CAP

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.memory_limit_bytes <= 0:
            raise ValueError("memory_limit_bytes must be positive")
        if not _OPT_LEVEL_RE.match(self.opt_level):
            raise ValueError(f"bad optimisation level {self.opt_level!r}")
        self.work_dir = Path(self.work_dir)


@dataclass
class ValidationOutcome:
    id: str
    program_id: str
    phase: Phase
    verdict: Verdict
    error_log: ErrorLog
    exit_code: int | None = None
    wall_time_ms: int = 0
    peak_memory_bytes: int | None = None
    profile: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "program_id": self.program_id,
            "phase": self.phase.value,
            "verdict": self.verdict.value,
            "exit_code": self.exit_code,
            "wall_time_ms": self.wall_time_ms,
            "peak_memory_bytes": self.peak_memory_bytes,
            "profile": self.profile,
            "error_log": self.error_log.to_dict(),
        }


# --------------------------------------------------------------------------
# Child process execution
# --------------------------------------------------------------------------


@dataclass
class ProcessResult:
    exit_code: int | None
    timed_out: bool
    memory_exceeded: bool
    wall_time_ms: int
    peak_rss: int
    stdout: str
    stderr: str
    spawn_error: str | None = None


class _StreamReader(threading.Thread):
    """Drains a pipe fully but retains at most ``cap`` bytes."""

    def __init__(self, stream, cap: int = _CAPTURE_CAP):
        super().__init__(daemon=True)
        self._stream = stream
        self._cap = cap
        self._chunks: list[bytes] = []
        self._size = 0
        self.start()

    def run(self) -> None:
        try:
            while True:
                chunk = self._stream.read(65536)
                if not chunk:
                    return
                if self._size < self._cap:
                    take = chunk[: self._cap - self._size]
                    self._chunks.append(take)
                    self._size += len(take)
        except (OSError, ValueError):
            return

    def text(self) -> str:
        self.join()
        return b"".join(self._chunks).decode("utf-8", errors="replace")


def _rlimit_preexec(memory_limit_bytes: int | None):
    def apply() -> None:
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
        if memory_limit_bytes is not None:
            resource.setrlimit(resource.RLIMIT_AS, (memory_limit_bytes, memory_limit_bytes))

    return apply


def _tree_rss(proc: psutil.Process) -> int:
    rss = 0
    try:
        rss = proc.memory_info().rss
        for child in proc.children(recursive=True):
            try:
                rss += child.memory_info().rss
            except psutil.Error:
                continue
    except psutil.Error:
        pass
    return rss


def _kill_group(pid: int) -> None:
    try:
        os.killpg(pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def run_limited(
    cmd: list[str],
    *,
    cwd: Path,
    env: dict[str, str] | None = None,
    timeout_s: float,
    memory_limit_bytes: int | None = None,
    rlimit_address_space: bool = False,
) -> ProcessResult:
    """Run ``cmd`` in its own process group with a wall-clock deadline.

    When ``memory_limit_bytes`` is set, the process tree's RSS is polled and
    the group killed on excess; ``rlimit_address_space`` additionally applies
    RLIMIT_AS in the child (safe only for uninstrumented binaries).
    """
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            cmd,
            cwd=str(cwd),
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
            preexec_fn=_rlimit_preexec(
                memory_limit_bytes if rlimit_address_space else None
            ),
        )
    except (FileNotFoundError, PermissionError, OSError) as exc:
        return ProcessResult(
            exit_code=None,
            timed_out=False,
            memory_exceeded=False,
            wall_time_ms=0,
            peak_rss=0,
            stdout="",
            stderr="",
            spawn_error=str(exc),
        )

    out_reader = _StreamReader(proc.stdout)
    err_reader = _StreamReader(proc.stderr)
    watcher = psutil.Process(proc.pid)
    timed_out = False
    memory_exceeded = False
    peak_rss = 0

    while True:
        if proc.poll() is not None:
            break
        elapsed = time.monotonic() - start
        if elapsed >= timeout_s:
            timed_out = True
            _kill_group(proc.pid)
            break
        if memory_limit_bytes is not None:
            rss = _tree_rss(watcher)
            peak_rss = max(peak_rss, rss)
            if rss > memory_limit_bytes:
                memory_exceeded = True
                _kill_group(proc.pid)
                break
        time.sleep(_POLL_INTERVAL)

    exit_code = proc.wait()
    stdout = out_reader.text()
    stderr = err_reader.text()
    wall_ms = int((time.monotonic() - start) * 1000)
    if timed_out:
        # The deadline fired; make the recorded time honour it even if the
        # final wait returned quickly.
        wall_ms = max(wall_ms, int(timeout_s * 1000))
    return ProcessResult(
        exit_code=exit_code,
        timed_out=timed_out,
        memory_exceeded=memory_exceeded,
        wall_time_ms=wall_ms,
        peak_rss=peak_rss,
        stdout=stdout,
        stderr=stderr,
    )


# --------------------------------------------------------------------------
# Validation operations
# --------------------------------------------------------------------------


def _new_outcome_id() -> str:
    return uuid.uuid4().hex[:12]


def _scratch_dir(cfg: ToolchainConfig, program_id: str, phase: str) -> Path:
    scratch = cfg.work_dir / program_id / phase
    shutil.rmtree(scratch, ignore_errors=True)
    scratch.mkdir(parents=True, exist_ok=True)
    return scratch


def _stage_source(source: Path, scratch: Path) -> str:
    staged = scratch / source.name
    shutil.copyfile(source, staged)
    return source.name


def _compile(
    cfg: ToolchainConfig,
    scratch: Path,
    source_name: str,
    extra_flags: list[str],
    binary_name: str,
) -> ProcessResult:
    cmd = (
        [cfg.compiler_path]
        + cfg.base_flags
        + extra_flags
        + [cfg.opt_level, source_name, "-o", binary_name]
    )
    return run_limited(
        cmd,
        cwd=scratch,
        timeout_s=cfg.timeout_s,
        memory_limit_bytes=max(cfg.memory_limit_bytes, _COMPILE_MEMORY_FLOOR),
        rlimit_address_space=True,
    )


def validate_static(program: TestProgram, cfg: ToolchainConfig, root: Path) -> ValidationOutcome:
    """Compile the program (no sanitizers); pass iff the compiler exits 0."""
    scratch = _scratch_dir(cfg, program.id, "static")
    source_name = _stage_source(root / program.source_path, scratch)
    result = _compile(cfg, scratch, source_name, [], "prog.bin")
    log_text = tag_streams(result.stdout, result.stderr)
    (scratch / "compile.log").write_text(log_text, encoding="utf-8")
    error_log = parse_compiler_log(log_text, cfg.log_cap_bytes)
    (scratch / "prog.bin").unlink(missing_ok=True)

    if result.spawn_error is not None:
        verdict = Verdict.TOOL_ERROR
    elif result.timed_out:
        verdict = Verdict.HANG
    elif result.memory_exceeded:
        verdict = Verdict.RESOURCE_EXCEEDED
    elif result.exit_code == 0:
        verdict = Verdict.PASS
    else:
        verdict = Verdict.FAIL
    return ValidationOutcome(
        id=_new_outcome_id(),
        program_id=program.id,
        phase=Phase.STATIC,
        verdict=verdict,
        error_log=error_log,
        exit_code=result.exit_code,
        wall_time_ms=result.wall_time_ms,
        peak_memory_bytes=result.peak_rss or None,
    )


def _run_profile(
    program: TestProgram, cfg: ToolchainConfig, root: Path, profile: SanitizerProfile
) -> ValidationOutcome:
    scratch = _scratch_dir(cfg, program.id, f"dynamic-{profile.name}")
    source_name = _stage_source(root / program.source_path, scratch)
    build = _compile(cfg, scratch, source_name, profile.compile_flags, "prog.bin")
    if build.spawn_error is not None or build.timed_out or build.exit_code != 0:
        log_text = tag_streams(build.stdout, build.stderr)
        (scratch / "build.log").write_text(log_text, encoding="utf-8")
        return ValidationOutcome(
            id=_new_outcome_id(),
            program_id=program.id,
            phase=Phase.DYNAMIC,
            verdict=Verdict.TOOL_ERROR,
            error_log=parse_compiler_log(log_text, cfg.log_cap_bytes),
            exit_code=build.exit_code,
            wall_time_ms=build.wall_time_ms,
            profile=profile.name,
        )

    env = os.environ.copy()
    env.update(profile.env_overrides())
    total_ms = build.wall_time_ms
    verdict = Verdict.PASS
    error_log = ErrorLog(verbatim="")
    exit_code: int | None = None
    peak = 0
    runs = max(1, cfg.determinism_runs)
    for _ in range(runs):
        result = run_limited(
            [str(scratch / "prog.bin")],
            cwd=scratch,
            env=env,
            timeout_s=cfg.timeout_s,
            memory_limit_bytes=cfg.memory_limit_bytes,
        )
        total_ms += result.wall_time_ms
        peak = max(peak, result.peak_rss)
        exit_code = result.exit_code
        log_text = tag_streams(result.stdout, result.stderr)
        (scratch / "run.log").write_text(log_text, encoding="utf-8")
        error_log = parse_sanitizer_log(log_text, cfg.log_cap_bytes)
        if result.timed_out:
            verdict = Verdict.HANG
            break
        if result.memory_exceeded:
            verdict = Verdict.RESOURCE_EXCEEDED
            break
        if error_log.needs_repair:
            # Nonzero exit codes without sanitizer findings stay PASS:
            # language-defined failures are allowed.
            verdict = Verdict.FAIL
            break
    wall_ms = total_ms
    if verdict is Verdict.HANG:
        wall_ms = max(wall_ms, int(cfg.timeout_s * 1000))
    return ValidationOutcome(
        id=_new_outcome_id(),
        program_id=program.id,
        phase=Phase.DYNAMIC,
        verdict=verdict,
        error_log=error_log,
        exit_code=exit_code,
        wall_time_ms=wall_ms,
        peak_memory_bytes=peak or None,
        profile=profile.name,
    )


def validate_dynamic(
    program: TestProgram, cfg: ToolchainConfig, root: Path
) -> list[ValidationOutcome]:
    """Build and run the program under each sanitizer profile in order."""
    return [_run_profile(program, cfg, root, profile) for profile in cfg.sanitizer_profiles]


def classify(
    static_outcome: ValidationOutcome,
    dynamic_outcomes: list[ValidationOutcome] | None = None,
) -> "ProgramStatus":
    """Map validation verdicts onto a program status; tool errors are raised."""
    from .corpus import ProgramStatus

    if static_outcome.verdict is Verdict.TOOL_ERROR:
        raise ToolchainError(static_outcome)
    if static_outcome.verdict is not Verdict.PASS:
        return ProgramStatus.STATICALLY_INVALID
    dynamic_outcomes = dynamic_outcomes or []
    for outcome in dynamic_outcomes:
        if outcome.verdict is Verdict.TOOL_ERROR:
            raise ToolchainError(outcome)
    if any(o.verdict is not Verdict.PASS for o in dynamic_outcomes):
        return ProgramStatus.DYNAMICALLY_INVALID
    return ProgramStatus.VALID
