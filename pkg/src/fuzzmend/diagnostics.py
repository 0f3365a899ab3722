"""Parsers turning raw compiler stderr and sanitizer runtime output into records.

Both parsers are total: any text (including random bytes decoded with
replacement) yields a well-formed ``ErrorLog``, never an exception.  Lines
that match no known shape are retained only in the verbatim log, which is
kept for prompt construction and capped at a line boundary.

Recognized shapes:

* ``<file>:<line>:<col>: <severity>: <message>`` - compiler diagnostics
  (severity ``error``, ``warning`` or ``fatal error``).
* ``clang: error: ...`` / ``gcc: fatal error: ...`` - driver and linker
  failures, recorded as severity ``fatal`` with no source location.
* ``==<pid>==ERROR: <Tool>Sanitizer: <kind> ...`` blocks through their
  ``SUMMARY:`` line, with ``#N 0x...`` stack frames (ASan, MSan, TSan and
  friends; MSan reports use the WARNING marker).
* ``<file>:<line>:<col>: runtime error: <message>`` - UBSan's inline form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

DEFAULT_LOG_CAP = 64 * 1024


class DiagnosticSource(str, Enum):
    COMPILER = "compiler"
    ASAN = "asan"
    UBSAN = "ubsan"
    MSAN = "msan"
    TSAN = "tsan"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    FATAL = "fatal"
    RUNTIME_ERROR = "runtime_error"


#: Severities that make a program a repair candidate; warnings never do.
REPAIR_SEVERITIES = frozenset({Severity.ERROR, Severity.FATAL, Severity.RUNTIME_ERROR})


@dataclass
class StackFrame:
    index: int
    pc: str | None = None
    symbol: str | None = None
    location: str | None = None

    def to_dict(self) -> dict:
        return {"index": self.index, "pc": self.pc, "symbol": self.symbol, "location": self.location}


@dataclass
class Diagnostic:
    source: DiagnosticSource
    severity: Severity
    kind: str
    message: str
    file: str | None = None
    line: int | None = None
    column: int | None = None
    frames: list[StackFrame] = field(default_factory=list)
    raw_excerpt: str = ""

    @property
    def triggers_repair(self) -> bool:
        return self.severity in REPAIR_SEVERITIES

    def to_dict(self) -> dict:
        return {
            "source": self.source.value,
            "severity": self.severity.value,
            "kind": self.kind,
            "message": self.message,
            "file": self.file,
            "line": self.line,
            "column": self.column,
            "frames": [f.to_dict() for f in self.frames],
        }


@dataclass
class ErrorLog:
    verbatim: str
    diagnostics: list[Diagnostic] = field(default_factory=list)
    truncated: bool = False

    def repair_triggers(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.triggers_repair]

    @property
    def needs_repair(self) -> bool:
        return bool(self.repair_triggers())

    def to_dict(self) -> dict:
        return {
            "truncated": self.truncated,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


def truncate_log(text: str, cap: int = DEFAULT_LOG_CAP) -> tuple[str, bool]:
    """Cap ``text`` at ``cap`` bytes, cutting at a line boundary and keeping the head."""
    if len(text.encode("utf-8", errors="replace")) <= cap:
        return text, False
    kept: list[str] = []
    size = 0
    for line in text.splitlines(keepends=True):
        line_size = len(line.encode("utf-8", errors="replace"))
        if size + line_size > cap:
            break
        kept.append(line)
        size += line_size
    return "".join(kept), True


# --------------------------------------------------------------------------
# Compiler logs
# --------------------------------------------------------------------------

_COMPILER_LINE = re.compile(
    r"^(?P<file>[^:\n]+):(?P<line>\d+):(?P<col>\d+):\s*"
    r"(?P<sev>error|warning|fatal error):\s*(?P<msg>.*)$"
)
_DRIVER_LINE = re.compile(
    r"^(?:clang|clang\+\+|gcc|g\+\+|cc|c\+\+)(?:-[\d.]+)?:\s*(?:fatal\s+)?error:\s*(?P<msg>.*)$"
)
_FLAG_BRACKET = re.compile(r"\[(?P<flags>-W[^\]]*)\]\s*$")


def _compiler_kind(severity: Severity, message: str) -> str:
    """Prefer the trailing [-W...] flag name; fall back on a generic kind."""
    m = _FLAG_BRACKET.search(message)
    if m:
        last = m.group("flags").split(",")[-1].strip()
        if last.startswith("-W"):
            return last[2:]
    if severity is Severity.WARNING:
        return "compile-warning"
    if severity is Severity.FATAL:
        return "fatal-error"
    return "compile-error"


def parse_compiler_log(text: str, cap: int = DEFAULT_LOG_CAP) -> ErrorLog:
    """Parse compiler stderr into located diagnostics plus fatal driver errors."""
    verbatim, truncated = truncate_log(text, cap)
    diagnostics: list[Diagnostic] = []
    for line in verbatim.splitlines():
        m = _COMPILER_LINE.match(line)
        if m:
            severity = Severity.FATAL if m.group("sev") == "fatal error" else Severity(m.group("sev"))
            message = m.group("msg")
            diagnostics.append(
                Diagnostic(
                    source=DiagnosticSource.COMPILER,
                    severity=severity,
                    kind=_compiler_kind(severity, message),
                    message=message,
                    file=m.group("file"),
                    line=int(m.group("line")),
                    column=int(m.group("col")),
                    raw_excerpt=line,
                )
            )
            continue
        m = _DRIVER_LINE.match(line)
        if m:
            diagnostics.append(
                Diagnostic(
                    source=DiagnosticSource.COMPILER,
                    severity=Severity.FATAL,
                    kind="driver-error",
                    message=m.group("msg"),
                    raw_excerpt=line,
                )
            )
    return ErrorLog(verbatim=verbatim, diagnostics=diagnostics, truncated=truncated)


# --------------------------------------------------------------------------
# Sanitizer logs
# --------------------------------------------------------------------------

_SAN_HEADER = re.compile(
    r"^==(?P<pid>\d+)==\s*(?:ERROR|WARNING):\s+(?P<tool>\w+)Sanitizer:\s*(?P<rest>.*)$"
)
_SAN_SUMMARY = re.compile(r"^\s*SUMMARY:\s+\w+Sanitizer:")
_UBSAN_INLINE = re.compile(
    r"^(?P<file>[^:\n]+):(?P<line>\d+):(?P<col>\d+):\s*runtime error:\s*(?P<msg>.*)$"
)
_FRAME_LINE = re.compile(r"^\s*#(?P<idx>\d+)\s+(?P<rest>\S.*)$")
_LOCATION_TOKEN = re.compile(r"^\S+:\d+(?::\d+)?$")

# Tools sharing the ==pid== block structure, mapped onto report sources.
# Leak reports come out of the ASan runtime; unknown tools degrade to asan.
_TOOL_SOURCES = {
    "Address": DiagnosticSource.ASAN,
    "Leak": DiagnosticSource.ASAN,
    "Memory": DiagnosticSource.MSAN,
    "Thread": DiagnosticSource.TSAN,
    "Undefined": DiagnosticSource.UBSAN,
    "UndefinedBehavior": DiagnosticSource.UBSAN,
}

_KIND_STOPWORDS = (" on ", " at ", " in ", " during ", " (")


def _extract_kind(rest: str) -> str:
    """First phrase of the header text, e.g. "stack-buffer-overflow on 0x.." -> kind."""
    cut = len(rest)
    for stop in _KIND_STOPWORDS:
        pos = rest.find(stop)
        if pos != -1:
            cut = min(cut, pos)
    kind = rest[:cut].strip().rstrip(":").strip()
    return kind or "unclassified"


def _parse_frame(line: str) -> StackFrame | None:
    m = _FRAME_LINE.match(line)
    if not m:
        return None
    index = int(m.group("idx"))
    rest = m.group("rest")
    pc = None
    tokens = rest.split()
    if tokens and re.fullmatch(r"0x[0-9a-fA-F]+", tokens[0]):
        pc = tokens[0]
        tokens = tokens[1:]
    symbol = None
    location = None
    if tokens and tokens[0] == "in":
        tokens = tokens[1:]
        if tokens and _LOCATION_TOKEN.match(tokens[-1]):
            location = tokens[-1]
            tokens = tokens[:-1]
        # Drop trailing module/BuildId parentheticals from the symbol text.
        symbol = " ".join(t for t in tokens if not t.startswith("(")) or None
    return StackFrame(index=index, pc=pc, symbol=symbol, location=location)


def _scan_block(lines: list[str], start: int) -> int:
    """Return the exclusive end index of the block starting at ``start``."""
    i = start + 1
    while i < len(lines):
        if _SAN_SUMMARY.match(lines[i]):
            return i + 1
        if _SAN_HEADER.match(lines[i]):
            return i
        i += 1
    return len(lines)


def _block_frames(lines: list[str]) -> list[StackFrame]:
    """First contiguous frame run in the block (the fault stack)."""
    frames: list[StackFrame] = []
    in_run = False
    for line in lines:
        frame = _parse_frame(line)
        if frame is not None:
            if frames and frame.index <= frames[-1].index:
                break  # a second stack restarts numbering
            frames.append(frame)
            in_run = True
        elif in_run:
            break
    return frames


def parse_sanitizer_log(text: str, cap: int = DEFAULT_LOG_CAP) -> ErrorLog:
    """Parse sanitizer runtime output into one diagnostic per report block."""
    verbatim, truncated = truncate_log(text, cap)
    lines = verbatim.splitlines()
    diagnostics: list[Diagnostic] = []
    i = 0
    while i < len(lines):
        m = _SAN_HEADER.match(lines[i])
        if m:
            end = _scan_block(lines, i)
            block = lines[i:end]
            rest = m.group("rest")
            diagnostics.append(
                Diagnostic(
                    source=_TOOL_SOURCES.get(m.group("tool"), DiagnosticSource.ASAN),
                    severity=Severity.RUNTIME_ERROR,
                    kind=_extract_kind(rest),
                    message=rest.strip(),
                    frames=_block_frames(block),
                    raw_excerpt="\n".join(block),
                )
            )
            i = end
            continue
        m = _UBSAN_INLINE.match(lines[i])
        if m:
            message = m.group("msg")
            kind = message.split(":", 1)[0].strip() if ":" in message else message.strip()
            diagnostics.append(
                Diagnostic(
                    source=DiagnosticSource.UBSAN,
                    severity=Severity.RUNTIME_ERROR,
                    kind=kind or "unclassified",
                    message=message,
                    file=m.group("file"),
                    line=int(m.group("line")),
                    column=int(m.group("col")),
                    raw_excerpt=lines[i],
                )
            )
        i += 1
    return ErrorLog(verbatim=verbatim, diagnostics=diagnostics, truncated=truncated)


def tag_streams(stdout: str, stderr: str) -> str:
    """Combine captured streams into one log, stderr first (where reports go)."""
    return f"--- stderr ---\n{stderr}\n--- stdout ---\n{stdout}\n"
