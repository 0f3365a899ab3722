"""Persistent store and lifecycle state machine for fuzzer-generated test programs.

Programs enter the store as ``Raw``, move through invalid states while the
repair loop works on them, and end up either ``Valid`` (seed-bank members)
or ``CrashOnly`` (quarantined, kept for crash testing only).  All state
changes are recorded in an append-only line-delimited JSON journal, which
is the single source of truth: replaying it from empty reconstructs the
exact index, and the on-disk file layout is reconciled to it on open.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

JOURNAL_NAME = "corpus.journal"
DEFAULT_MAX_SOURCE_BYTES = 1 << 20  # per-file ingestion cap


class Language(str, Enum):
    C = "c"
    CPP = "cpp"

    @property
    def extension(self) -> str:
        return ".c" if self is Language.C else ".cpp"


class Origin(str, Enum):
    BLACKBOX = "blackbox"
    FUZZ4ALL = "fuzz4all"
    WHITEFOX = "whitefox"
    EXTERNAL = "external"


class ProgramStatus(str, Enum):
    RAW = "Raw"
    STATICALLY_INVALID = "StaticallyInvalid"
    DYNAMICALLY_INVALID = "DynamicallyInvalid"
    VALID = "Valid"
    CRASH_ONLY = "CrashOnly"


# Valid and CrashOnly are terminal; invalid states may oscillate while the
# repair loop swaps in new candidates.
LEGAL_TRANSITIONS: dict[ProgramStatus, frozenset[ProgramStatus]] = {
    ProgramStatus.RAW: frozenset(
        {
            ProgramStatus.STATICALLY_INVALID,
            ProgramStatus.DYNAMICALLY_INVALID,
            ProgramStatus.VALID,
        }
    ),
    ProgramStatus.STATICALLY_INVALID: frozenset(
        {
            ProgramStatus.STATICALLY_INVALID,
            ProgramStatus.DYNAMICALLY_INVALID,
            ProgramStatus.VALID,
            ProgramStatus.CRASH_ONLY,
        }
    ),
    ProgramStatus.DYNAMICALLY_INVALID: frozenset(
        {
            ProgramStatus.STATICALLY_INVALID,
            ProgramStatus.DYNAMICALLY_INVALID,
            ProgramStatus.VALID,
            ProgramStatus.CRASH_ONLY,
        }
    ),
    ProgramStatus.VALID: frozenset(),
    ProgramStatus.CRASH_ONLY: frozenset(),
}

STATUS_DIRS: dict[ProgramStatus, str] = {
    ProgramStatus.RAW: "incoming",
    ProgramStatus.STATICALLY_INVALID: "work",
    ProgramStatus.DYNAMICALLY_INVALID: "work",
    ProgramStatus.VALID: "valid",
    ProgramStatus.CRASH_ONLY: "crash_only",
}

NON_TERMINAL = frozenset(
    {
        ProgramStatus.RAW,
        ProgramStatus.STATICALLY_INVALID,
        ProgramStatus.DYNAMICALLY_INVALID,
    }
)


class CorpusError(Exception):
    """Base class for corpus store failures."""


class IngestError(CorpusError):
    """A single file could not be ingested (unreadable, oversize, ...)."""


class UnknownProgram(CorpusError):
    """The given id is not in the store index."""


class IllegalTransition(CorpusError):
    """The requested status change violates the lifecycle state machine."""


class TransitionInProgress(CorpusError):
    """Another thread is already transitioning this program id."""


@dataclass
class TestProgram:
    """One test program plus its lifecycle metadata."""

    __test__ = False  # keep pytest collection away from the Test* name

    id: str
    source_path: str  # relative to the store root
    language: Language
    origin: Origin
    status: ProgramStatus
    created_at: str  # UTC ISO-8601
    repair_attempts: int = 0
    last_outcome_ref: str | None = None
    sha256: str = ""
    duplicate: bool = False


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _detect_language(path: Path) -> Language:
    if path.suffix.lower() in (".cpp", ".cc", ".cxx", ".c++"):
        return Language.CPP
    return Language.C


@dataclass
class _Journal:
    """Append-only writer for the journal file; appends are serialized."""

    path: Path
    seq: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def append(self, record: dict) -> int:
        with self._lock:
            self.seq += 1
            record.setdefault("timestamp", _utcnow())
            record = {"seq": self.seq, **record}
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
            return self.seq


class CorpusStore:
    """Directory-backed corpus with a fixed layout and a replayable journal.

    Layout under ``root``: ``incoming/`` (freshly ingested), ``work/``
    (known-invalid, being repaired), ``valid/`` (seed bank), ``crash_only/``
    (quarantine).  The journal lives at ``root/corpus.journal``.
    """

    LAYOUT = ("incoming", "valid", "crash_only", "work")

    def __init__(self, root: Path):
        self.root = Path(root)
        self._journal = _Journal(self.root / JOURNAL_NAME)
        self._index: dict[str, TestProgram] = {}
        self._seen_hashes: set[str] = set()
        self._ingest_count = 0
        self._index_lock = threading.Lock()
        self._busy: set[str] = set()

    # ------------------------------------------------------------------
    # Opening and replay
    # ------------------------------------------------------------------

    @classmethod
    def open(cls, root: str | Path) -> "CorpusStore":
        """Open (creating if needed) the store at ``root`` and replay its journal."""
        store = cls(Path(root))
        store.root.mkdir(parents=True, exist_ok=True)
        for sub in cls.LAYOUT:
            (store.root / sub).mkdir(exist_ok=True)
        store._replay()
        store._reconcile()
        return store

    def _replay(self) -> None:
        path = self._journal.path
        if not path.exists():
            return
        max_seq = 0
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    # A crash can leave a half-written final line; anything
                    # after it is unreachable, so stop there.
                    logger.warning("journal: truncated record at line %d, ignoring tail", lineno)
                    break
                self._apply(record)
                max_seq = max(max_seq, int(record.get("seq", 0)))
        self._journal.seq = max_seq

    def _apply(self, record: dict) -> None:
        event = record.get("event")
        prog_id = record.get("id", "")
        if event == "ingest":
            language = Language(record.get("language", "c"))
            status = ProgramStatus.RAW
            prog = TestProgram(
                id=prog_id,
                source_path=self._path_for(prog_id, status, language),
                language=language,
                origin=Origin(record.get("origin", "external")),
                status=status,
                created_at=record.get("timestamp", _utcnow()),
                sha256=record.get("sha256", ""),
                duplicate=bool(record.get("duplicate", False)),
            )
            self._index[prog.id] = prog
            self._seen_hashes.add(prog.sha256)
            self._ingest_count += 1
        elif event == "transition":
            prog = self._index.get(prog_id)
            if prog is None:
                logger.warning("journal: transition for unknown id %s", prog_id)
                return
            prog.status = ProgramStatus(record["status"])
            prog.source_path = self._path_for(prog.id, prog.status, prog.language)
            prog.last_outcome_ref = record.get("outcome_ref")
            if record.get("sha256"):
                prog.sha256 = record["sha256"]
        elif event == "attempt":
            prog = self._index.get(prog_id)
            if prog is not None:
                prog.repair_attempts += 1
        elif event == "rewrite":
            prog = self._index.get(prog_id)
            if prog is not None and record.get("sha256"):
                prog.sha256 = record["sha256"]
        else:
            logger.warning("journal: unknown event %r ignored", event)

    def _reconcile(self) -> None:
        """Move any source file that a crash left in a stale directory."""
        for prog in self._index.values():
            expected = self.root / prog.source_path
            if expected.exists():
                continue
            name = Path(prog.source_path).name
            for sub in self.LAYOUT:
                stray = self.root / sub / name
                if stray.exists():
                    shutil.move(str(stray), str(expected))
                    logger.info("reconciled %s: %s -> %s", prog.id, sub, expected.parent.name)
                    break
            else:
                logger.warning("reconcile: no source file found for %s", prog.id)

    # ------------------------------------------------------------------
    # Ingestion
    # ------------------------------------------------------------------

    def ingest(
        self,
        paths: list[str | Path],
        origin: Origin,
        max_source_bytes: int = DEFAULT_MAX_SOURCE_BYTES,
    ) -> list[TestProgram]:
        """Ingest each readable file; per-file failures are logged and skipped."""
        ingested = []
        for path in paths:
            try:
                ingested.append(self.ingest_file(path, origin, max_source_bytes))
            except IngestError as exc:
                logger.warning("ingest skipped %s: %s", path, exc)
        return ingested

    def ingest_file(
        self,
        path: str | Path,
        origin: Origin,
        max_source_bytes: int = DEFAULT_MAX_SOURCE_BYTES,
    ) -> TestProgram:
        """Ingest one file as a Raw program; raises IngestError on rejection."""
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise IngestError(f"unreadable: {exc}") from exc
        if len(data) > max_source_bytes:
            raise IngestError(
                f"file is {len(data)} bytes, exceeds the {max_source_bytes} byte cap"
            )
        return self._ingest_bytes(data, origin, _detect_language(path))

    def ingest_source(self, text: str, origin: Origin, language: Language = Language.C) -> TestProgram:
        """Ingest generated source text directly (used by the program generator)."""
        return self._ingest_bytes(text.encode("utf-8"), origin, language)

    def _ingest_bytes(self, data: bytes, origin: Origin, language: Language) -> TestProgram:
        sha = hashlib.sha256(data).hexdigest()
        with self._index_lock:
            self._ingest_count += 1
            prog_id = f"{sha[:12]}-{self._ingest_count:06d}"
            duplicate = sha in self._seen_hashes
            self._seen_hashes.add(sha)
            prog = TestProgram(
                id=prog_id,
                source_path=self._path_for(prog_id, ProgramStatus.RAW, language),
                language=language,
                origin=origin,
                status=ProgramStatus.RAW,
                created_at=_utcnow(),
                sha256=sha,
                duplicate=duplicate,
            )
            self._index[prog_id] = prog
        self._journal.append(
            {
                "timestamp": prog.created_at,
                "id": prog_id,
                "event": "ingest",
                "status": ProgramStatus.RAW.value,
                "outcome_ref": None,
                "origin": origin.value,
                "sha256": sha,
                "language": language.value,
                "duplicate": duplicate,
            }
        )
        (self.root / prog.source_path).write_bytes(data)
        return prog

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    def transition(
        self, prog_id: str, new_status: ProgramStatus, outcome_ref: str | None = None
    ) -> TestProgram:
        """Record a status change, moving the source file to its new directory.

        The journal record is written before the file move; `open()`
        reconciles the layout if a crash lands between the two.
        """
        with self._index_lock:
            prog = self._index.get(prog_id)
            if prog is None:
                raise UnknownProgram(prog_id)
            if new_status not in LEGAL_TRANSITIONS[prog.status]:
                raise IllegalTransition(f"{prog.status.value} -> {new_status.value}")
            if prog_id in self._busy:
                raise TransitionInProgress(prog_id)
            self._busy.add(prog_id)
        try:
            self._journal.append(
                {
                    "id": prog_id,
                    "event": "transition",
                    "status": new_status.value,
                    "outcome_ref": outcome_ref,
                    "origin": prog.origin.value,
                    "sha256": prog.sha256,
                }
            )
            old_path = self.root / prog.source_path
            new_rel = self._path_for(prog_id, new_status, prog.language)
            new_path = self.root / new_rel
            if old_path != new_path and old_path.exists():
                shutil.move(str(old_path), str(new_path))
            with self._index_lock:
                prog.status = new_status
                prog.source_path = new_rel
                prog.last_outcome_ref = outcome_ref
            return prog
        finally:
            with self._index_lock:
                self._busy.discard(prog_id)

    def record_attempt(self, prog_id: str) -> TestProgram:
        """Bump the repair-attempt counter for a program."""
        with self._index_lock:
            prog = self._index.get(prog_id)
            if prog is None:
                raise UnknownProgram(prog_id)
            prog.repair_attempts += 1
        self._journal.append(
            {
                "id": prog_id,
                "event": "attempt",
                "status": prog.status.value,
                "outcome_ref": None,
                "origin": prog.origin.value,
                "sha256": prog.sha256,
            }
        )
        return prog

    def replace_source(self, prog_id: str, text: str) -> TestProgram:
        """Overwrite the stored source with repaired text (status unchanged)."""
        with self._index_lock:
            prog = self._index.get(prog_id)
            if prog is None:
                raise UnknownProgram(prog_id)
        data = text.encode("utf-8")
        sha = hashlib.sha256(data).hexdigest()
        (self.root / prog.source_path).write_bytes(data)
        with self._index_lock:
            prog.sha256 = sha
        self._journal.append(
            {
                "id": prog_id,
                "event": "rewrite",
                "status": prog.status.value,
                "outcome_ref": None,
                "origin": prog.origin.value,
                "sha256": sha,
            }
        )
        return prog

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def seed_bank(self) -> list[TestProgram]:
        """All Valid programs; CrashOnly programs are never included."""
        return self.programs(ProgramStatus.VALID)

    def programs(self, status: ProgramStatus | None = None) -> list[TestProgram]:
        with self._index_lock:
            progs = list(self._index.values())
        if status is not None:
            progs = [p for p in progs if p.status is status]
        return sorted(progs, key=lambda p: p.id)

    def pending(self) -> list[TestProgram]:
        """Programs in a non-terminal state (candidates for refuzzing)."""
        return [p for p in self.programs() if p.status in NON_TERMINAL]

    def get(self, prog_id: str) -> TestProgram:
        with self._index_lock:
            prog = self._index.get(prog_id)
        if prog is None:
            raise UnknownProgram(prog_id)
        return prog

    def counts(self) -> dict[str, int]:
        out = {status.value: 0 for status in ProgramStatus}
        for prog in self.programs():
            out[prog.status.value] += 1
        return out

    def source_file(self, prog: TestProgram) -> Path:
        return self.root / prog.source_path

    def source_text(self, prog: TestProgram) -> str:
        return self.source_file(prog).read_text(encoding="utf-8", errors="replace")

    def _path_for(self, prog_id: str, status: ProgramStatus, language: Language) -> str:
        return f"{STATUS_DIRS[status]}/{prog_id}{language.extension}"
