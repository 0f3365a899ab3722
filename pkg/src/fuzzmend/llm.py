"""Clients for a locally hosted language model, plus code extraction.

The live backend speaks the Ollama-style JSON generate endpoint
(``POST /api/generate`` with ``{model, prompt, stream: false}``, answer in
the ``response`` field), but everything behind :class:`CompletionClient`
is swappable, so any local server with a thin adapter works.  Tests and
offline runs use :class:`MockClient`, which replays canned responses from
a cassette file and performs no network operations at all.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "FUZZMEND_ENDPOINT"
DEFAULT_ENDPOINT = "http://127.0.0.1:11434"
DEFAULT_MAX_RESPONSE = 256 * 1024
MAX_TRANSPORT_RETRIES = 2


class TransportError(Exception):
    """The model server could not be reached or answered non-2xx."""


class ProtocolError(Exception):
    """The server answered, but not in the expected JSON shape."""


class MockMiss(KeyError):
    """The mock backend has no canned response for this prompt."""


@dataclass
class ModelConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model_name: str = "llama3.2"
    temperature: float = 0.2
    max_response_bytes: int = DEFAULT_MAX_RESPONSE
    request_timeout_s: float = 120.0
    transport_retries: int = 1
    max_inflight: int = 2

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 <= self.transport_retries <= MAX_TRANSPORT_RETRIES:
            raise ValueError(f"transport_retries must be in 0..{MAX_TRANSPORT_RETRIES}")


@dataclass
class CompletionRequest:
    prompt: str
    config: ModelConfig

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")

    @property
    def prompt_sha256(self) -> str:
        return hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()


@dataclass
class CompletionResponse:
    text: str
    latency_ms: int
    backend: str  # "live" | "mock"
    truncated: bool = False


def _cap_text(text: str, cap: int) -> tuple[str, bool]:
    raw = text.encode("utf-8")
    if len(raw) <= cap:
        return text, False
    return raw[:cap].decode("utf-8", errors="replace"), True


class CompletionClient:
    """Interface shared by the live and mock backends."""

    config: ModelConfig

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


class OllamaClient(CompletionClient):
    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self._inflight = threading.BoundedSemaphore(self.config.max_inflight)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        cfg = req.config
        url = cfg.endpoint.rstrip("/") + "/api/generate"
        payload = {
            "model": cfg.model_name,
            "prompt": req.prompt,
            "stream": False,
            "options": {"temperature": cfg.temperature},
        }
        start = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(cfg.transport_retries + 1):
            try:
                with self._inflight:
                    resp = requests.post(url, json=payload, timeout=cfg.request_timeout_s)
                resp.raise_for_status()
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("model request failed (try %d): %s", attempt + 1, exc)
                continue
            try:
                body = resp.json()
                text = body["response"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(f"malformed model response: {exc}") from exc
            if not isinstance(text, str):
                raise ProtocolError("model response field is not text")
            text, truncated = _cap_text(text, cfg.max_response_bytes)
            return CompletionResponse(
                text=text,
                latency_ms=int((time.monotonic() - start) * 1000),
                backend="live",
                truncated=truncated,
            )
        raise TransportError(str(last_error))


class MockClient(CompletionClient):
    """Deterministic offline backend.

    Responses are looked up by prompt hash from cassette records; records
    without a hash form an ordered fallback queue, consumed first-in
    first-out (useful when prompts embed run-specific text such as
    sanitizer pids).
    """

    def __init__(
        self,
        keyed: dict[str, str] | None = None,
        queue: list[str] | None = None,
        config: ModelConfig | None = None,
    ):
        self.config = config or ModelConfig()
        self._keyed = dict(keyed or {})
        self._queue = list(queue or [])
        self._lock = threading.Lock()

    @classmethod
    def from_cassette(cls, path: str | Path, config: ModelConfig | None = None) -> "MockClient":
        records = json.loads(Path(path).read_text(encoding="utf-8"))
        keyed: dict[str, str] = {}
        queue: list[str] = []
        for record in records:
            sha = record.get("prompt_sha256")
            if sha:
                keyed[sha] = record["response_text"]
            else:
                queue.append(record["response_text"])
        return cls(keyed=keyed, queue=queue, config=config)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            text = self._keyed.get(req.prompt_sha256)
            if text is None:
                if not self._queue:
                    raise MockMiss(req.prompt_sha256)
                text = self._queue.pop(0)
        text, truncated = _cap_text(text, req.config.max_response_bytes)
        return CompletionResponse(text=text, latency_ms=0, backend="mock", truncated=truncated)


def save_cassette(path: str | Path, records: list[dict]) -> None:
    """Write cassette records ({prompt_sha256, response_text}) as JSON."""
    Path(path).write_text(json.dumps(records, indent=2), encoding="utf-8")


# --------------------------------------------------------------------------
# Code extraction
# --------------------------------------------------------------------------

_FENCE_LANGS = {"", "c", "cpp"}
_REGION_START = (
    "#include",
    "int ",
    "void ",
    "char ",
    "float ",
    "double ",
    "long ",
    "short ",
    "unsigned ",
    "signed ",
    "struct ",
    "union ",
    "enum ",
    "typedef ",
    "static ",
    "const ",
)


def _iter_fences(text: str):
    lines = text.split("\n")
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if stripped.startswith("```"):
            lang = stripped[3:].strip().lower()
            body: list[str] = []
            j = i + 1
            while j < len(lines) and not lines[j].strip().startswith("```"):
                body.append(lines[j])
                j += 1
            if j < len(lines):  # found a closing fence
                yield lang, "\n".join(body)
                i = j + 1
                continue
        i += 1


def _plausible_region(text: str) -> str | None:
    """Longest brace-balanced region starting at an include or type keyword."""
    lines = text.split("\n")
    best: str | None = None
    for start, line in enumerate(lines):
        if not line.lstrip().startswith(_REGION_START):
            continue
        depth = 0
        saw_brace = False
        end = None
        for k in range(start, len(lines)):
            depth += lines[k].count("{") - lines[k].count("}")
            if "{" in lines[k]:
                saw_brace = True
            if depth < 0:
                break
            if saw_brace and depth == 0 and "}" in lines[k]:
                end = k  # last top-level closing brace so far
        if end is not None and end - start + 1 >= 3:
            region = "\n".join(lines[start : end + 1])
            if best is None or len(region) > len(best):
                best = region
    return best


def extract_code(text: str) -> str | None:
    """Pull C source out of model prose; None when no code can be found."""
    for lang, body in _iter_fences(text):
        if lang in _FENCE_LANGS:
            return body
    return _plausible_region(text)
