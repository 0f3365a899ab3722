"""Black-box program generation: keyword-seeded prompts against the local model.

Each prompt asks for a complete, self-contained C program exercising a
small random sample of keywords drawn from two families (general
programming constructs and compiler-optimisation terms).  Extracted
programs are ingested into the corpus as Raw; the repair loop is a
separate phase.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import CorpusStore, Language, Origin, TestProgram
from .llm import CompletionClient, CompletionRequest, TransportError, ProtocolError, MockMiss, extract_code

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = (
    "Write a complete, self-contained C program that exercises the following "
    "concepts: {keywords}. The program must consist of a single file with a "
    "main function, take no input, and terminate on its own. "
    "Reply with exactly one C code block and no other code."
)


def default_keyword_pool() -> list[str]:
    """Keyword pool shipped with the package (one keyword per line)."""
    text = resources.files("fuzzmend").joinpath("keywords.txt").read_text(encoding="utf-8")
    return _parse_pool(text)


def load_keyword_pool(path: str | Path) -> list[str]:
    return _parse_pool(Path(path).read_text(encoding="utf-8"))


def _parse_pool(text: str) -> list[str]:
    pool = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            pool.append(line)
    return pool


@dataclass
class GenSpec:
    keyword_pool: list[str] = field(default_factory=default_keyword_pool)
    keywords_per_prompt: int = 3
    count: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.keyword_pool:
            raise ValueError("keyword_pool must be non-empty")
        if not 1 <= self.keywords_per_prompt <= len(self.keyword_pool):
            raise ValueError("keywords_per_prompt must fit inside the pool")


@dataclass
class GenerationReport:
    programs: list[TestProgram]
    extraction_failures: int = 0
    transport_failures: int = 0


def gen_prompt(spec: GenSpec, rng: random.Random) -> str:
    """Sample distinct keywords and render the fixed request template."""
    keywords = rng.sample(spec.keyword_pool, spec.keywords_per_prompt)
    return PROMPT_TEMPLATE.format(keywords=", ".join(keywords))


def generate(
    spec: GenSpec, client: CompletionClient, store: CorpusStore
) -> GenerationReport:
    """Generate ``spec.count`` candidate programs and ingest the usable ones."""
    rng = random.Random(spec.seed)
    report = GenerationReport(programs=[])
    for i in range(spec.count):
        prompt = gen_prompt(spec, rng)
        try:
            response = client.complete(CompletionRequest(prompt=prompt, config=client.config))
        except (TransportError, ProtocolError, MockMiss) as exc:
            logger.warning("generation %d/%d failed: %s", i + 1, spec.count, exc)
            report.transport_failures += 1
            continue
        code = extract_code(response.text)
        if code is None:
            logger.info("generation %d/%d: no code in reply, skipped", i + 1, spec.count)
            report.extraction_failures += 1
            continue
        report.programs.append(store.ingest_source(code, Origin.BLACKBOX, Language.C))
    return report
