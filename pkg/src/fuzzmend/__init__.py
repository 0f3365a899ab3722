"""fuzzmend: validate, repair and quarantine LLM-generated compiler test programs."""

from .corpus import (
    CorpusStore,
    IllegalTransition,
    Language,
    Origin,
    ProgramStatus,
    TestProgram,
)
from .diagnostics import (
    Diagnostic,
    ErrorLog,
    StackFrame,
    parse_compiler_log,
    parse_sanitizer_log,
)
from .llm import CompletionRequest, MockClient, ModelConfig, OllamaClient, extract_code
from .repair import RepairPolicy, RepairTrace, build_prompt, refuzz_corpus, refuzz_one
from .report import CampaignStats, compute_stats
from .validator import (
    SanitizerProfile,
    ToolchainConfig,
    ValidationOutcome,
    Verdict,
    classify,
    validate_dynamic,
    validate_static,
)

__version__ = "0.1.0"

__all__ = [
    "CampaignStats",
    "CompletionRequest",
    "CorpusStore",
    "Diagnostic",
    "ErrorLog",
    "IllegalTransition",
    "Language",
    "MockClient",
    "ModelConfig",
    "OllamaClient",
    "Origin",
    "ProgramStatus",
    "RepairPolicy",
    "RepairTrace",
    "SanitizerProfile",
    "StackFrame",
    "TestProgram",
    "ToolchainConfig",
    "ValidationOutcome",
    "Verdict",
    "build_prompt",
    "classify",
    "compute_stats",
    "extract_code",
    "parse_compiler_log",
    "parse_sanitizer_log",
    "refuzz_corpus",
    "refuzz_one",
    "validate_dynamic",
    "validate_static",
]
