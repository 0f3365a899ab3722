"""Parser tests: golden log fixtures, totality, truncation, containment."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzmend.diagnostics import (
    DiagnosticSource,
    ErrorLog,
    Severity,
    parse_compiler_log,
    parse_sanitizer_log,
    tag_streams,
    truncate_log,
)

from conftest import FIXTURES

GOLDEN_LOGS = sorted((FIXTURES / "logs").glob("*.log"))
assert len(GOLDEN_LOGS) >= 12


def parser_for(name: str):
    return parse_compiler_log if name.startswith("compile_") else parse_sanitizer_log


@pytest.mark.parametrize("log_path", GOLDEN_LOGS, ids=lambda p: p.stem)
def test_golden_fixture(log_path):
    expected = json.loads(log_path.with_suffix(".expected.json").read_text())
    parsed = parser_for(log_path.name)(log_path.read_text())
    assert parsed.to_dict() == expected


@pytest.mark.parametrize("log_path", GOLDEN_LOGS, ids=lambda p: p.stem)
def test_golden_excerpt_containment(log_path):
    text = log_path.read_text()
    parsed = parser_for(log_path.name)(text)
    assert not parsed.truncated
    for diag in parsed.diagnostics:
        assert diag.raw_excerpt in parsed.verbatim


def test_empty_compiler_log():
    log = parse_compiler_log("")
    assert log.diagnostics == []
    assert log.truncated is False
    assert log.verbatim == ""


def test_undeclared_function_error_line():
    line = "a.c:14:7: error: call to undeclared function 'vsprintf_s'"
    log = parse_compiler_log(line)
    assert len(log.diagnostics) == 1
    d = log.diagnostics[0]
    assert d.source is DiagnosticSource.COMPILER
    assert d.severity is Severity.ERROR
    assert (d.file, d.line, d.column) == ("a.c", 14, 7)


def test_mixed_log_repair_trigger_count():
    text = (FIXTURES / "logs" / "compile_mixed.log").read_text()
    log = parse_compiler_log(text)
    assert len(log.diagnostics) == 5
    assert len(log.repair_triggers()) == 2
    assert log.needs_repair


def test_warnings_alone_never_trigger_repair():
    log = parse_compiler_log("x.c:1:2: warning: unused variable 'y' [-Wunused-variable]")
    assert len(log.diagnostics) == 1
    assert not log.needs_repair


def test_clean_run_has_no_diagnostics():
    log = parse_sanitizer_log("Hello, world!\n")
    assert log.diagnostics == []


def test_ubsan_inline_division_by_zero():
    log = parse_sanitizer_log("x.c:5:13: runtime error: division by zero\n")
    assert len(log.diagnostics) == 1
    d = log.diagnostics[0]
    assert d.source is DiagnosticSource.UBSAN
    assert d.severity is Severity.RUNTIME_ERROR
    assert d.kind == "division by zero"
    assert (d.file, d.line, d.column) == ("x.c", 5, 13)


def test_symbolized_frames():
    text = (
        "==1234==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x602000000014\n"
        "READ of size 4 at 0x602000000014 thread T0\n"
        "    #0 0x4f2e21 in main /src/prog.c:9:13\n"
        "    #1 0x7f0e21 in __libc_start_main /build/glibc/csu/libc-start.c:308\n"
        "    #2 0x41d019 in _start (/out/prog+0x41d019)\n"
        "SUMMARY: AddressSanitizer: heap-buffer-overflow /src/prog.c:9:13 in main\n"
    )
    log = parse_sanitizer_log(text)
    assert len(log.diagnostics) == 1
    frames = log.diagnostics[0].frames
    assert [f.index for f in frames] == [0, 1, 2]
    assert frames[0].symbol == "main"
    assert frames[0].location == "/src/prog.c:9:13"
    assert frames[0].pc == "0x4f2e21"
    assert frames[2].symbol == "_start"
    assert frames[2].location is None


def test_concatenated_blocks_parse_to_union():
    block_a = (FIXTURES / "logs" / "asan_stack_buffer_overflow.log").read_text()
    block_b = (FIXTURES / "logs" / "msan_uninitialized.log").read_text()
    separate = parse_sanitizer_log(block_a).diagnostics + parse_sanitizer_log(block_b).diagnostics
    combined = parse_sanitizer_log(block_a + "\n" + block_b).diagnostics
    assert [d.to_dict() for d in combined] == [d.to_dict() for d in separate]


def test_truncation_at_line_boundary():
    text = "".join(f"line number {i}\n" for i in range(100))
    capped, truncated = truncate_log(text, cap=200)
    assert truncated
    assert len(capped.encode()) <= 200
    assert capped.endswith("\n")
    assert capped.splitlines() == text.splitlines()[: len(capped.splitlines())]


def test_truncated_flag_set_exactly_when_capped():
    log = parse_compiler_log("short", cap=1000)
    assert log.truncated is False
    log = parse_compiler_log("x" * 3000, cap=100)
    assert log.truncated is True


def test_tag_streams_wrapper_still_parses():
    stderr = "a.c:1:5: error: something broke\n"
    log = parse_compiler_log(tag_streams("program output", stderr))
    assert len(log.diagnostics) == 1
    assert "--- stdout ---" in log.verbatim


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=600))
def test_parser_totality_random_bytes(data):
    text = data.decode("utf-8", errors="replace")
    for parser in (parse_compiler_log, parse_sanitizer_log):
        log = parser(text)
        assert isinstance(log, ErrorLog)
        for diag in log.diagnostics:
            if not log.truncated:
                assert diag.raw_excerpt in log.verbatim


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=400))
def test_excerpt_containment_property(text):
    for parser in (parse_compiler_log, parse_sanitizer_log):
        log = parser(text)
        if not log.truncated:
            for diag in log.diagnostics:
                assert diag.raw_excerpt in log.verbatim


def test_fuzz_with_grammar_fragments():
    # Random splices of real report markers must not wedge the parsers.
    rng = random.Random(42)
    fragments = [
        "==123==ERROR: AddressSanitizer: ",
        "SUMMARY: ",
        "#0 0x",
        "runtime error: ",
        ":4:2: error: ",
        "\n",
        "==",
        "\x00\xff",
        "a.c",
    ]
    for _ in range(500):
        text = "".join(rng.choice(fragments) for _ in range(rng.randint(1, 30)))
        parse_compiler_log(text)
        parse_sanitizer_log(text)
