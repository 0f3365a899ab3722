"""Coverage tests: lcov parsing, component mapping, delta arithmetic."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzmend.coverage import (
    ComponentMap,
    CoverageTable,
    component_table,
    default_component_map,
    delta,
    parse_lcov,
    render_delta,
    render_lcov,
)

from conftest import FIXTURES

MINIMAL = "SF:/llvm/lib/Transforms/Vectorize/LoopVectorize.cpp\nFNF:10\nFNH:3\nend_of_record\n"


def test_parse_minimal_record():
    trace = parse_lcov(MINIMAL)
    assert len(trace.records) == 1
    record = trace.records[0]
    assert record.source_path == "/llvm/lib/Transforms/Vectorize/LoopVectorize.cpp"
    assert record.functions_found == 10
    assert record.functions_hit == 3


def test_parse_empty_input():
    trace = parse_lcov("")
    assert trace.records == []


def test_parse_toy_project_fixture_matches_gcov_oracle():
    # Oracle: gcov run on the instrumented 5-function toy, 2 executed.
    trace = parse_lcov((FIXTURES / "lcov" / "toy_project.info").read_text())
    assert len(trace.records) == 1
    record = trace.records[0]
    assert record.functions_found == 5
    assert record.functions_hit == 2
    assert record.per_function_hits == {
        "used_add": 1,
        "unused_mul": 0,
        "unused_sub": 0,
        "unused_div": 0,
        "main": 1,
    }


def test_counts_derived_from_fnda_when_fnf_absent():
    text = "SF:a.c\nFNDA:4,alpha\nFNDA:0,beta\nFNDA:1,gamma\nend_of_record\n"
    record = parse_lcov(text).records[0]
    assert record.functions_found == 3
    assert record.functions_hit == 2


def test_malformed_lines_warn_and_continue(caplog):
    text = "SF:a.c\nFNF:not-a-number\nFNH:1\nFNDA:2,fn\nend_of_record\n"
    with caplog.at_level("WARNING"):
        trace = parse_lcov(text)
    assert "malformed" in caplog.text
    record = trace.records[0]
    assert record.functions_hit == 1
    assert record.per_function_hits == {"fn": 2}


def test_parse_render_identity():
    text = (FIXTURES / "lcov" / "toy_project.info").read_text()
    trace = parse_lcov(text)
    again = parse_lcov(render_lcov(trace))
    assert again == trace


def test_component_table_single_rule():
    trace = parse_lcov(
        "SF:/src/a.c\nFNF:6\nFNH:3\nend_of_record\nSF:/src/b.c\nFNF:4\nFNH:2\nend_of_record\n"
    )
    table = component_table(trace, ComponentMap([("/src/*", "Everything")]))
    assert list(table.components) == ["Everything"]
    cov = table.components["Everything"]
    assert (cov.functions_found, cov.functions_hit) == (10, 5)
    assert cov.percent == 50.0


def test_component_table_vectorization_percent():
    trace = parse_lcov(
        "SF:/llvm/lib/Transforms/Vectorize/LoopVectorize.cpp\nFNF:60\nFNH:9\nend_of_record\n"
        "SF:/llvm/lib/Transforms/Vectorize/SLPVectorizer.cpp\nFNF:40\nFNH:6\nend_of_record\n"
    )
    table = component_table(trace, default_component_map())
    cov = table.components["Vectorization"]
    assert (cov.functions_found, cov.functions_hit) == (100, 15)
    assert cov.percent == 15.0


def test_unmatched_paths_fall_into_other():
    trace = parse_lcov("SF:/somewhere/else.c\nFNF:2\nFNH:1\nend_of_record\n")
    table = component_table(trace, default_component_map())
    assert list(table.components) == ["other"]
    assert table.components["other"].functions_found == 2


def test_first_matching_rule_wins():
    cmap = ComponentMap([("*/special/*", "Special"), ("*", "Generic")])
    assert cmap.component_for("/a/special/x.c") == "Special"
    assert cmap.component_for("/a/plain/x.c") == "Generic"


def test_default_map_routes_llvm_tree():
    cmap = default_component_map()
    assert cmap.component_for("/llvm/clang/lib/Parse/ParseDecl.cpp") == "Frontend (Parser)"
    assert cmap.component_for("/llvm/clang/lib/Sema/SemaExpr.cpp") == "AST & Semantics"
    assert cmap.component_for("/llvm/clang/lib/CodeGen/CGExpr.cpp") == "IR Generation"
    assert cmap.component_for("/llvm/llvm/lib/Transforms/Vectorize/VPlan.cpp") == "Vectorization"
    assert cmap.component_for("/llvm/llvm/lib/Transforms/Scalar/LoopUnrollPass.cpp") == "Loop Opt."
    assert cmap.component_for("/llvm/llvm/lib/Transforms/IPO/Inliner.cpp") == "Inlining"
    assert cmap.component_for("/llvm/llvm/lib/Transforms/Scalar/ADCE.cpp") == "DCE"
    assert cmap.component_for("/llvm/llvm/lib/Transforms/Scalar/GVN.cpp") == "Opt. Passes"
    assert cmap.component_for("/llvm/llvm/lib/CodeGen/MachineScheduler.cpp") == "Backend Code Gen."


def test_component_map_from_file(tmp_path):
    map_file = tmp_path / "map.cfg"
    map_file.write_text("# my map\n*/Vectorize/* = Vec\n* = Rest\n")
    cmap = ComponentMap.from_file(map_file)
    assert cmap.rules == [("*/Vectorize/*", "Vec"), ("*", "Rest")]


def test_component_map_file_rejects_bad_lines(tmp_path):
    map_file = tmp_path / "map.cfg"
    map_file.write_text("this line has no equals sign\n")
    with pytest.raises(ValueError):
        ComponentMap.from_file(map_file)


def test_zero_found_percent_is_undefined():
    from fuzzmend.coverage import ComponentCoverage

    assert ComponentCoverage(functions_found=0, functions_hit=0).percent is None


def test_aggregation_conservation():
    text = (
        "SF:/llvm/clang/lib/Parse/a.cpp\nFNF:7\nFNH:2\nend_of_record\n"
        "SF:/llvm/llvm/lib/Transforms/IPO/Inliner.cpp\nFNF:9\nFNH:4\nend_of_record\n"
        "SF:/unrelated/z.c\nFNF:5\nFNH:5\nend_of_record\n"
    )
    trace = parse_lcov(text)
    table = component_table(trace, default_component_map())
    assert sum(c.functions_found for c in table.components.values()) == trace.total_found
    assert sum(c.functions_hit for c in table.components.values()) == trace.total_hit


# --------------------------------------------------------------------------
# deltas
# --------------------------------------------------------------------------


def test_delta_inlining_and_dce_cells():
    before = CoverageTable.from_percents({"Inlining": 11.8, "DCE": 17.0})
    after = CoverageTable.from_percents({"Inlining": 33.0, "DCE": 34.0})
    rows = {r.component: r for r in delta(before, after)}
    assert rows["Inlining"].delta == 21.2
    assert rows["DCE"].delta == 17.0


def test_delta_identical_tables_all_zero():
    table = CoverageTable.from_percents({"A": 10.0, "B": 55.5})
    assert all(r.delta == 0.0 for r in delta(table, table))


def test_delta_missing_component_flagged():
    before = CoverageTable.from_percents({"A": 10.0, "B": 20.0})
    after = CoverageTable.from_percents({"A": 12.0})
    rows = {r.component: r for r in delta(before, after)}
    assert rows["A"].delta == 2.0
    assert rows["B"].delta is None
    assert rows["B"].flagged


@settings(max_examples=100, deadline=None)
@given(
    st.dictionaries(
        st.sampled_from(["A", "B", "C", "D"]),
        st.tuples(
            st.integers(min_value=0, max_value=1000),
            st.integers(min_value=0, max_value=1000),
        ).map(lambda t: (max(t), min(t))),
        min_size=1,
    )
)
def test_delta_antisymmetry(counts):
    from fuzzmend.coverage import ComponentCoverage

    table_a = CoverageTable(
        {k: ComponentCoverage(found, hit) for k, (found, hit) in counts.items()}
    )
    table_b = CoverageTable(
        {k: ComponentCoverage(found + 1, hit) for k, (found, hit) in counts.items()}
    )
    forward = {r.component: r.delta for r in delta(table_a, table_b)}
    backward = {r.component: r.delta for r in delta(table_b, table_a)}
    for name, value in forward.items():
        if value is None:
            assert backward[name] is None
        else:
            assert backward[name] == pytest.approx(-value)


def test_render_delta_formats():
    before = CoverageTable.from_percents({"Inlining": 11.8})
    after = CoverageTable.from_percents({"Inlining": 33.0})
    rows = delta(before, after)
    md = render_delta(rows, "md")
    assert "| Inlining | 11.8 | 33.0 | +21.2 |" in md
    text = render_delta(rows, "text")
    assert "+21.2" in text
    import json as _json

    parsed = _json.loads(render_delta(rows, "json"))
    assert parsed[0]["delta"] == 21.2
