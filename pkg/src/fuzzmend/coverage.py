"""lcov tracefile parsing and per-component function-coverage tables.

Consumes ``.info`` tracefiles produced by an externally instrumented
compiler build, maps source paths onto compiler components through ordered
glob rules, and renders before/after tables with absolute percentage-point
deltas.  Only function coverage (FNF/FNH accounting) is computed; line and
branch records are ignored.
"""

from __future__ import annotations

import fnmatch
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .report import UNDEFINED_CELL, rate, round1

logger = logging.getLogger(__name__)

OTHER_COMPONENT = "other"


@dataclass
class FileRecord:
    source_path: str
    functions_found: int = 0
    functions_hit: int = 0
    per_function_hits: dict[str, int] = field(default_factory=dict)


@dataclass
class Tracefile:
    records: list[FileRecord] = field(default_factory=list)

    @property
    def total_found(self) -> int:
        return sum(r.functions_found for r in self.records)

    @property
    def total_hit(self) -> int:
        return sum(r.functions_hit for r in self.records)


def parse_lcov(text: str) -> Tracefile:
    """Parse SF/FN/FNDA/FNF/FNH/end_of_record lines; other kinds are ignored.

    FNF/FNH are authoritative when present; otherwise counts are derived
    from FNDA records.  Malformed lines produce a warning and are skipped.
    """
    trace = Tracefile()
    current: FileRecord | None = None
    fnf: int | None = None
    fnh: int | None = None

    def close() -> None:
        nonlocal current, fnf, fnh
        if current is None:
            return
        if fnf is not None:
            current.functions_found = fnf
        else:
            current.functions_found = len(current.per_function_hits)
        if fnh is not None:
            current.functions_hit = fnh
        else:
            current.functions_hit = sum(1 for c in current.per_function_hits.values() if c > 0)
        trace.records.append(current)
        current, fnf, fnh = None, None, None

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line == "end_of_record":
            close()
            continue
        kind, _, rest = line.partition(":")
        try:
            if kind == "SF":
                close()  # tolerate a missing end_of_record
                current = FileRecord(source_path=rest.strip())
            elif current is None:
                continue  # records before any SF are meaningless
            elif kind == "FN":
                # "FN:<line>,<name>"; just register the function name.
                _, _, name = rest.partition(",")
                current.per_function_hits.setdefault(name.strip(), 0)
            elif kind == "FNDA":
                count_text, _, name = rest.partition(",")
                current.per_function_hits[name.strip()] = int(count_text)
            elif kind == "FNF":
                fnf = int(rest)
            elif kind == "FNH":
                fnh = int(rest)
            # DA / LF / LH / BRDA and friends: intentionally ignored.
        except (ValueError, TypeError):
            logger.warning("lcov: malformed record at line %d: %r", lineno, line)
    close()
    return trace


def render_lcov(trace: Tracefile) -> str:
    """Render back to lcov records (function records only)."""
    lines: list[str] = []
    for record in trace.records:
        lines.append(f"SF:{record.source_path}")
        for name, count in record.per_function_hits.items():
            lines.append(f"FNDA:{count},{name}")
        lines.append(f"FNF:{record.functions_found}")
        lines.append(f"FNH:{record.functions_hit}")
        lines.append("end_of_record")
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# Component mapping
# --------------------------------------------------------------------------


@dataclass
class ComponentMap:
    """Ordered (glob, component) rules; first match wins, unmatched -> other."""

    rules: list[tuple[str, str]]

    def component_for(self, path: str) -> str:
        for pattern, component in self.rules:
            if fnmatch.fnmatchcase(path, pattern):
                return component
        return OTHER_COMPONENT

    def component_order(self) -> list[str]:
        seen: list[str] = []
        for _, component in self.rules:
            if component not in seen:
                seen.append(component)
        seen.append(OTHER_COMPONENT)
        return seen

    @classmethod
    def from_file(cls, path: str | Path) -> "ComponentMap":
        rules = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pattern, sep, component = line.partition("=")
            if not sep or not pattern.strip() or not component.strip():
                raise ValueError(f"{path}:{lineno}: expected 'glob = component'")
            rules.append((pattern.strip(), component.strip()))
        return cls(rules)


def default_component_map() -> ComponentMap:
    """Glob rules for an LLVM/Clang checkout; specific passes come first."""
    return ComponentMap(
        [
            ("*clang/lib/Parse/*", "Frontend (Parser)"),
            ("*clang/lib/Sema/*", "AST & Semantics"),
            ("*clang/lib/AST/*", "AST & Semantics"),
            ("*clang/lib/CodeGen/*", "IR Generation"),
            ("*llvm/lib/Transforms/Vectorize/*", "Vectorization"),
            ("*llvm/lib/Transforms/*LoopUnroll*", "Loop Opt."),
            ("*llvm/lib/Transforms/*LoopRotat*", "Loop Opt."),
            ("*llvm/lib/Transforms/*LoopSimplify*", "Loop Opt."),
            ("*llvm/lib/Transforms/*LICM*", "Loop Opt."),
            ("*llvm/lib/Transforms/IPO/Inliner*", "Inlining"),
            ("*llvm/lib/Transforms/IPO/AlwaysInliner*", "Inlining"),
            ("*llvm/lib/Transforms/Utils/InlineFunction*", "Inlining"),
            ("*llvm/lib/Analysis/Inline*", "Inlining"),
            ("*llvm/lib/Transforms/*/ADCE*", "DCE"),
            ("*llvm/lib/Transforms/*/BDCE*", "DCE"),
            ("*llvm/lib/Transforms/*/DCE*", "DCE"),
            ("*llvm/lib/Transforms/*DeadArgument*", "DCE"),
            ("*llvm/lib/Transforms/*DeadStore*", "DCE"),
            ("*llvm/lib/Transforms/*", "Opt. Passes"),
            ("*llvm/lib/CodeGen/*", "Backend Code Gen."),
            ("*llvm/lib/Target/*", "Backend Code Gen."),
        ]
    )


# --------------------------------------------------------------------------
# Coverage tables and deltas
# --------------------------------------------------------------------------


@dataclass
class ComponentCoverage:
    functions_found: int = 0
    functions_hit: int = 0

    @property
    def percent(self) -> float | None:
        # found == 0 means undefined, never 0%.
        return rate(self.functions_hit, self.functions_found)


@dataclass
class CoverageTable:
    components: dict[str, ComponentCoverage] = field(default_factory=dict)

    @classmethod
    def from_percents(cls, percents: dict[str, float], scale: int = 1000) -> "CoverageTable":
        """Build a table whose rows display exactly the given 1-decimal percents."""
        table = cls()
        for name, pct in percents.items():
            table.components[name] = ComponentCoverage(
                functions_found=scale, functions_hit=int(round(pct * scale / 100.0))
            )
        return table


def component_table(trace: Tracefile, cmap: ComponentMap) -> CoverageTable:
    """Sum found/hit per mapped component; unmatched paths land in "other"."""
    table = CoverageTable()
    order = cmap.component_order()
    for name in order:
        table.components[name] = ComponentCoverage()
    for record in trace.records:
        bucket = table.components[cmap.component_for(record.source_path)]
        bucket.functions_found += record.functions_found
        bucket.functions_hit += record.functions_hit
    # Components with no mapped files stay out of the table entirely.
    table.components = {
        name: cov for name, cov in table.components.items() if cov.functions_found > 0
    }
    return table


@dataclass
class DeltaRow:
    component: str
    before: float | None
    after: float | None

    @property
    def delta(self) -> float | None:
        if self.before is None or self.after is None:
            return None
        return round1(self.after - self.before)

    @property
    def flagged(self) -> bool:
        return self.delta is None


def delta(before: CoverageTable, after: CoverageTable) -> list[DeltaRow]:
    """Componentwise after-minus-before, in before-table order then extras."""
    names = list(before.components)
    names.extend(n for n in after.components if n not in before.components)
    rows = []
    for name in names:
        b = before.components.get(name)
        a = after.components.get(name)
        rows.append(
            DeltaRow(
                component=name,
                before=b.percent if b else None,
                after=a.percent if a else None,
            )
        )
    return rows


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def _pct(value: float | None) -> str:
    return UNDEFINED_CELL if value is None else f"{value:.1f}"


def _signed(value: float | None) -> str:
    if value is None:
        return UNDEFINED_CELL
    return "0.0" if value == 0 else f"{value:+.1f}"


def render_delta(rows: list[DeltaRow], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(
            [
                {
                    "component": r.component,
                    "before": r.before,
                    "after": r.after,
                    "delta": r.delta,
                    "flagged": r.flagged,
                }
                for r in rows
            ],
            indent=2,
        )
    if fmt in ("md", "markdown"):
        out = ["| Component | (B) | (A) | Δ |", "|---|---|---|---|"]
        for r in rows:
            out.append(f"| {r.component} | {_pct(r.before)} | {_pct(r.after)} | {_signed(r.delta)} |")
        return "\n".join(out) + "\n"
    if fmt == "text":
        width = max((len(r.component) for r in rows), default=9)
        out = [f"{'Component'.ljust(width)}  {'(B)':>6} {'(A)':>6} {'Δ':>6}"]
        for r in rows:
            out.append(
                f"{r.component.ljust(width)}  {_pct(r.before):>6} {_pct(r.after):>6} {_signed(r.delta):>6}"
            )
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown format {fmt!r}")
