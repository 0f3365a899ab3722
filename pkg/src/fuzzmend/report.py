"""Campaign statistics: validity counts before/after repair, rates, time per test."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import TYPE_CHECKING, Iterable

from .corpus import ProgramStatus

if TYPE_CHECKING:  # pragma: no cover
    from .repair import RepairTrace

UNDEFINED_CELL = "—"  # em dash rendered for undefined rates


def round1(value: float) -> float:
    """Round half-up to one decimal, matching the display precision used."""
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def rate(count: int, total: int) -> float | None:
    if total <= 0:
        return None
    return round1(100.0 * count / total)


@dataclass
class CampaignStats:
    total_tests: int
    valid_before: int
    valid_after: int
    crash_only: int
    rate_before: float | None
    rate_after: float | None
    mean_time_per_test_s: float | None
    tool_errors: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignStats":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def compute_stats(
    traces: Iterable["RepairTrace"], pre_valid: int, total: int
) -> CampaignStats:
    """Aggregate repair traces into campaign statistics.

    ``pre_valid`` counts programs that were already Valid when the campaign
    started; traces that finish Valid with zero attempts also count toward
    the before-rate (they needed no fix).  Unfixed programs are the
    residual: total minus valid-after minus tool errors.
    """
    traces = list(traces)
    if total < len(traces) + pre_valid:
        raise ValueError(
            f"total {total} is less than traces {len(traces)} + pre_valid {pre_valid}"
        )
    tool_errors = sum(1 for t in traces if t.incomplete)
    valid_after = pre_valid + sum(
        1 for t in traces if not t.incomplete and t.final_status is ProgramStatus.VALID
    )
    valid_before = pre_valid + sum(
        1
        for t in traces
        if not t.incomplete and t.final_status is ProgramStatus.VALID and not t.attempts
    )
    crash_only = total - valid_after - tool_errors
    mean_time = None
    if traces:
        mean_time = round1(sum(t.total_time_ms for t in traces) / len(traces) / 1000.0)
    return CampaignStats(
        total_tests=total,
        valid_before=valid_before,
        valid_after=valid_after,
        crash_only=crash_only,
        rate_before=rate(valid_before, total),
        rate_after=rate(valid_after, total),
        mean_time_per_test_s=mean_time,
        tool_errors=tool_errors,
    )


def _cell(value: float | None, suffix: str = "") -> str:
    return UNDEFINED_CELL if value is None else f"{value:.1f}{suffix}"


def render(stats: CampaignStats, fmt: str = "text") -> str:
    """Render stats as text, json or markdown; json round-trips exactly."""
    if fmt == "json":
        return json.dumps(stats.to_dict(), indent=2, sort_keys=True)
    if fmt == "markdown":
        header = (
            "| Total | Valid (before) | Valid (after) | Crash-only | Tool errors | Time/Test |\n"
            "|---|---|---|---|---|---|\n"
        )
        row = (
            f"| {stats.total_tests} "
            f"| ({stats.valid_before}) {_cell(stats.rate_before, '%')} "
            f"| ({stats.valid_after}) {_cell(stats.rate_after, '%')} "
            f"| {stats.crash_only} "
            f"| {stats.tool_errors} "
            f"| {_cell(stats.mean_time_per_test_s, ' s')} |\n"
        )
        return header + row
    if fmt == "text":
        return (
            f"tests:        {stats.total_tests}\n"
            f"valid before: {stats.valid_before} ({_cell(stats.rate_before, '%')})\n"
            f"valid after:  {stats.valid_after} ({_cell(stats.rate_after, '%')})\n"
            f"crash-only:   {stats.crash_only}\n"
            f"tool errors:  {stats.tool_errors}\n"
            f"time/test:    {_cell(stats.mean_time_per_test_s, ' s')}\n"
        )
    raise ValueError(f"unknown format {fmt!r}")


def render_table(rows: list[tuple[str, CampaignStats]]) -> str:
    """Markdown table with one row per campaign (e.g. one per fuzzer)."""
    out = [
        "| Fuzzer | B Valid | A Valid | # Tests | Time/Test |",
        "|---|---|---|---|---|",
    ]
    for name, stats in rows:
        out.append(
            f"| {name} "
            f"| ({stats.valid_before}) {_cell(stats.rate_before, '%')} "
            f"| ({stats.valid_after}) {_cell(stats.rate_after, '%')} "
            f"| {stats.total_tests} "
            f"| {_cell(stats.mean_time_per_test_s, ' s')} |"
        )
    return "\n".join(out) + "\n"


def parse_stats_json(text: str) -> CampaignStats:
    return CampaignStats.from_dict(json.loads(text))
