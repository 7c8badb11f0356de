"""
Human-readable output: markdown reports rendered with jinja2 and rich
console tables.
"""
from __future__ import annotations

from typing import Any, Mapping, Optional, Sequence

from jinja2 import DictLoader, Environment, StrictUndefined
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from tierplan.hpa_planner import PartitionPlan
from tierplan.pipeline_sim import REPORT_NOTE, SimReport, SweepRow
from tierplan.tiers import Tier
from tierplan.vsm_tiler import OverlapReport, TilePlan

console = Console()

PLAN_TEMPLATE = """\
# Partition plan

- Vertices: {{ vertices }}
- Θ: {{ "%.6f"|format(theta * 1000) }} ms
- Provenance: {{ provenance }}
{% if gap is not none %}
- Gap vs full replan: {{ "%.2f"|format(gap * 100) }} %
{% endif %}

| Tier | Vertices |
|------|----------|
{% for tier, members in subgraphs.items() %}
| {{ tier }} | {{ members|join(", ") if members else "-" }} |
{% endfor %}
"""

REPORT_TEMPLATE = """\
# Simulation report

> {{ note }}

- Θ: {{ "%.6f"|format(report.theta * 1000) }} ms
- Backbone bytes: {{ report.backbone_bytes }}
{% if report.edge_parallel %}
- Edge grid {{ report.edge_parallel.grid|join("x") }}: chain speedup {{ "%.4f"|format(report.edge_parallel.speedup) }}
{% endif %}

| Tier | Processing (ms) |
|------|-----------------|
{% for tier, seconds in report.processing.items() %}
| {{ tier }} | {{ "%.6f"|format(seconds * 1000) }} |
{% endfor %}

| Link | Transfer (ms) | Bytes |
|------|---------------|-------|
{% for link, seconds in report.transfer_seconds.items() %}
| {{ link }} | {{ "%.6f"|format(seconds * 1000) }} | {{ report.transfer_bytes[link] }} |
{% endfor %}

| Baseline | Latency (ms) | Speedup |
|----------|--------------|---------|
{% for name, seconds in report.baselines.items() %}
| {{ name }} | {{ "%.6f"|format(seconds * 1000) }} | {{ "%.4f"|format(report.speedups[name]) }} |
{% endfor %}
"""

TILES_TEMPLATE = """\
# Fused tile plan

- Grid: {{ grid|join("x") }}
- Stack depth: {{ depth }}
- Redundant elements: {{ redundancy.redundant_elements }}

| Layer | Redundancy factor |
|-------|-------------------|
{% for layer in redundancy.layers %}
| {{ layer.layer }} | {{ "%.4f"|format(layer.factor) }} |
{% endfor %}
"""

ORACLE_TEMPLATE = """\
# HPA vs exhaustive optimum

- Trials: {{ trials }}
- Mean gap: {{ "%.4f"|format(mean_gap * 100) }} %
- Max gap: {{ "%.4f"|format(max_gap * 100) }} %
- Exact matches: {{ exact }}
"""

_env = Environment(
    loader=DictLoader({
        "plan.md": PLAN_TEMPLATE,
        "report.md": REPORT_TEMPLATE,
        "tiles.md": TILES_TEMPLATE,
        "oracle.md": ORACLE_TEMPLATE,
    }),
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)


def render(name: str, **context: Any) -> str:
    return _env.get_template(name).render(**context)


def plan_markdown(plan: PartitionPlan, gap: Optional[float] = None) -> str:
    return render("plan.md", vertices=len(plan.assignment), theta=plan.theta,
                  provenance=plan.provenance.value, gap=gap,
                  subgraphs={t.label: list(vs) for t, vs in plan.subgraphs().items()})


def report_markdown(report: SimReport) -> str:
    return render("report.md", note=REPORT_NOTE, report=report.as_dict())


def tiles_markdown(plan: TilePlan, overlap: OverlapReport) -> str:
    return render("tiles.md", grid=list(plan.grid), depth=plan.stack_depth, redundancy=overlap.as_dict())


def oracle_markdown(summary: Mapping[str, Any]) -> str:
    return render("oracle.md", **summary)


def print_plan(plan: PartitionPlan, out: Console = console):
    table = Table(show_header=True, header_style="bold cyan", title="Partition plan")
    table.add_column("Tier", justify="center")
    table.add_column("Vertices", justify="right")
    table.add_column("Layers")
    for tier, members in plan.subgraphs().items():
        table.add_row(tier.label, str(len(members)), ", ".join(members) or "-")
    out.print(table)
    out.print(f"[bold]Θ[/bold] = {plan.theta * 1000:.6f} ms ({plan.provenance.value})")


def print_report(report: SimReport, out: Console = console):
    out.print(Panel(REPORT_NOTE, title="[bold magenta]Simulation[/bold magenta]", border_style="magenta"))
    table = Table(show_header=True, header_style="bold cyan")
    table.add_column("Scenario")
    table.add_column("Latency (ms)", justify="right")
    table.add_column("Speedup", justify="right")
    table.add_row("plan", f"{report.theta * 1000:.6f}", "1.0000")
    for name, seconds in report.baselines.items():
        table.add_row(name, f"{seconds * 1000:.6f}", f"{report.speedups[name]:.4f}")
    out.print(table)
    out.print(f"Backbone bytes: {report.backbone_bytes}  |  per tier (ms): "
              + ", ".join(f"{t.label} {s * 1000:.4f}" for t, s in report.processing.items()))


def print_tiles(plan: TilePlan, overlap: OverlapReport, out: Console = console):
    table = Table(show_header=True, header_style="bold cyan",
                  title=f"{plan.grid[0]}x{plan.grid[1]} fused tile stacks")
    table.add_column("Cell", justify="center")
    table.add_column("Input crop", justify="right")
    table.add_column("Output tile", justify="right")
    for a, b in plan.cells():
        cell = plan.cell(a, b)
        table.add_row(f"({a},{b})", f"{cell.crop.alpha}-{cell.crop.beta}", f"{cell.output.alpha}-{cell.output.beta}")
    out.print(table)
    out.print("Redundancy: " + ", ".join(f"c{o.layer} {o.factor:.3f}" for o in overlap.layers))


def print_sweep(rows: Sequence[SweepRow], out: Console = console):
    table = Table(show_header=True, header_style="bold cyan", title="Bandwidth sweep")
    table.add_column("Link")
    table.add_column("Mbps", justify="right")
    table.add_column("Θ (ms)", justify="right")
    table.add_column("Backbone bytes", justify="right")
    for tier in Tier.ordered():
        table.add_column(tier.label, justify="right")
    for row in rows:
        table.add_row(row.link, f"{row.mbps:g}", f"{row.theta * 1000:.4f}", str(row.backbone_bytes),
                      *(str(row.tiers.get(t, 0)) for t in Tier.ordered()))
    out.print(table)


def print_oracle(summary: Mapping[str, Any], out: Console = console):
    table = Table(show_header=True, header_style="bold cyan", title="HPA vs exhaustive optimum")
    table.add_column("Trials", justify="right")
    table.add_column("Mean gap", justify="right")
    table.add_column("Max gap", justify="right")
    table.add_column("Exact", justify="right")
    table.add_row(str(summary["trials"]), f"{summary['mean_gap']:.4%}", f"{summary['max_gap']:.4%}",
                  str(summary["exact"]))
    out.print(table)
