"""
Deterministic per-image evaluation of partition plans.

Only model-level quantities are reproduced: processing times come from the
weighted graph, transfers from output sizes and bandwidths, and fused tile
cells from scaling the edge times by the input area each cell reads.
Framework overheads, RPC costs and real network behaviour are not modelled.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Mapping, Optional, Sequence

from tierplan.errors import PlanError
from tierplan.hpa_planner import PartitionPlan, hpa, total_latency
from tierplan.latency_model import MBPS, BandwidthConfig, WeightedGraph, link_delay
from tierplan.tiers import Tier
from tierplan.vsm_tiler import TilePlan, needed_area

logger = logging.getLogger(__name__)

REPORT_NOTE = ("Model-level simulation: per-image latency from profiled or estimated layer times "
               "and bandwidth-derived transfers; hardware, framework and RPC overheads are not reproduced.")

BOUNDARIES: tuple[tuple[str, frozenset[Tier]], ...] = (
    ("device-edge", frozenset({Tier.DEVICE, Tier.EDGE})),
    ("edge-cloud", frozenset({Tier.EDGE, Tier.CLOUD})),
    ("device-cloud", frozenset({Tier.DEVICE, Tier.CLOUD})),
)


def _boundary(a: Tier, b: Tier) -> str:
    pair = frozenset((a, b))
    for name, tiers in BOUNDARIES:
        if tiers == pair:
            return name
    raise PlanError(f"no boundary between {a.label} and {b.label}")


@dataclass(frozen=True)
class EdgeParallel:
    """Fused tile execution of an edge-resident chain over A x B edge nodes."""

    chain: tuple[str, ...]
    tiles: TilePlan

    @property
    def nodes(self) -> int:
        return self.tiles.grid[0] * self.tiles.grid[1]


@dataclass(frozen=True)
class Scenario:
    wg: WeightedGraph
    plan: PartitionPlan
    edge_parallel: Optional[EdgeParallel] = None
    input_bytes: Optional[int] = None

    def __post_init__(self):
        g = self.wg.graph
        missing = [v for v in g.vertices if v not in self.plan.assignment]
        if missing:
            raise PlanError(f"plan does not cover vertices: {', '.join(missing)}")
        if self.input_bytes is not None and self.input_bytes != g.output_bytes(g.source):
            raise PlanError(f"input of {self.input_bytes} bytes contradicts the graph's {g.output_bytes(g.source)}")
        ep = self.edge_parallel
        if ep is not None:
            if not ep.chain:
                raise PlanError("edge-parallel chain is empty")
            off_edge = [v for v in ep.chain if self.plan.assignment.get(v) is not Tier.EDGE]
            if off_edge:
                raise PlanError(f"edge-parallel chain has vertices off the edge tier: {', '.join(off_edge)}")
            if tuple(g.config(v) for v in ep.chain) != tuple(ep.tiles.layer_configs):
                raise PlanError("tile plan does not match the edge chain's layer configs")

    @property
    def raw_input_bytes(self) -> int:
        return self.wg.graph.output_bytes(self.wg.graph.source)


@dataclass(frozen=True)
class SimReport:
    theta: float
    processing: Mapping[Tier, float]
    transfer_seconds: Mapping[str, float]
    transfer_bytes: Mapping[str, int]
    backbone_bytes: int
    baselines: Mapping[str, float]
    speedups: Mapping[str, float]
    edge_speedup: Optional[float] = None
    grid: Optional[tuple[int, int]] = None
    note: str = REPORT_NOTE

    def as_dict(self) -> dict[str, Any]:
        return {
            "note": self.note,
            "theta": self.theta,
            "processing": {t.label: s for t, s in self.processing.items()},
            "transfer_seconds": dict(self.transfer_seconds),
            "transfer_bytes": dict(self.transfer_bytes),
            "backbone_bytes": self.backbone_bytes,
            "baselines": dict(self.baselines),
            "speedups": dict(self.speedups),
            "edge_parallel": (None if self.grid is None
                              else {"grid": list(self.grid), "speedup": self.edge_speedup}),
        }


def _transfers(assignment: Mapping[str, Tier], wg: WeightedGraph) -> list[tuple[str, Tier, Tier]]:
    """Distinct (producer, from, to) shipments, in declaration order."""
    g = wg.graph
    moves = []
    for h in g.vertices:
        src = assignment[h]
        destinations = {assignment[s] for s in g.successors(h)} - {src}
        for dst in sorted(destinations, key=lambda t: t.rank):
            moves.append((h, src, dst))
    return moves


def chain_times(s: Scenario) -> tuple[float, float]:
    """(serial, parallel) edge time of the tiled chain.

    Each layer's edge time is shared out over the cells by the area of the
    input tile each cell reads, relative to the entries read by any cell.
    Overlap adds work; entries skipped by every cell never remove it.
    """
    ep = s.edge_parallel
    if ep is None:
        return 0.0, 0.0
    serial = 0.0
    for v in ep.chain:
        serial += s.wg.time(v, Tier.EDGE)
    plan = ep.tiles
    needed = [needed_area(plan, i) for i in range(1, plan.stack_depth + 1)]
    parallel = 0.0
    for a, b in plan.cells():
        cell = plan.cell(a, b)
        t = 0.0
        for i, v in enumerate(ep.chain):
            t += s.wg.time(v, Tier.EDGE) * (cell.tiles[i].area / needed[i])
        parallel = max(parallel, t)
    return serial, parallel


def simulate(s: Scenario) -> SimReport:
    wg = s.wg
    g = wg.graph
    assignment = s.plan.assignment
    theta = total_latency(assignment, wg)

    processing = {t: 0.0 for t in Tier.ordered()}
    for v in g.vertices:
        processing[assignment[v]] += wg.time(v, assignment[v])

    seconds = {name: 0.0 for name, _ in BOUNDARIES}
    sizes = {name: 0 for name, _ in BOUNDARIES}
    backbone = 0
    for h, src, dst in _transfers(assignment, wg):
        name = _boundary(src, dst)
        seconds[name] += wg.transfer(h, src, dst)
        sizes[name] += g.output_bytes(h)
        if dst is Tier.CLOUD:
            backbone += g.output_bytes(h)

    edge_speedup = None
    grid = None
    if s.edge_parallel is not None:
        serial, parallel = chain_times(s)
        theta = theta + (parallel - serial)
        processing[Tier.EDGE] += parallel - serial
        edge_speedup = serial / parallel if parallel > 0 else 1.0
        grid = s.edge_parallel.tiles.grid

    base = baselines(wg, s.raw_input_bytes)
    speedups = {name: _ratio(value, theta) for name, value in base.items()}
    logger.debug(f"📊 Simulated Θ={theta:.6g}s, backbone {backbone} bytes")
    return SimReport(theta, MappingProxyType(processing), MappingProxyType(seconds), MappingProxyType(sizes),
                     backbone, MappingProxyType(base), MappingProxyType(speedups), edge_speedup, grid)


def _ratio(baseline: float, theta: float) -> float:
    if theta == 0:
        return 1.0 if baseline == 0 else math.inf
    return baseline / theta


def baselines(wg: WeightedGraph, input_bytes: Optional[int] = None) -> dict[str, float]:
    """Single-tier latencies; the raw input travels from the device first.

    Chain graphs also get the best single device/cloud cut.
    """
    g = wg.graph
    if input_bytes is None:
        input_bytes = g.output_bytes(g.source)
    sums = {t: 0.0 for t in Tier.ordered()}
    for v in g.vertices:
        for t in Tier.ordered():
            sums[t] += wg.time(v, t)
    bw = wg.bandwidth
    result = {
        "device-only": sums[Tier.DEVICE],
        "edge-only": link_delay(input_bytes, bw.sigma_de) + sums[Tier.EDGE],
        "cloud-only": link_delay(input_bytes, bw.sigma_dc) + sums[Tier.CLOUD],
    }
    if g.is_chain() and len(g) > 1:
        result["device-cloud-split"] = best_single_cut(wg)[0]
    return result


def best_single_cut(wg: WeightedGraph) -> tuple[float, str]:
    """Best device/cloud split of a chain: (latency, last device vertex)."""
    g = wg.graph
    if not g.is_chain():
        raise PlanError("single-cut baseline needs a chain graph")
    order = g.topological_order()
    best = (math.inf, order[-1])
    for k, cut in enumerate(order):
        assignment = {v: (Tier.DEVICE if i <= k else Tier.CLOUD) for i, v in enumerate(order)}
        theta = total_latency(assignment, wg)
        if theta < best[0]:
            best = (theta, cut)
    return best


def comm_overhead(s: Scenario) -> int:
    """Bytes entering the cloud tier per image, each tensor counted once."""
    g = s.wg.graph
    total = 0
    for h, _, dst in _transfers(s.plan.assignment, s.wg):
        if dst is Tier.CLOUD:
            total += g.output_bytes(h)
    return total


def edge_parallel_speedup(s: Scenario) -> float:
    """Serial edge chain time over the slowest fused tile cell."""
    if s.edge_parallel is None:
        raise PlanError("scenario has no edge-parallel section")
    serial, parallel = chain_times(s)
    if parallel == 0:
        return 1.0
    return serial / parallel


@dataclass(frozen=True)
class SweepRow:
    link: str
    mbps: float
    theta: float
    baselines: Mapping[str, float]
    backbone_bytes: int
    tiers: Mapping[Tier, int] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        row = {"link": self.link, "mbps": self.mbps, "theta_ms": self.theta * 1e3,
               "backbone_bytes": self.backbone_bytes}
        row.update({f"{name}_ms": value * 1e3 for name, value in self.baselines.items()})
        row.update({f"{t.label}_vertices": n for t, n in self.tiers.items()})
        return row


_SWEEP_FIELDS = {"device_edge": "sigma_de", "edge_cloud": "sigma_ec", "device_cloud": "sigma_dc"}


def sweep(wg: WeightedGraph, link: str, values_mbps: Sequence[float], strict: bool = False) -> list[SweepRow]:
    """Replan with HPA for each bandwidth of one link, others held fixed."""
    if link not in _SWEEP_FIELDS:
        raise PlanError(f"unknown link {link!r}; expected one of {', '.join(_SWEEP_FIELDS)}")
    rows = []
    for mbps in values_mbps:
        bw: BandwidthConfig = replace(wg.bandwidth, **{_SWEEP_FIELDS[link]: mbps * MBPS})
        current = wg.with_weights(bandwidth=bw)
        plan = hpa(current, strict)
        report = simulate(Scenario(current, plan))
        counts = {t: sum(1 for tier in plan.assignment.values() if tier == t) for t in Tier.ordered()}
        rows.append(SweepRow(link, float(mbps), report.theta, report.baselines, report.backbone_bytes,
                             MappingProxyType(counts)))
    logger.info(f"✅ Swept {link} over {len(rows)} bandwidths")
    return rows


def plan_summary(plan: PartitionPlan) -> dict[str, list[str]]:
    return {t.label: list(vs) for t, vs in plan.subgraphs().items()}
