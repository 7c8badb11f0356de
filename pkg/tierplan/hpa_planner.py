"""
Horizontal partitioning of a weighted DNN graph over device, edge and cloud.

Vertices are visited layer by layer (longest distance from the input vertex).
Each vertex picks a tier among the ones its predecessors allow, either by
direct latency comparison or, when its output is not smaller than its input,
by a two-vertex lookahead with its largest direct successor. After a layer is
placed, subset-input siblings are pulled forward to the tier of the vertex
whose inputs they share.

Transfers are charged once per (producer, destination tier): a tensor that
already reached a tier is not shipped there again.
"""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

from tierplan.errors import GraphError, GuardError, PlanError
from tierplan.graph_core import longest_distances, sis_vertices
from tierplan.latency_model import WeightedGraph
from tierplan.tiers import Tier

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 16

# Placement pairs for (vertex, largest successor), in evaluation order.
LOOKAHEAD_PAIRS: tuple[tuple[Tier, Tier], ...] = (
    (Tier.DEVICE, Tier.DEVICE),
    (Tier.DEVICE, Tier.EDGE),
    (Tier.EDGE, Tier.EDGE),
    (Tier.EDGE, Tier.CLOUD),
    (Tier.CLOUD, Tier.CLOUD),
    (Tier.DEVICE, Tier.CLOUD),
)


class Provenance(str, Enum):
    FULL = "full"
    INCREMENTAL = "incremental"


@dataclass(frozen=True)
class Thresholds:
    """Allowed ratio (new / last planned) for vertex times and bandwidths."""

    time_lower: float = 0.9
    time_upper: float = 1.1
    bandwidth_lower: float = 0.9
    bandwidth_upper: float = 1.1

    def __post_init__(self):
        if not (0 <= self.time_lower <= 1 <= self.time_upper):
            raise PlanError(f"time thresholds must satisfy lower <= 1 <= upper, got {self.time_lower}, {self.time_upper}")
        if not (0 <= self.bandwidth_lower <= 1 <= self.bandwidth_upper):
            raise PlanError(
                f"bandwidth thresholds must satisfy lower <= 1 <= upper, got {self.bandwidth_lower}, {self.bandwidth_upper}"
            )

    @classmethod
    def from_dict(cls, values: Mapping[str, float]) -> "Thresholds":
        return cls(**{k: float(v) for k, v in values.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class PartitionPlan:
    assignment: Mapping[str, Tier]
    theta: float
    provenance: Provenance = Provenance.FULL
    basis: Optional[WeightedGraph] = field(default=None, compare=False, repr=False)

    def tier_of(self, vertex: str) -> Tier:
        return self.assignment[vertex]

    def subgraphs(self) -> dict[Tier, tuple[str, ...]]:
        """Vertices per tier, in assignment order."""
        return {t: tuple(v for v, tier in self.assignment.items() if tier == t) for t in Tier.ordered()}


@dataclass(frozen=True)
class Decision:
    vertex: str
    gamma: tuple[Tier, ...]
    branch: str
    tier: Tier
    costs: Mapping[Tier, float]
    successor: Optional[str] = None


def _shipments(assignment: Mapping[str, Tier], wg: WeightedGraph) -> set[tuple[str, Tier]]:
    """(producer, destination tier) pairs implied by the assigned vertices."""
    g = wg.graph
    shipped = set()
    for v, tier in assignment.items():
        for h in g.predecessors(v):
            if h in assignment and assignment[h] != tier:
                shipped.add((h, tier))
    return shipped


def total_latency(assignment: Mapping[str, Tier], wg: WeightedGraph) -> float:
    """Θ: processing times plus one transfer per (producer, destination tier)."""
    g = wg.graph
    missing = [v for v in g.vertices if v not in assignment]
    if missing:
        raise PlanError(f"incomplete assignment, missing: {', '.join(missing)}")
    theta = 0.0
    for v in g.vertices:
        theta += wg.time(v, assignment[v])
    for h in g.vertices:
        src = assignment[h]
        destinations = {assignment[s] for s in g.successors(h)} - {src}
        for dst in sorted(destinations, key=lambda t: t.rank):
            theta += wg.transfer(h, src, dst)
    return theta


def potential_tiers(pred_tiers: Iterable[Tier], strict: bool = False) -> frozenset[Tier]:
    """Tiers a vertex may take: none before the most device-ward predecessor.

    ``strict`` forbids tiers before any predecessor.
    """
    tiers = list(pred_tiers)
    if not tiers:
        return frozenset({Tier.DEVICE})
    bound = max(t.rank for t in tiers) if strict else min(t.rank for t in tiers)
    return frozenset(t for t in Tier if t.rank >= bound)


def _input_cost(v: str, tier: Tier, assigned: Mapping[str, Tier], wg: WeightedGraph,
                shipped: frozenset[tuple[str, Tier]] | set) -> float:
    cost = 0.0
    for h in wg.graph.sorted_predecessors(v):
        src = assigned[h]
        if src != tier and (h, tier) not in shipped:
            cost += wg.transfer(h, src, tier)
    return cost


def candidate_latency(v: str, t: Tier, assigned_preds: Mapping[str, Tier], wg: WeightedGraph,
                      shipped: Iterable[tuple[str, Tier]] = ()) -> float:
    """t_v^t plus the transfers of v's inputs that have not yet reached t."""
    missing = [h for h in wg.graph.predecessors(v) if h not in assigned_preds]
    if missing:
        raise PlanError(f"{v}: predecessors not assigned: {', '.join(sorted(missing))}")
    return wg.time(v, t) + _input_cost(v, t, assigned_preds, wg, set(shipped))


def largest_successor(v: str, wg: WeightedGraph) -> Optional[str]:
    """Direct successor with the longest edge-tier time; ties by declaration order."""
    best = None
    for s in wg.graph.successors(v):
        if best is None or wg.time(s, Tier.EDGE) > wg.time(best, Tier.EDGE):
            best = s
    return best


def lookahead_costs(v: str, succ: str, wg: WeightedGraph, gamma: Iterable[Tier],
                    assigned_preds: Mapping[str, Tier],
                    shipped: Iterable[tuple[str, Tier]] = ()) -> dict[tuple[Tier, Tier], float]:
    allowed = set(gamma)
    shipped = set(shipped)
    costs = {}
    for vt, st in LOOKAHEAD_PAIRS:
        if vt not in allowed:
            continue
        costs[(vt, st)] = (wg.time(v, vt) + wg.time(succ, st)
                           + _input_cost(v, vt, assigned_preds, wg, shipped)
                           + wg.transfer(v, vt, st))
    return costs


def lookahead_select(v: str, succ: str, wg: WeightedGraph, gamma: Iterable[Tier],
                     assigned_preds: Mapping[str, Tier],
                     shipped: Iterable[tuple[str, Tier]] = ()) -> Tier:
    """Tier of ``v`` from the cheapest (v, succ) placement pair."""
    gamma = frozenset(gamma)
    if gamma == {Tier.CLOUD}:
        return Tier.CLOUD
    costs = lookahead_costs(v, succ, wg, gamma, assigned_preds, shipped)
    return _argmin_pair(costs)


def _argmin_pair(costs: Mapping[tuple[Tier, Tier], float]) -> Tier:
    best_pair = None
    for pair, cost in costs.items():
        if best_pair is None:
            best_pair = pair
            continue
        best = costs[best_pair]
        if cost < best or (cost == best and pair[0].rank < best_pair[0].rank):
            best_pair = pair
    return best_pair[0]


def _argmin_tier(costs: Mapping[Tier, float]) -> Tier:
    best = None
    for tier in Tier.ordered():
        if tier in costs and (best is None or costs[tier] < costs[best]):
            best = tier
    return best


def select_optimal_tier(v: str, gamma: Iterable[Tier], wg: WeightedGraph,
                        assigned_preds: Mapping[str, Tier],
                        shipped: Iterable[tuple[str, Tier]] = ()) -> Tier:
    return _select(v, frozenset(gamma), wg, assigned_preds, set(shipped)).tier


def _select(v: str, gamma: frozenset[Tier], wg: WeightedGraph, assigned: Mapping[str, Tier],
            shipped: set) -> Decision:
    ordered_gamma = tuple(t for t in Tier.ordered() if t in gamma)
    if not gamma:
        raise PlanError(f"{v}: empty set of potential tiers")
    if gamma == {Tier.CLOUD}:
        return Decision(v, ordered_gamma, "forced", Tier.CLOUD, MappingProxyType({}))
    g = wg.graph
    succ = largest_successor(v, wg)
    if succ is None or g.input_bytes(v) > g.output_bytes(v):
        costs = {t: wg.time(v, t) + _input_cost(v, t, assigned, wg, shipped) for t in ordered_gamma}
        return Decision(v, ordered_gamma, "local", _argmin_tier(costs), MappingProxyType(costs))
    pair_costs = lookahead_costs(v, succ, wg, gamma, assigned, shipped)
    per_tier: dict[Tier, float] = {}
    for (vt, _), cost in pair_costs.items():
        per_tier[vt] = min(cost, per_tier.get(vt, cost))
    return Decision(v, ordered_gamma, "lookahead", _argmin_pair(pair_costs),
                    MappingProxyType(per_tier), successor=succ)


def _sis_pass(layer: Iterable[str], assignment: dict[str, Tier], wg: WeightedGraph) -> int:
    """Pull SIS vertices forward until nothing changes; returns the move count."""
    g = wg.graph
    scope = sorted(layer, key=g.order)
    moves = 0
    changed = True
    while changed:
        changed = False
        for v in scope:
            for u in sorted(sis_vertices(g, v, scope), key=g.order):
                if assignment[u].precedes(assignment[v]):
                    assignment[u] = assignment[v]
                    moves += 1
                    changed = True
    return moves


def sis_update(layer: Iterable[str], plan: PartitionPlan, wg: WeightedGraph) -> PartitionPlan:
    """Apply the SIS pass to one layer of ``plan``.

    Meant to run before later layers are placed. A move that would leave an
    already placed successor before its predecessors raises PlanError.
    """
    g = wg.graph
    assignment = dict(plan.assignment)
    missing = [v for v in layer if v not in assignment]
    if missing:
        raise PlanError(f"layer vertices not assigned: {', '.join(missing)}")
    before = dict(assignment)
    if not _sis_pass(layer, assignment, wg):
        return plan
    moved = [v for v in g.vertices if v in before and assignment[v] != before[v]]
    for u in moved:
        for s in g.successors(u):
            if s not in assignment:
                continue
            pred_tiers = [assignment[h] for h in g.predecessors(s) if h in assignment]
            if assignment[s] not in potential_tiers(pred_tiers):
                raise PlanError(f"moving {u} to {assignment[u].label} strands placed successor {s} "
                                f"on {assignment[s].label}")
    theta = _theta_if_complete(assignment, wg)
    return PartitionPlan(MappingProxyType(assignment), theta, plan.provenance, plan.basis)


def _theta_if_complete(assignment: Mapping[str, Tier], wg: WeightedGraph) -> float:
    if all(v in assignment for v in wg.graph.vertices):
        return total_latency(assignment, wg)
    return float("nan")


def _ordered(assignment: Mapping[str, Tier], wg: WeightedGraph) -> Mapping[str, Tier]:
    return MappingProxyType({v: assignment[v] for v in wg.graph.vertices})


class HorizontalPartitioner:
    """Layered greedy tier assignment with a decision trace."""

    def __init__(self, wg: WeightedGraph, strict: bool = False):
        self.wg = wg
        self.strict = strict
        self.trace: list[Decision] = []
        self.sis_moves = 0

    def run(self) -> PartitionPlan:
        wg = self.wg
        g = wg.graph
        layering = longest_distances(g)
        assignment: dict[str, Tier] = {g.source: Tier.DEVICE}
        shipped: set[tuple[str, Tier]] = set()
        for layer in layering.layers[1:]:
            for v in layer:
                preds = g.sorted_predecessors(v)
                gamma = potential_tiers((assignment[h] for h in preds), self.strict)
                decision = _select(v, gamma, wg, assignment, shipped)
                self.trace.append(decision)
                assignment[v] = decision.tier
                shipped.update((h, decision.tier) for h in preds if assignment[h] != decision.tier)
            moved = _sis_pass(layer, assignment, wg)
            if moved:
                self.sis_moves += moved
                shipped = _shipments(assignment, wg)
        theta = total_latency(assignment, wg)
        logger.debug(f"📊 HPA placed {len(g)} vertices over {layering.depth} layers, Θ={theta:.6g}s")
        return PartitionPlan(_ordered(assignment, wg), theta, Provenance.FULL, wg)


def hpa(wg: WeightedGraph, strict: bool = False) -> PartitionPlan:
    return HorizontalPartitioner(wg, strict).run()


def is_valid(assignment: Mapping[str, Tier], wg: WeightedGraph, strict: bool = False) -> bool:
    g = wg.graph
    if assignment.get(g.source) is not Tier.DEVICE:
        return False
    for v in g.vertices[1:]:
        if assignment[v] not in potential_tiers((assignment[h] for h in g.predecessors(v)), strict):
            return False
    return True


def all_on_tier(wg: WeightedGraph, tier: Tier) -> PartitionPlan:
    """Everything but the input vertex on ``tier``."""
    g = wg.graph
    assignment = {v: (Tier.DEVICE if v == g.source else tier) for v in g.vertices}
    return PartitionPlan(_ordered(assignment, wg), total_latency(assignment, wg), Provenance.FULL, wg)


def brute_force_optimal(wg: WeightedGraph, strict: bool = False, limit: int = BRUTE_FORCE_LIMIT,
                        incumbent: Optional[PartitionPlan] = None) -> tuple[PartitionPlan, float]:
    """Exhaustive minimum of Θ over all valid assignments (branch and bound).

    Ties go to the lexicographically smallest assignment (tier ranks in
    declaration order). A valid ``incumbent`` plan seeds the bound.
    """
    g = wg.graph
    if len(g) > limit:
        raise GuardError(f"exhaustive search limited to {limit} vertices, graph has {len(g)}")
    order = g.topological_order()
    assignment: dict[str, Tier] = {g.source: Tier.DEVICE}
    shipped: dict[tuple[str, Tier], int] = {}
    best: dict = {"theta": float("inf"), "key": None, "assignment": None}

    def key_of(a: Mapping[str, Tier]) -> tuple[int, ...]:
        return tuple(a[v].rank for v in g.vertices)

    if incumbent is not None:
        if not is_valid(incumbent.assignment, wg, strict):
            raise PlanError("incumbent plan is not valid for this graph")
        best.update(theta=total_latency(incumbent.assignment, wg), key=key_of(incumbent.assignment),
                    assignment=dict(incumbent.assignment))

    def visit(i: int, partial: float):
        if partial > best["theta"]:
            return
        if i == len(order):
            key = key_of(assignment)
            if partial < best["theta"] or (partial == best["theta"] and key < best["key"]):
                best.update(theta=partial, key=key, assignment=dict(assignment))
            return
        v = order[i]
        preds = g.sorted_predecessors(v)
        gamma = potential_tiers((assignment[h] for h in preds), strict)
        for tier in Tier.ordered():
            if tier not in gamma:
                continue
            added = []
            cost = wg.time(v, tier)
            for h in preds:
                src = assignment[h]
                if src == tier:
                    continue
                pair = (h, tier)
                if not shipped.get(pair):
                    cost += wg.transfer(h, src, tier)
                shipped[pair] = shipped.get(pair, 0) + 1
                added.append(pair)
            assignment[v] = tier
            visit(i + 1, partial + cost)
            del assignment[v]
            for pair in added:
                shipped[pair] -= 1

    visit(1, wg.time(g.source, Tier.DEVICE))
    theta = total_latency(best["assignment"], wg)
    plan = PartitionPlan(_ordered(best["assignment"], wg), theta, Provenance.FULL, wg)
    return plan, theta


def plan_gap(plan: PartitionPlan, reference: PartitionPlan) -> float:
    """Relative excess of ``plan`` over ``reference``: (Θ - Θ_ref) / Θ_ref."""
    if reference.theta == 0:
        return 0.0 if plan.theta == 0 else float("inf")
    return (plan.theta - reference.theta) / reference.theta


def gap_summary(gaps: Sequence[float], tolerance: float = 1e-12) -> dict[str, float]:
    """Trial count, mean and max relative gap, and how many trials matched the optimum."""
    if not gaps:
        raise PlanError("no gaps to summarize")
    return {
        "trials": len(gaps),
        "mean_gap": statistics.fmean(gaps),
        "max_gap": max(gaps),
        "exact": sum(1 for g in gaps if g <= tolerance),
    }


def _ratio_outside(old: float, new: float, lower: float, upper: float) -> bool:
    if old == 0:
        return new != 0
    ratio = new / old
    return ratio < lower or ratio > upper


def exceeds_thresholds(basis: WeightedGraph, wg_new: WeightedGraph, changed: Iterable[str],
                       thresholds: Thresholds) -> bool:
    for v in changed:
        old, new = basis.vertex_weights[v], wg_new.vertex_weights[v]
        for o, n in zip(old.as_tuple(), new.as_tuple()):
            if _ratio_outside(o, n, thresholds.time_lower, thresholds.time_upper):
                return True
    old_bw, new_bw = basis.bandwidth.as_dict(), wg_new.bandwidth.as_dict()
    return any(_ratio_outside(old_bw[k], new_bw[k], thresholds.bandwidth_lower, thresholds.bandwidth_upper)
               for k in old_bw)


def incremental_update(plan: PartitionPlan, wg_new: WeightedGraph, changed: Iterable[str],
                       thresholds: Thresholds, strict: bool = False,
                       escalate_gap: Optional[float] = None) -> PartitionPlan:
    """Re-place only the neighbourhood of changed vertices.

    The scope is each changed vertex, its SIS vertices, its direct
    successors and their SIS vertices. Vertices outside the scope whose
    predecessors moved past them are re-placed as well so the result stays
    valid. Returns ``plan`` itself when every change is within thresholds.
    """
    g = wg_new.graph
    changed = list(changed)
    unknown = [v for v in changed if v not in g]
    if unknown:
        raise GraphError(f"changed vertex not in graph: {', '.join(unknown)}")
    basis = plan.basis if plan.basis is not None else wg_new
    if not exceeds_thresholds(basis, wg_new, changed, thresholds):
        logger.debug("🔍 All changes within thresholds; keeping the current plan")
        return plan

    layering = longest_distances(g)

    def layer_of(v: str) -> tuple[str, ...]:
        return layering.layers[layering.delta[v]]

    scope: set[str] = set()
    for c in changed:
        scope.add(c)
        scope |= sis_vertices(g, c, layer_of(c))
        for s in g.successors(c):
            scope.add(s)
            scope |= sis_vertices(g, s, layer_of(s))
    scope.discard(g.source)

    assignment = dict(plan.assignment)
    recomputed = 0
    repaired = 0
    for v in sorted(g.vertices[1:], key=lambda x: (layering.delta[x], g.order(x))):
        preds = g.sorted_predecessors(v)
        gamma = potential_tiers((assignment[h] for h in preds), strict)
        if v not in scope and assignment[v] in gamma:
            continue
        others = {u: t for u, t in assignment.items() if u != v}
        decision = _select(v, gamma, wg_new, assignment, _shipments(others, wg_new))
        if v in scope:
            recomputed += 1
        else:
            repaired += 1
        assignment[v] = decision.tier

    theta = total_latency(assignment, wg_new)
    result = PartitionPlan(_ordered(assignment, wg_new), theta, Provenance.INCREMENTAL, wg_new)
    if repaired:
        logger.warning(f"⚠️ Incremental update re-placed {repaired} vertices outside its scope to stay valid")
    logger.debug(f"🔍 Incremental update recomputed {recomputed} vertices, Θ={theta:.6g}s")

    if escalate_gap is not None:
        full = hpa(wg_new, strict)
        gap = plan_gap(result, full)
        if gap > escalate_gap:
            logger.warning(f"⚠️ Incremental plan is {gap:.1%} above a full replan; escalating")
            return full
    return result
