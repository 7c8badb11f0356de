import itertools
import logging

import pytest

from tierplan import documents, hpa_planner
from tierplan.cases import random_perturbation, random_times, random_weighted_graph, rng_for
from tierplan.errors import GraphError, GuardError, PlanError
from tierplan.graph_core import build_graph, longest_distances
from tierplan.hpa_planner import (
    HorizontalPartitioner,
    PartitionPlan,
    Provenance,
    Thresholds,
    all_on_tier,
    brute_force_optimal,
    candidate_latency,
    exceeds_thresholds,
    gap_summary,
    hpa,
    incremental_update,
    is_valid,
    largest_successor,
    lookahead_costs,
    lookahead_select,
    plan_gap,
    potential_tiers,
    select_optimal_tier,
    sis_update,
    total_latency,
)
from tierplan.latency_model import BandwidthConfig, TierTimes, WeightedGraph
from tierplan.tiers import Tier
from tests.conftest import chain_graph, fixture_path
from tests.oracles import dedup_latency, random_valid_assignment

logger = logging.getLogger(__name__)

D, E, C = Tier.DEVICE, Tier.EDGE, Tier.CLOUD


def weighted(g, times: dict, bw: BandwidthConfig) -> WeightedGraph:
    weights = {v: TierTimes(*times[v]) if v in times else TierTimes(0.0, 0.0, 0.0) for v in g.vertices}
    return WeightedGraph(g, weights, bw)


@pytest.fixture
def lookahead_wg():
    """1000-byte input, 4000-byte output: input costs 1/4/5 s and output 4/16/20 s per link."""
    g = chain_graph(1000, 4000, 10)
    return weighted(g, {"v1": (3.0, 2.0, 1.0), "v2": (8.0, 3.0, 1.0)}, BandwidthConfig(8000.0, 2000.0, 1600.0))


@pytest.fixture
def shrinking_wg():
    """v1 reads 2000 bytes and writes 100; shipping the input costs 2 ms to edge, 8 ms to cloud."""
    g = chain_graph(2000, 100, 50)
    return weighted(g, {"v1": (10e-3, 4e-3, 5e-3), "v2": (1e-3, 1e-3, 1e-3)},
                    BandwidthConfig(8e6, 1e6, 2e6))


class TestTier:
    def test_order_and_rank(self):
        assert [t.rank for t in Tier.ordered()] == [0, 1, 2]
        assert D.precedes(E) and E.precedes(C) and not C.precedes(D)
        assert Tier.from_rank(1) is E

    def test_parse(self):
        assert Tier.parse("cloud") is C
        assert Tier.parse("e") is E
        with pytest.raises(ValueError):
            Tier.parse("fog")


class TestPotentialTiers:
    @pytest.mark.parametrize("preds,expected", [
        ({E}, {E, C}),
        ({D}, {D, E, C}),
        ({C}, {C}),
        ({E, C}, {E, C}),
        (set(), {D}),
    ])
    def test_follows_most_device_ward_predecessor(self, preds, expected):
        assert potential_tiers(preds) == frozenset(expected)

    def test_strict_mode_follows_latest_predecessor(self):
        assert potential_tiers({D, E}, strict=True) == frozenset({E, C})
        assert potential_tiers({D, E}) == frozenset({D, E, C})


class TestCandidateLatency:
    def test_processing_plus_input_transfer(self, shrinking_wg):
        assert candidate_latency("v1", E, {"v0": D}, shrinking_wg) == pytest.approx(6e-3, rel=1e-12)

    def test_co_located_costs_processing_only(self, shrinking_wg):
        assert candidate_latency("v1", D, {"v0": D}, shrinking_wg) == 10e-3

    def test_already_shipped_input_is_free(self, shrinking_wg):
        assert candidate_latency("v1", E, {"v0": D}, shrinking_wg, shipped={("v0", E)}) == 4e-3

    def test_predecessors_must_be_assigned(self, shrinking_wg):
        with pytest.raises(PlanError):
            candidate_latency("v2", E, {"v0": D}, shrinking_wg)


class TestLookahead:
    def test_six_placement_pairs(self, lookahead_wg):
        costs = lookahead_costs("v1", "v2", lookahead_wg, Tier.ordered(), {"v0": D})
        assert costs == {(D, D): 11.0, (D, E): 10.0, (E, E): 6.0, (E, C): 20.0, (C, C): 7.0, (D, C): 24.0}
        assert lookahead_select("v1", "v2", lookahead_wg, Tier.ordered(), {"v0": D}) is E

    def test_pairs_restricted_to_allowed_tiers(self, lookahead_wg):
        costs = lookahead_costs("v1", "v2", lookahead_wg, {E, C}, {"v0": D})
        assert set(costs) == {(E, E), (E, C), (C, C)}

    def test_forced_cloud(self, lookahead_wg):
        assert lookahead_select("v1", "v2", lookahead_wg, {C}, {"v0": D}) is C

    def test_free_transfers_favour_cheapest_pair(self):
        g = chain_graph(0, 0, 0)
        wg = weighted(g, {"v1": (3.0, 2.0, 1.0), "v2": (8.0, 3.0, 1.0)}, BandwidthConfig(1.0, 1.0, 1.0))
        assert lookahead_select("v1", "v2", wg, Tier.ordered(), {"v0": D}) is C

    def test_largest_successor_uses_edge_time(self):
        g = build_graph({
            "input": {"bytes": 4},
            "vertices": [{"id": "a"}, {"id": "b"}, {"id": "c"}, {"id": "d"}],
            "links": [["v0", "a"], ["a", "b"], ["a", "c"], ["a", "d"]],
        })
        wg = weighted(g, {"a": (1.0, 1.0, 1.0), "b": (9.0, 2.0, 1.0), "c": (1.0, 5.0, 1.0),
                          "d": (1.0, 5.0, 9.0)}, BandwidthConfig(1.0, 1.0, 1.0))
        assert largest_successor("a", wg) == "c"
        assert largest_successor("d", wg) is None


class TestSelectOptimalTier:
    def test_shrinking_layer_compares_candidates(self, shrinking_wg):
        assert select_optimal_tier("v1", Tier.ordered(), shrinking_wg, {"v0": D}) is E

    def test_forced_cloud(self, shrinking_wg):
        assert select_optimal_tier("v1", {C}, shrinking_wg, {"v0": D}) is C

    def test_sink_uses_local_comparison(self):
        g = chain_graph(10, 1000)
        wg = weighted(g, {"v1": (3.0, 2.0, 1.0)}, BandwidthConfig(1e9, 1e9, 1e9))
        planner = HorizontalPartitioner(wg)
        planner.run()
        assert planner.trace[0].branch == "local"
        assert planner.trace[0].successor is None

    def test_growing_layer_looks_ahead(self, lookahead_wg):
        planner = HorizontalPartitioner(lookahead_wg)
        plan = planner.run()
        assert planner.trace[0].branch == "lookahead"
        assert planner.trace[0].successor == "v2"
        assert plan.assignment == {"v0": D, "v1": E, "v2": E}
        assert plan.theta == 6.0


class TestTotalLatency:
    @pytest.fixture
    def fan_out(self):
        g = build_graph({
            "element_size": 1,
            "vertices": [{"id": "v0", "kind": "input", "output_bytes": 100}, {"id": "h", "output_bytes": 200},
                         {"id": "a", "output_bytes": 10}, {"id": "b", "output_bytes": 10}],
            "links": [["v0", "h"], ["h", "a"], ["h", "b"]],
        })
        return weighted(g, {"h": (4.0, 2.0, 1.0), "a": (4.0, 2.0, 1.0), "b": (4.0, 2.0, 1.0)},
                        BandwidthConfig(800.0, 400.0, 200.0))

    def test_one_charge_per_destination_tier(self, fan_out):
        assignment = {"v0": D, "h": E, "a": C, "b": C}
        # h on edge (2) + a, b on cloud (1 + 1) + input to edge (1) + h to cloud once (4)
        assert total_latency(assignment, fan_out) == 9.0
        assert dedup_latency(assignment, fan_out) == 9.0

    def test_matches_link_enumeration_exactly(self):
        rng = rng_for(19)
        for _ in range(500):
            wg = random_weighted_graph(rng, int(rng.integers(2, 21)))
            assignment = random_valid_assignment(rng, wg, Tier.ordered())
            assert total_latency(assignment, wg) == dedup_latency(assignment, wg)

    def test_co_located(self, fan_out):
        assert total_latency({"v0": D, "h": D, "a": D, "b": D}, fan_out) == 12.0

    def test_incomplete_assignment(self, fan_out):
        with pytest.raises(PlanError, match="incomplete"):
            total_latency({"v0": D, "h": E}, fan_out)


class TestSisUpdate:
    def test_sibling_follows_anchor(self, sibling_wg):
        assignment = {"v0": D, "v1": D, "v2": D, "v3": D, "v4": D, "v5": C, "v6": E, "v7": D}
        plan = PartitionPlan(assignment, total_latency(assignment, sibling_wg))
        layer = longest_distances(sibling_wg.graph).layers[2]
        updated = sis_update(layer, plan, sibling_wg)
        assert updated.assignment["v6"] is C
        assert updated.assignment["v7"] is D
        assert updated.theta == total_latency(updated.assignment, sibling_wg)

    def test_no_siblings_keeps_plan(self, sibling_wg):
        assignment = {v: D for v in sibling_wg.graph.vertices}
        plan = PartitionPlan(assignment, total_latency(assignment, sibling_wg))
        assert sis_update(("v1", "v2", "v3", "v4"), plan, sibling_wg) is plan

    def test_unassigned_layer(self, sibling_wg):
        plan = PartitionPlan({"v0": D}, 0.0)
        with pytest.raises(PlanError):
            sis_update(("v1",), plan, sibling_wg)

    @staticmethod
    def interior_wg() -> WeightedGraph:
        """y's inputs are a strict subset of x's; both sit in the middle layer, z follows y."""
        g = build_graph({
            "input": {"id": "v0", "bytes": 1000},
            "element_size": 1,
            "vertices": [{"id": v, "kind": "other", "output_bytes": 100} for v in ("p", "q", "x", "y", "z")],
            "links": [["p", "x"], ["q", "x"], ["p", "y"], ["y", "z"]],
        })
        return weighted(g, {}, BandwidthConfig(8e6, 1e6, 2e6))

    def test_interior_layer_with_later_successor(self):
        wg = self.interior_wg()
        layer = longest_distances(wg.graph).layers[2]
        assert set(layer) == {"x", "y"}
        assignment = {"v0": D, "p": D, "q": E, "x": E, "y": D, "z": C}
        updated = sis_update(layer, PartitionPlan(assignment, total_latency(assignment, wg)), wg)
        assert updated.assignment["y"] is E
        assert is_valid(updated.assignment, wg)
        assert updated.theta == total_latency(updated.assignment, wg)

    def test_interior_layer_refuses_to_strand_successor(self):
        wg = self.interior_wg()
        layer = longest_distances(wg.graph).layers[2]
        assignment = {"v0": D, "p": D, "q": E, "x": E, "y": D, "z": D}
        assert is_valid(assignment, wg)
        with pytest.raises(PlanError, match="strands placed successor z"):
            sis_update(layer, PartitionPlan(assignment, total_latency(assignment, wg)), wg)

    def test_never_worsens_last_layer_with_ordered_times(self):
        rng = rng_for(11)
        for _ in range(1000):
            wg = random_weighted_graph(rng, int(rng.integers(3, 13)), monotone=True)
            assignment = random_valid_assignment(rng, wg, Tier.ordered())
            before = PartitionPlan(assignment, total_latency(assignment, wg))
            last = longest_distances(wg.graph).layers[-1]
            after = sis_update(last, before, wg)
            assert after.theta <= before.theta
            assert is_valid(after.assignment, wg)


class TestHpa:
    def test_single_layer_model(self):
        g = chain_graph(2000, 100)
        wg = weighted(g, {"v1": (10e-3, 4e-3, 5e-3)}, BandwidthConfig(8e6, 1e6, 2e6))
        plan = hpa(wg)
        assert plan.assignment == {"v0": D, "v1": E}
        assert plan.theta == pytest.approx(6e-3, rel=1e-12)
        assert plan.provenance is Provenance.FULL

    def test_zero_cost_graph_stays_on_device(self, branching_graph, wifi):
        wg = WeightedGraph(branching_graph, {v: TierTimes(0.0, 0.0, 0.0) for v in branching_graph.vertices}, wifi)
        plan = hpa(wg)
        assert set(plan.assignment.values()) == {D}
        assert plan.theta == 0.0

    def test_stage_chain(self, three_stage_wg):
        plan = hpa(three_stage_wg)
        assert plan.assignment == {"v0": D, "v1": D, "v2": E, "v3": C}
        assert plan.theta == pytest.approx(7.2e-3, rel=1e-12)

    def test_branching_graph_against_exhaustive(self, branching_wg):
        plan = hpa(branching_wg)
        optimum, theta = brute_force_optimal(branching_wg)
        assert is_valid(plan.assignment, branching_wg)
        assert theta <= plan.theta * (1 + 1e-12)
        logger.info(f"branching graph: HPA gap {plan_gap(plan, optimum):.4%}")

    def test_subgraphs_partition_vertices(self, branching_wg):
        plan = hpa(branching_wg)
        parts = plan.subgraphs()
        assert sorted(v for vs in parts.values() for v in vs) == sorted(branching_wg.graph.vertices)

    def test_deterministic(self, branching_wg):
        first, second = hpa(branching_wg), hpa(branching_wg)
        assert first.assignment == second.assignment
        assert first.theta == second.theta

    def test_random_plans_are_valid(self):
        rng = rng_for(12)
        for _ in range(1000):
            wg = random_weighted_graph(rng, int(rng.integers(2, 31)))
            plan = hpa(wg)
            assert plan.assignment[wg.graph.source] is D
            assert is_valid(plan.assignment, wg)
            assert plan.theta == total_latency(plan.assignment, wg)
            assert plan.theta == dedup_latency(plan.assignment, wg)

    def test_strict_plans_respect_every_predecessor(self):
        rng = rng_for(13)
        for _ in range(200):
            wg = random_weighted_graph(rng, int(rng.integers(2, 20)))
            plan = hpa(wg, strict=True)
            assert is_valid(plan.assignment, wg, strict=True)

    def test_local_choices_are_cheapest(self):
        rng = rng_for(14)
        for _ in range(200):
            planner = HorizontalPartitioner(random_weighted_graph(rng, int(rng.integers(2, 20))))
            planner.run()
            for decision in planner.trace:
                if decision.branch == "local":
                    assert decision.costs[decision.tier] == min(decision.costs.values())


class TestValidity:
    def test_earlier_than_every_predecessor_is_invalid(self):
        g = chain_graph(10, 10, 10)
        wg = weighted(g, {}, BandwidthConfig(1.0, 1.0, 1.0))
        assert not is_valid({"v0": D, "v1": C, "v2": D}, wg)
        assert not is_valid({"v0": E, "v1": E, "v2": E}, wg)
        assert is_valid({"v0": D, "v1": E, "v2": C}, wg)

    def test_single_tier_plans(self, branching_wg):
        plan = all_on_tier(branching_wg, C)
        assert plan.assignment["v0"] is D
        assert all(plan.assignment[v] is C for v in branching_wg.graph.vertices[1:])


class TestBruteForce:
    def test_bounds_hpa(self):
        rng = rng_for(15)
        gaps = []
        for _ in range(300):
            wg = random_weighted_graph(rng, int(rng.integers(2, 13)))
            plan = hpa(wg)
            optimum, theta = brute_force_optimal(wg, incumbent=plan)
            assert theta <= plan.theta + 1e-12 * max(1.0, plan.theta)
            assert is_valid(optimum.assignment, wg)
            gaps.append(plan_gap(plan, optimum))
        summary = gap_summary(gaps)
        logger.info(f"mean gap {summary['mean_gap']:.4%}, max gap {summary['max_gap']:.4%}")
        assert summary["trials"] == 300
        assert -1e-12 <= summary["mean_gap"] <= summary["max_gap"]
        assert 0 < summary["exact"] <= 300

    def test_incumbent_does_not_change_the_optimum(self):
        rng = rng_for(14)
        for _ in range(100):
            wg = random_weighted_graph(rng, int(rng.integers(2, 9)))
            plain, theta = brute_force_optimal(wg)
            seeded, seeded_theta = brute_force_optimal(wg, incumbent=hpa(wg))
            assert seeded_theta <= theta * (1 + 1e-12)
            assert seeded_theta >= theta * (1 - 1e-12)

    def test_invalid_incumbent(self, branching_wg):
        assignment = {v: C for v in branching_wg.graph.vertices}
        with pytest.raises(PlanError, match="incumbent"):
            brute_force_optimal(branching_wg, incumbent=PartitionPlan(assignment, 0.0))

    def test_gap_summary_needs_trials(self):
        with pytest.raises(PlanError):
            gap_summary([])

    def test_single_free_vertex_matches_exactly(self):
        rng = rng_for(16)
        for _ in range(200):
            wg = random_weighted_graph(rng, 2)
            _, theta = brute_force_optimal(wg)
            assert theta == hpa(wg).theta

    def test_chain_of_two_enumerates_monotone_plans(self):
        rng = rng_for(17)
        g = chain_graph(3000, 2000, 500)
        for _ in range(50):
            wg = WeightedGraph(g, random_times(rng, g), BandwidthConfig.from_mbps(0.5, 0.2, 0.1))
            valid = []
            for t1, t2 in itertools.product(Tier.ordered(), repeat=2):
                assignment = {"v0": D, "v1": t1, "v2": t2}
                if is_valid(assignment, wg):
                    valid.append(total_latency(assignment, wg))
            assert len(valid) == 6
            _, theta = brute_force_optimal(wg)
            assert theta == min(valid)

    def test_size_guard(self):
        wg = random_weighted_graph(rng_for(18), 17)
        with pytest.raises(GuardError):
            brute_force_optimal(wg)


class TestThresholds:
    def test_bounds_must_bracket_one(self):
        with pytest.raises(PlanError):
            Thresholds(time_lower=1.2, time_upper=1.3)

    def test_bandwidth_change_exceeds(self, branching_wg):
        bw = branching_wg.bandwidth
        faster = branching_wg.with_weights(bandwidth=BandwidthConfig(bw.sigma_de * 2, bw.sigma_ec, bw.sigma_dc))
        assert exceeds_thresholds(branching_wg, faster, [], Thresholds())
        assert not exceeds_thresholds(branching_wg, branching_wg, ["v3"], Thresholds())


class TestIncrementalUpdate:
    def test_changed_vertex_and_successor_recomputed(self, branching_wg, monkeypatch):
        plan = hpa(branching_wg)
        doc = documents.read_json(fixture_path("branching_perturbation.json"))
        wg_new, changed = documents.perturbation_from_document(doc, branching_wg)
        assert changed == ["v6"]

        seen = []
        select = hpa_planner._select

        def recording(v, *args):
            seen.append(v)
            return select(v, *args)

        monkeypatch.setattr(hpa_planner, "_select", recording)
        updated = incremental_update(plan, wg_new, changed, Thresholds())
        assert {"v6", "v10"} <= set(seen)
        assert updated.provenance is Provenance.INCREMENTAL
        assert is_valid(updated.assignment, wg_new)
        assert updated.theta == total_latency(updated.assignment, wg_new)
        for v in ("v0", "v1", "v2", "v3", "v4", "v5", "v7", "v8", "v9"):
            assert updated.assignment[v] is plan.assignment[v]

    def test_within_thresholds_keeps_plan(self, branching_wg):
        plan = hpa(branching_wg)
        old = branching_wg.vertex_weights["v6"]
        wg_new = branching_wg.with_weights({"v6": TierTimes(old.device * 1.05, old.edge, old.cloud * 0.95)})
        assert incremental_update(plan, wg_new, ["v6"], Thresholds()) is plan

    def test_unknown_vertex(self, branching_wg):
        with pytest.raises(GraphError, match="not in graph"):
            incremental_update(hpa(branching_wg), branching_wg, ["v99"], Thresholds())

    def test_escalates_to_full_replan(self, branching_wg):
        plan = hpa(branching_wg)
        doc = documents.read_json(fixture_path("branching_perturbation.json"))
        wg_new, changed = documents.perturbation_from_document(doc, branching_wg)
        escalated = incremental_update(plan, wg_new, changed, Thresholds(), escalate_gap=-1.0)
        assert escalated.provenance is Provenance.FULL
        assert escalated.assignment == hpa(wg_new).assignment

    def test_random_perturbations_stay_valid(self):
        rng = rng_for(19)
        thresholds = Thresholds()
        gaps = []
        for trial in range(1000):
            wg = random_weighted_graph(rng, int(rng.integers(3, 16)))
            plan = hpa(wg)
            within = trial % 4 == 0
            wg_new, changed = random_perturbation(rng, wg, thresholds, count=int(rng.integers(1, 4)), within=within)
            updated = incremental_update(plan, wg_new, changed, thresholds)
            assert is_valid(updated.assignment, wg_new)
            if within:
                assert updated is plan
            else:
                assert updated.provenance is Provenance.INCREMENTAL
                assert updated.theta == total_latency(updated.assignment, wg_new)
                gaps.append(plan_gap(updated, hpa(wg_new)))
        logger.info(f"incremental vs full replan: mean gap {sum(gaps) / len(gaps):.4%}, max {max(gaps):.4%}")


class TestPlanGap:
    def test_relative_excess(self):
        assert plan_gap(PartitionPlan({}, 1.5), PartitionPlan({}, 1.0)) == 0.5

    def test_zero_reference(self):
        assert plan_gap(PartitionPlan({}, 0.0), PartitionPlan({}, 0.0)) == 0.0
