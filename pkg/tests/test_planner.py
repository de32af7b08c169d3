"""Expected-success propagation, selection and the greedy search loop."""

import numpy as np
import pytest

from retrofallback.graph import MOLECULE, enumerate_plans, new_graph
from retrofallback.heuristics import OptimisticHeuristic
from retrofallback.planner import (
    alpha_values,
    compute_psi,
    compute_rho,
    heuristic_values,
    run_retro_fallback,
    select_next,
    sigma_bar_oracle,
)
from retrofallback.propagation import GraphIndex, success_pass
from retrofallback.reactions import CachedModel, SyntheticWorld, WorldConfig
from retrofallback.uncertainty import (
    IndependentBuyability,
    IndependentFeasibility,
    ScenarioMatrix,
    unpack_bits,
)

from .conftest import (
    FixedProcess,
    GOLDEN_EXPECTED,
    GOLDEN_H,
    MappingHeuristic,
    build_golden_graph,
    golden_label,
    golden_matrix,
)


class TestWorkedExample:
    def test_psi_and_rho_match_all_labels_exactly(self, golden):
        graph, matrix, heuristic = golden
        psi = compute_psi(graph, matrix, heuristic)
        rho = compute_rho(graph, psi)
        for nid in range(len(graph)):
            _, e_psi, e_rho = GOLDEN_EXPECTED[golden_label(graph, nid)]
            assert psi[nid, 0] == pytest.approx(e_psi, abs=1e-12), golden_label(graph, nid)
            assert rho[nid, 0] == pytest.approx(e_rho, abs=1e-12), golden_label(graph, nid)

    def test_buyability_dominates_the_heuristic_at_buyable_leaves(self, golden):
        graph, matrix, heuristic = golden
        psi = compute_psi(graph, matrix, heuristic)
        assert psi[graph.find_molecule("mc"), 0] == 1.0  # h=0.5 is dominated

    def test_infeasible_reaction_has_zero_psi(self, golden):
        graph, matrix, heuristic = golden
        psi = compute_psi(graph, matrix, heuristic)
        rxn = next(r for r in graph.reaction_ids()
                   if golden_label(graph, r) == "r:m*>>mf")
        assert psi[rxn, 0] == 0.0

    def test_alpha_and_selection_pick_the_strong_branch(self, golden):
        graph, matrix, heuristic = golden
        idx = GraphIndex(graph)
        psi = compute_psi(graph, matrix, heuristic, idx=idx)
        rho = compute_rho(graph, psi, idx=idx)
        s = success_pass(idx, matrix.packed)
        root_bits = unpack_bits(s[graph.root: graph.root + 1], matrix.k)[0]
        fail = 1.0 - root_bits.astype(float)
        frontier = np.flatnonzero(idx.frontier)
        alpha = alpha_values(frontier, rho, fail)
        by_name = {graph.nodes[f].molecule: a for f, a in zip(frontier, alpha)}
        assert by_name["mg"] == pytest.approx(0.9, abs=1e-12)
        assert by_name["mf"] == 0.0
        assert by_name["md"] == pytest.approx(0.01, abs=1e-12)
        chosen = select_next(frontier, alpha, matrix.marginals)
        assert graph.nodes[chosen].molecule == "mg"

    def test_alpha_averages_over_failing_scenarios_only(self):
        graph = build_golden_graph()
        # scenario 0: the worked example (root fails); scenario 1: everything
        # succeeds, so it contributes nothing to the expected improvement
        matrix = golden_matrix(graph, k=2)
        heuristic = MappingHeuristic(GOLDEN_H)
        idx = GraphIndex(graph)
        psi = compute_psi(graph, matrix, heuristic, idx=idx)
        rho = compute_rho(graph, psi, idx=idx)
        fail = np.array([1.0, 0.0])  # pretend scenario 1 already succeeded
        frontier = np.flatnonzero(idx.frontier)
        alpha = alpha_values(frontier, rho, fail)
        by_name = {graph.nodes[f].molecule: a for f, a in zip(frontier, alpha)}
        assert by_name["mg"] == pytest.approx(0.45, abs=1e-12)

    def test_known_double_counting_of_the_shared_leaf(self, golden):
        graph, matrix, heuristic = golden
        psi = compute_psi(graph, matrix, heuristic)
        h_node = heuristic_values(graph, heuristic)
        r1 = next(r for r in graph.reaction_ids()
                  if golden_label(graph, r) == "r:m*>>ma.mb")
        plans = [p for p in enumerate_plans(graph, "m*") if r1 in p.nodes]
        best = max(sigma_bar_oracle(graph, p, matrix.scenario(0), h_node)
                   for p in plans)
        assert best == pytest.approx(0.1, abs=1e-12)  # true plan value
        assert psi[r1, 0] == pytest.approx(0.01, abs=1e-12)  # double-counted


class TestSigmaBarOracle:
    def test_fully_solved_plan_scores_one(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9)])
        g.expand(g.find_molecule("a"), [])
        matrix = ScenarioMatrix(g, FixedProcess(1, {}, default=1.0),
                                FixedProcess(1, {}, default=1.0))
        plan = next(p for p in enumerate_plans(g, "p") if p.reactions())
        h = np.zeros(len(g))
        assert sigma_bar_oracle(g, plan, matrix.scenario(0), h) == 1.0

    def test_worked_example_strong_plan(self, golden):
        graph, matrix, heuristic = golden
        h_node = heuristic_values(graph, heuristic)
        plans = enumerate_plans(graph, "m*")
        plan = next(p for p in plans
                    if {graph.nodes[m].molecule for m in p.molecules(graph)}
                    == {"m*", "mg", "mh"})
        value = sigma_bar_oracle(graph, plan, matrix.scenario(0), h_node)
        assert value == pytest.approx(0.9, abs=1e-12)

    def test_expanded_dead_end_gets_no_heuristic_credit(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9)])
        g.expand(g.find_molecule("a"), [])  # dead end, off the frontier
        matrix = ScenarioMatrix(g, FixedProcess(1, {}, default=1.0),
                                FixedProcess(1, {}, default=0.0))
        h = np.full(len(g), 0.7)
        plan = next(p for p in enumerate_plans(g, "p") if p.reactions())
        assert sigma_bar_oracle(g, plan, matrix.scenario(0), h) == 0.0


def _random_tree(rng, max_nodes=12):
    """Random tree-mode graph with distinct molecule strings, so no plan
    can use the same molecule twice and the recursions are exact."""
    g = new_graph("t0", mode="tree")
    counter = [1]
    while len(g) < max_nodes:
        frontier = sorted(g.frontier())
        if not frontier:
            break
        nid = frontier[int(rng.integers(len(frontier)))]
        if rng.random() < 0.25:
            g.expand(nid, [])  # expanded dead end
            continue
        n_props = int(rng.integers(1, 3))
        props = []
        for _ in range(n_props):
            size = int(rng.integers(1, 3))
            names = []
            for _ in range(size):
                names.append(f"t{counter[0]}")
                counter[0] += 1
            props.append((names, float(rng.random())))
        g.expand(nid, props)
    return g


def _oracle_values(graph, scenario, h_node):
    """Brute-force psi/rho: maxima of the plan oracle over enumerated plans."""
    n = len(graph)
    psi = np.zeros(n)
    rho = np.zeros(n)
    for mid in graph.molecule_ids():
        for plan in enumerate_plans(graph, mid, max_count=100_000):
            value = sigma_bar_oracle(graph, plan, scenario, h_node)
            for nid in plan.nodes:
                psi[nid] = max(psi[nid], value)
                if mid == graph.root:
                    rho[nid] = max(rho[nid], value)
    return psi, rho


class TestOracleEquivalence:
    def test_recursions_match_brute_force_on_seeded_trees(self):
        rng = np.random.default_rng(2024)
        for _ in range(40):
            g = _random_tree(rng)
            k = 1
            feas_rows = {}
            buy_rows = {}
            h_values = {}
            for node in g.nodes:
                if node.kind == MOLECULE:
                    buy_rows[node.molecule] = [int(rng.random() < 0.4)]
                    h_values[node.molecule] = float(rng.random())
                else:
                    from retrofallback.uncertainty import ScenarioMatrix as SM

                    feas_rows[SM.node_info(g, node.id).signature] = [
                        int(rng.random() < 0.7)
                    ]
            matrix = ScenarioMatrix(g, FixedProcess(k, feas_rows),
                                    FixedProcess(k, buy_rows))
            heuristic = MappingHeuristic(h_values)
            psi = compute_psi(g, matrix, heuristic)[:, 0]
            rho = compute_rho(g, compute_psi(g, matrix, heuristic))[:, 0]
            h_node = heuristic_values(g, heuristic)
            psi_oracle, rho_oracle = _oracle_values(g, matrix.scenario(0), h_node)
            assert np.abs(psi - psi_oracle).max() < 1e-12
            assert np.abs(rho - rho_oracle).max() < 1e-12


class TestValueRelations:
    def test_single_plan_chain_propagates_the_root_value(self):
        g = new_graph("a")
        g.expand(0, [(["b"], 0.9)])
        g.expand(g.find_molecule("b"), [(["c"], 0.9)])
        matrix = ScenarioMatrix(g, FixedProcess(1, {}, default=1.0),
                                FixedProcess(1, {}, default=0.0))
        heuristic = MappingHeuristic({"c": 0.5})
        psi = compute_psi(g, matrix, heuristic)
        rho = compute_rho(g, psi)
        leaf = g.find_molecule("c")
        assert rho[leaf, 0] == psi[g.root, 0] == 0.5

    def test_invariant_ordering_on_random_runs(self):
        world = SyntheticWorld(WorldConfig(seed=5, max_children=3))
        target = world.random_targets(1, (5, 6))[0]
        feas = IndependentFeasibility(lambda info: 0.5, k=32, seed=1)
        buy = IndependentBuyability("binary", k=32, seed=1)
        result = run_retro_fallback(target, world, feas, buy,
                                    OptimisticHeuristic(), budget=15,
                                    tier_fn=world.tier)
        g = result.graph
        matrix = result.matrix
        idx = GraphIndex(g)
        psi = compute_psi(g, matrix, OptimisticHeuristic(), idx=idx)
        rho = compute_rho(g, psi, idx=idx)
        s = unpack_bits(success_pass(idx, matrix.packed), matrix.k).astype(float)
        assert (s <= psi + 1e-12).all()
        assert (rho <= psi + 1e-12).all()
        assert np.abs(rho[g.root] - psi[g.root]).max() < 1e-12

    def test_zero_heuristic_collapses_psi_to_success(self):
        world = SyntheticWorld(WorldConfig(seed=6, max_children=3))
        target = world.random_targets(1, (5, 6))[0]
        feas = IndependentFeasibility(lambda info: 0.5, k=16, seed=2)
        buy = IndependentBuyability("binary", k=16, seed=2)
        result = run_retro_fallback(target, world, feas, buy,
                                    MappingHeuristic({}, default=0.0), budget=10,
                                    tier_fn=world.tier)
        g, matrix = result.graph, result.matrix
        idx = GraphIndex(g)
        psi = compute_psi(g, matrix, MappingHeuristic({}, default=0.0), idx=idx)
        s = unpack_bits(success_pass(idx, matrix.packed), matrix.k).astype(float)
        assert np.array_equal(psi[g.root], s[g.root])


class TestAlphaAggregation:
    def test_quantile_and_mode_variants(self):
        frontier = np.array([0, 1])
        rho = np.array([[0.2, 0.4, 0.6, 0.8],
                        [0.5, 0.5, 0.5, 0.1]])
        fail = np.ones(4)
        assert alpha_values(frontier, rho, fail, mode="mean")[0] == pytest.approx(0.5)
        q = alpha_values(frontier, rho, fail, mode="quantile", quantile=0.5)
        assert q[0] == pytest.approx(0.5)
        m = alpha_values(frontier, rho, fail, mode="mode")
        assert m[1] == pytest.approx(0.5)  # the most frequent contribution
        with pytest.raises(Exception):
            alpha_values(frontier, rho, fail, mode="median-ish")


class TestSelectNext:
    def test_ties_prefer_unbuyable_then_lower_id(self):
        frontier = np.array([3, 5, 9])
        alpha = np.array([0.5, 0.5, 0.2])
        marginals = np.zeros(10)
        marginals[3] = 1.0  # buyable
        assert select_next(frontier, alpha, marginals) == 5
        alpha = np.zeros(3)
        assert select_next(frontier, alpha, marginals) == 5

    def test_unique_maximum_wins_regardless_of_buyability(self):
        frontier = np.array([1, 2])
        alpha = np.array([0.1, 0.9])
        marginals = np.array([0.0, 0.0, 1.0])
        assert select_next(frontier, alpha, marginals) == 2


class TestRunRetroFallback:
    def test_buyable_target_terminates_immediately(self):
        world = SyntheticWorld(WorldConfig(seed=0))
        feas = IndependentFeasibility(lambda info: 0.5, k=8, seed=0)
        buy = IndependentBuyability("binary", k=8, seed=0)
        result = run_retro_fallback("a", world, feas, buy, OptimisticHeuristic(),
                                    budget=5, tier_fn=lambda m: 1)
        assert result.termination == "all-solved"
        assert result.calls_used == 0
        assert result.trace[-1].ssp == 1.0

    def test_dead_end_world_empties_the_frontier(self):
        class DeadWorld:
            call_count = 0

            def propose(self, molecule):
                self.call_count += 1
                return []

        feas = IndependentFeasibility(lambda info: 0.5, k=8, seed=0)
        buy = IndependentBuyability("binary", k=8, seed=0)
        result = run_retro_fallback("zz", DeadWorld(), feas, buy,
                                    OptimisticHeuristic(), budget=5)
        assert result.termination == "empty-frontier"
        assert result.final_ssp == 0.0

    def test_model_failure_aborts_with_partial_trace(self):
        class FlakyWorld:
            call_count = 0

            def propose(self, molecule):
                self.call_count += 1
                if self.call_count >= 2:
                    raise RuntimeError("backend unavailable")
                return [([molecule[1:]], 0.9)] if len(molecule) > 1 else []

        feas = IndependentFeasibility(lambda info: 0.5, k=8, seed=0)
        buy = IndependentBuyability("binary", k=8, seed=0)
        result = run_retro_fallback("abc", FlakyWorld(), feas, buy,
                                    OptimisticHeuristic(), budget=5)
        assert result.termination == "error"
        assert "backend unavailable" in result.error
        assert len(result.trace) == 2

    def test_trace_ssp_is_non_decreasing_and_runs_are_deterministic(self):
        world_cfg = WorldConfig(seed=13, max_children=4)

        def run():
            world = SyntheticWorld(world_cfg)
            feas = IndependentFeasibility(lambda info: 0.5, k=64, seed=3)
            buy = IndependentBuyability("binary", k=64, seed=3)
            target = world.random_targets(1, (6, 6))[0]
            return run_retro_fallback(target, world, feas, buy,
                                      OptimisticHeuristic(), budget=25,
                                      tier_fn=world.tier)

        first, second = run(), run()
        assert first.trace_json() != []
        stripped = lambda r: [  # noqa: E731
            {k: v for k, v in e.items() if k != "elapsed_ms"} for e in r.trace_json()
        ]
        assert stripped(first) == stripped(second)
        ssp = [e.ssp for e in first.trace if e.ssp is not None]
        assert all(a <= b + 1e-15 for a, b in zip(ssp, ssp[1:]))

    def test_budget_is_respected(self):
        world = SyntheticWorld(WorldConfig(seed=17))
        feas = IndependentFeasibility(lambda info: 0.5, k=16, seed=0)
        buy = IndependentBuyability("binary", k=16, seed=0)
        target = world.random_targets(1, (7, 7))[0]
        result = run_retro_fallback(target, world, feas, buy,
                                    OptimisticHeuristic(), budget=9,
                                    tier_fn=world.tier)
        assert result.calls_used <= 9
        if result.termination == "budget":
            assert result.calls_used == 9
