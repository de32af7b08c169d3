"""Success values, SSP estimation, exact oracles and the clause gadget."""

import itertools

import numpy as np
import pytest

from retrofallback.errors import CapacityError, InvalidInputError
from retrofallback.graph import MOLECULE, enumerate_plans, new_graph
from retrofallback.propagation import GraphIndex, IncrementalSuccess
from retrofallback.success import (
    estimate_ssp,
    exact_ssp_independent,
    node_success,
    plan_success,
    plan_success_all,
    sat_gadget,
    shortest_plan_length,
)
from retrofallback.uncertainty import (
    IndependentBuyability,
    IndependentFeasibility,
    MoleculeInfo,
    ScenarioMatrix,
)

from .conftest import (
    FixedProcess,
    GOLDEN_EXPECTED,
    build_golden_graph,
    golden_label,
    golden_matrix,
)


class TestPlanSuccess:
    def test_buyable_singleton_succeeds(self):
        g = new_graph("m")
        matrix = ScenarioMatrix(g, FixedProcess(1, {}, default=1.0),
                                FixedProcess(1, {"m": [1]}))
        plan = enumerate_plans(g, "m")[0]
        assert plan_success(g, plan, matrix.scenario(0)) == 1

    def test_worked_example_branch_fails_on_unbuyable_leaf(self, golden):
        graph, matrix, _ = golden
        # the plan through the feasible two-reactant branch: its first leaf
        # is not buyable in the scenario even though the reaction works
        plans = enumerate_plans(graph, "m*")
        target_plan = next(
            p for p in plans
            if {graph.nodes[m].molecule for m in p.molecules(graph)}
            == {"m*", "mg", "mh"}
        )
        assert plan_success(graph, target_plan, matrix.scenario(0)) == 0

    def test_infeasible_reaction_fails_despite_buyable_leaves(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9)])
        matrix = ScenarioMatrix(g, FixedProcess(1, {}, default=0.0),
                                FixedProcess(1, {}, default=1.0))
        plan = next(p for p in enumerate_plans(g, "p") if p.reactions())
        assert plan_success(g, plan, matrix.scenario(0)) == 0


class TestNodeSuccess:
    def test_worked_example_success_pattern(self, golden):
        graph, matrix, _ = golden
        s = node_success(graph, matrix)[:, 0]
        for nid in range(len(graph)):
            expected = GOLDEN_EXPECTED[golden_label(graph, nid)][0]
            assert s[nid] == expected, golden_label(graph, nid)

    def test_everything_buyable_makes_success_equal_feasibility(self):
        g = build_golden_graph()
        feas = FixedProcess(2, {"m*>>mf": [0, 1]}, default=1.0)
        buy = FixedProcess(2, {}, default=1.0)
        matrix = ScenarioMatrix(g, feas, buy)
        s = node_success(g, matrix)
        for node in g.nodes:
            if node.kind == MOLECULE:
                assert (s[node.id] == 1).all()
            else:
                assert np.array_equal(s[node.id], matrix.outcomes[node.id])

    def test_feasible_cycle_with_no_entry_point_stays_unsuccessful(self):
        g = new_graph("A")
        g.expand(0, [(["B"], 0.9)])
        g.expand(g.find_molecule("B"), [(["A"], 0.9)])
        matrix = ScenarioMatrix(g, FixedProcess(1, {}, default=1.0),
                                FixedProcess(1, {}, default=0.0))
        s = node_success(g, matrix)
        assert s.max() == 0  # least fixed point: no self-supporting success


class TestEstimateSsp:
    def test_target_buyable_everywhere(self):
        g = new_graph("m")
        matrix = ScenarioMatrix(g, FixedProcess(8, {}, default=1.0),
                                FixedProcess(8, {"m": [1] * 8}))
        assert estimate_ssp(g, matrix) == 1.0

    def test_worked_example_scenario_fails(self, golden):
        graph, matrix, _ = golden
        assert estimate_ssp(graph, matrix) == 0.0

    def test_two_disjoint_plans_estimate_matches_the_exact_oracle(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9), (["b"], 0.8)])
        g.expand(g.find_molecule("a"), [])
        g.expand(g.find_molecule("b"), [])
        k = 10_000
        feas = IndependentFeasibility(lambda info: 0.5, k=k, seed=0)
        buy = FixedProcess(k, {"a": [1] * k, "b": [1] * k})
        matrix = ScenarioMatrix(g, feas, buy)
        # brute-force oracle: 1 - (1 - 0.5)^2 = 0.75
        assert abs(estimate_ssp(g, matrix) - 0.75) < 0.015


class TestExactSsp:
    def test_single_plan(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9)])
        marginals = np.zeros(len(g))
        marginals[g.find_molecule("a")] = 1.0
        marginals[1] = 0.5  # the reaction node
        assert exact_ssp_independent(g, marginals) == pytest.approx(0.5)

    def test_two_independent_plans(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9), (["b"], 0.8)])
        marginals = np.zeros(len(g))
        for mol in ("a", "b"):
            marginals[g.find_molecule(mol)] = 1.0
        for rid in g.reaction_ids():
            marginals[rid] = 0.5
        assert exact_ssp_independent(g, marginals) == pytest.approx(0.75)

    def test_shared_reaction_topology_matches_inclusion_exclusion(self):
        # routes: r1 then (r2 or r3), or r4 directly; r1 is shared
        g = new_graph("t")
        g.expand(0, [(["m1"], 0.9), (["m4"], 0.8)])
        g.expand(g.find_molecule("m1"), [(["m2"], 0.9), (["m3"], 0.8)])
        p = {"t>>m1": 0.7, "t>>m4": 0.4, "m1>>m2": 0.5, "m1>>m3": 0.6}
        marginals = np.zeros(len(g))
        names = {}
        for rid in g.reaction_ids():
            sig = ScenarioMatrix.node_info(g, rid).signature
            marginals[rid] = p[sig]
        for mol in ("m2", "m3", "m4"):
            marginals[g.find_molecule(mol)] = 1.0
        # hand inclusion-exclusion: success = r4 OR (r1 AND (r2 OR r3))
        upper = 1 - (1 - p["t>>m4"]) * (1 - p["t>>m1"] * (1 - (1 - p["m1>>m2"]) * (1 - p["m1>>m3"])))
        assert exact_ssp_independent(g, marginals) == pytest.approx(upper, abs=1e-12)

    def test_capacity_guard(self):
        g = new_graph("p")
        frontier = [0]
        for step in range(12):  # 12 reactions with 2 fresh reactants each
            nid = frontier.pop(0)
            g.expand(nid, [([f"x{step}", f"y{step}"], 0.9)])
            frontier = sorted(g.frontier())
        marginals = np.full(len(g), 0.5)
        with pytest.raises(CapacityError):
            exact_ssp_independent(g, marginals, cap=10)

    def test_estimator_agrees_on_a_seeded_graph(self):
        g = new_graph("p")
        g.expand(0, [(["a", "b"], 0.9), (["c"], 0.8)])
        g.expand(g.find_molecule("c"), [(["a"], 0.9)])
        feas = IndependentFeasibility(lambda info: 0.6, k=100_000, seed=3)
        buy = IndependentBuyability("stochastic", k=100_000, seed=3)
        tiers = {"a": 2, "b": 3, "c": None}
        g2 = new_graph("p", tier_fn=lambda m: tiers.get(m))
        g2.expand(0, [(["a", "b"], 0.9), (["c"], 0.8)])
        g2.expand(g2.find_molecule("c"), [(["a"], 0.9)])
        matrix = ScenarioMatrix(g2, feas, buy)
        exact = exact_ssp_independent(g2, matrix.marginals)
        estimate = estimate_ssp(g2, matrix)
        p = exact
        assert abs(estimate - exact) <= 4 * np.sqrt(p * (1 - p) / 100_000)


class TestPlanLevelConsistency:
    def test_root_success_iff_some_plan_succeeds(self):
        rng = np.random.default_rng(5)
        for trial in range(25):
            g = new_graph("t")
            for _ in range(4):
                frontier = sorted(g.frontier())
                if not frontier:
                    break
                nid = frontier[int(rng.integers(len(frontier)))]
                props = []
                for j in range(int(rng.integers(0, 3))):
                    size = int(rng.integers(1, 3))
                    mols = [f"m{int(rng.integers(6))}" for _ in range(size)]
                    props.append((mols, float(rng.random())))
                props = [(r, s) for r, s in props if g.nodes[nid].molecule not in r]
                g.expand(nid, props)
            k = 16
            feas = IndependentFeasibility(lambda info: 0.5, k=k, seed=trial)
            buy = IndependentFeasibility(lambda info: 0.4, k=k, seed=trial + 1000)
            matrix = ScenarioMatrix(g, feas, buy)
            s = node_success(g, matrix)
            plans = enumerate_plans(g, g.root)
            for j in range(k):
                any_plan = any(
                    plan_success(g, plan, matrix.scenario(j)) for plan in plans
                )
                assert any_plan == bool(s[g.root, j])


class TestMonotonicity:
    def test_success_never_decreases_as_the_graph_grows(self):
        from retrofallback.reactions import CachedModel, SyntheticWorld, WorldConfig

        world = SyntheticWorld(WorldConfig(seed=21, max_children=3))
        target = world.random_targets(1, (5, 5))[0]
        g = new_graph(target, tier_fn=world.tier)
        feas = IndependentFeasibility(lambda info: 0.5, k=64, seed=0)
        buy = IndependentBuyability("binary", k=64, seed=0)
        matrix = ScenarioMatrix(g, feas, buy)
        cached = CachedModel(world)
        inc = IncrementalSuccess(g, matrix.words)
        inc.extend(matrix.packed)
        prev = None
        for _ in range(40):
            frontier = sorted(g.frontier())
            if not frontier:
                break
            g.expand(frontier[0], cached.propose(g.nodes[frontier[0]].molecule))
            matrix.extend()
            inc.extend(matrix.packed)
            from retrofallback.propagation import success_pass

            full = success_pass(GraphIndex(g), matrix.packed)
            assert np.array_equal(full, inc.s)  # incremental == from scratch
            root_bits = full[g.root]
            if prev is not None:
                assert np.bitwise_and(prev, root_bits).tolist() == prev.tolist()
            prev = root_bits.copy()


def _cnf_satisfiable(clauses, num_vars):
    """Independent oracle: exhaustive truth-table evaluation."""
    for bits in itertools.product((False, True), repeat=num_vars):
        ok = True
        for clause in clauses:
            if not any((bits[abs(l) - 1]) == (l > 0) for l in clause):
                ok = False
                break
        if ok:
            return True
    return False


class TestSatGadget:
    def test_trivially_satisfiable(self):
        gadget = sat_gadget([(1, 1, 1)])
        assert gadget.exact_ssp() > 0

    def test_contradiction_has_zero_ssp(self):
        gadget = sat_gadget([(1, 1, 1), (-1, -1, -1)])
        assert gadget.exact_ssp() == 0.0

    def test_all_eight_clauses_unsatisfiable_but_any_seven_not(self):
        clauses = [tuple(s * v for s, v in zip(signs, (1, 2, 3)))
                   for signs in itertools.product((1, -1), repeat=3)]
        assert sat_gadget(clauses).exact_ssp() == 0.0
        for skip in range(8):
            seven = [c for i, c in enumerate(clauses) if i != skip]
            assert sat_gadget(seven).exact_ssp() == pytest.approx(1 / 8)

    def test_sampled_matrix_supports_the_correlated_interface(self):
        gadget = sat_gadget([(1, -2, 3), (-1, 2, 3)])
        matrix = gadget.scenario_matrix(k=512, seed=3)
        ssp = estimate_ssp(gadget.graph, matrix)
        assert 0 < ssp <= 1

    def test_malformed_clause_rejected(self):
        with pytest.raises(InvalidInputError):
            sat_gadget([(1, 2)])
        with pytest.raises(InvalidInputError):
            sat_gadget([(1, 0, 2)])

    def test_gadget_ssp_agrees_with_the_truth_table_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(40):
            num_vars = int(rng.integers(1, 4))
            n_clauses = int(rng.integers(1, 5))
            clauses = [
                tuple(int(rng.integers(1, num_vars + 1)) * int(rng.choice([-1, 1]))
                      for _ in range(3))
                for _ in range(n_clauses)
            ]
            gadget = sat_gadget(clauses)
            assert (gadget.exact_ssp() > 0) == _cnf_satisfiable(clauses, num_vars)


class TestShortestPlanLength:
    def test_buyable_singleton_has_length_zero(self):
        g = new_graph("m")
        assert shortest_plan_length(g, np.array([1.0])) == 0

    def test_prefers_the_shorter_route(self):
        g = new_graph("p")
        g.expand(0, [(["a"], 0.9), (["b"], 0.8)])
        g.expand(g.find_molecule("a"), [(["c"], 0.9)])
        marginals = np.zeros(len(g))
        for rid in g.reaction_ids():
            marginals[rid] = 0.5
        marginals[g.find_molecule("b")] = 1.0
        marginals[g.find_molecule("c")] = 1.0
        assert shortest_plan_length(g, marginals) == 1  # buy b via one reaction

    def test_no_plan_returns_none(self):
        g = new_graph("p")
        assert shortest_plan_length(g, np.array([0.0])) is None
