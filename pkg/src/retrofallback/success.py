"""Success values, SSP estimation, small-instance oracles and the
satisfiability gadget.

A synthesis plan succeeds under one scenario when all its reactions are
feasible and all its frontier molecules are buyable.  A node succeeds when
some successful plan in the graph contains it, the least-fixpoint solution
of the molecule/reaction recursions.  Averaging root success over sampled
scenarios estimates the probability that at least one plan in the graph
succeeds (SSP); computing that probability exactly for correlated models is
NP-hard, which the clause gadget below makes concrete.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, InvalidInputError
from .graph import MOLECULE, REACTION, AndOrGraph, SynthesisPlan, new_graph
from .propagation import GraphIndex, success_pass
from .uncertainty import (
    AssignmentBuyability,
    IndependentFeasibility,
    ScenarioMatrix,
    pack_bits,
    unpack_bits,
)


def plan_success(graph: AndOrGraph, plan: SynthesisPlan,
                 scenario: np.ndarray) -> int:
    """1 iff all plan reactions are feasible and all frontier molecules buyable.

    ``scenario`` is a per-node outcome vector (one scenario column).
    """
    for rid in plan.reactions():
        if not scenario[rid]:
            return 0
    for mid in plan.frontier(graph):
        if not scenario[mid]:
            return 0
    return 1


def plan_success_all(graph: AndOrGraph, plan: SynthesisPlan,
                     matrix: ScenarioMatrix) -> np.ndarray:
    """Per-scenario plan success as a (k,) uint8 vector."""
    rows = plan.reactions() + plan.frontier(graph)
    packed = np.bitwise_and.reduce(matrix.packed[rows], axis=0)
    return unpack_bits(packed, matrix.k)


def node_success_packed(graph: AndOrGraph, matrix: ScenarioMatrix,
                        idx: Optional[GraphIndex] = None) -> np.ndarray:
    if idx is None:
        idx = GraphIndex(graph)
    return success_pass(idx, matrix.packed)


def node_success(graph: AndOrGraph, matrix: ScenarioMatrix,
                 idx: Optional[GraphIndex] = None) -> np.ndarray:
    """(n, k) success indicator for every node under every scenario."""
    return unpack_bits(node_success_packed(graph, matrix, idx), matrix.k)


def estimate_ssp(graph: AndOrGraph, matrix: ScenarioMatrix,
                 idx: Optional[GraphIndex] = None) -> float:
    """Fraction of scenarios in which the root succeeds."""
    s = node_success_packed(graph, matrix, idx)
    return int(np.bitwise_count(s[graph.root]).sum()) / matrix.k


def exact_ssp_independent(graph: AndOrGraph, marginals: np.ndarray,
                          cap: int = 20) -> float:
    """Exact SSP when every outcome is independent with the given marginals.

    Enumerates all joint assignments of the genuinely random outcomes
    (marginal strictly between 0 and 1) and sums the probability of those in
    which the root succeeds.  Refuses instances where the number of
    reactions plus non-trivial molecules exceeds ``cap``.
    """
    marginals = np.asarray(marginals, dtype=float)
    if marginals.shape != (len(graph),):
        raise InvalidInputError("need one marginal per node")
    kind = np.array([node.kind for node in graph.nodes], dtype=np.int8)
    nontrivial = (marginals > 0.0) & (marginals < 1.0)
    size = int((kind == REACTION).sum() + (nontrivial & (kind == MOLECULE)).sum())
    if size > cap:
        raise CapacityError(
            f"instance size {size} exceeds the exact-enumeration cap {cap}"
        )
    variables = np.flatnonzero(nontrivial)
    v = len(variables)
    n_cols = 1 << v
    outcomes = np.zeros((len(graph), n_cols), dtype=np.uint8)
    outcomes[marginals >= 1.0] = 1
    weights = np.ones(n_cols)
    cols = np.arange(n_cols)
    for pos, nid in enumerate(variables):
        bit = ((cols >> pos) & 1).astype(np.uint8)
        outcomes[nid] = bit
        p = marginals[nid]
        weights *= np.where(bit, p, 1.0 - p)
    idx = GraphIndex(graph)
    s = success_pass(idx, pack_bits(outcomes))
    root_bits = unpack_bits(s[graph.root : graph.root + 1], n_cols)[0]
    return float(weights[root_bits == 1].sum())


# ---------------------------------------------------------------------------
# marginal-based plan analysis


def best_plan_marginal(graph: AndOrGraph,
                       marginals: np.ndarray) -> Optional[SynthesisPlan]:
    """Highest-probability single plan assuming independent marginals.

    Solves the expected-success recursion on one pseudo-scenario of
    marginals (no heuristic optimism, so only completed plans count), then
    extracts a plan achieving the root value greedily, backtracking around
    cycles.  Returns None when every plan has zero probability.
    """
    from .propagation import psi_pass  # local import avoids cycles at import time

    idx = GraphIndex(graph)
    psi = psi_pass(idx, np.asarray(marginals, float)[:, None], np.zeros(len(graph)))[:, 0]
    if psi[graph.root] <= 0.0:
        return None
    eps = 1e-12
    choice: dict[int, int] = {}

    def build(mid: int, path: frozenset[int]) -> bool:
        value = psi[mid]
        buy = marginals[mid]
        if buy >= value - eps:  # buying is optimal (prefer the shorter plan)
            return True
        order = sorted(graph.nodes[mid].children, key=lambda r: (-psi[r], r))
        for rid in order:
            if psi[rid] < value - eps:
                break
            reactants = graph.nodes[rid].reactants
            if any(c in path for c in reactants):
                continue
            saved = dict(choice)
            choice[mid] = rid
            if all(build(c, path | {mid}) for c in reactants):
                return True
            choice.clear()
            choice.update(saved)
        return buy > 0.0  # settle for buying at a worse value than hoped

    if not build(graph.root, frozenset()):
        return None
    plan_choice = _reachable_choice(graph, graph.root, choice)
    nodes = set(plan_choice) | set(plan_choice.values()) | {graph.root}
    for rid in plan_choice.values():
        nodes.update(graph.nodes[rid].reactants)
    plan = SynthesisPlan(root=graph.root, nodes=frozenset(nodes),
                         choice=tuple(sorted(plan_choice.items())))
    from .graph import _choice_is_acyclic

    if not _choice_is_acyclic(graph, plan_choice):
        # value ties around a cycle merged into an unusable choice map;
        # fall back to the singleton plan when the root itself is buyable
        if marginals[graph.root] > 0:
            return SynthesisPlan(root=graph.root,
                                 nodes=frozenset({graph.root}), choice=())
        return None
    return plan


def _reachable_choice(graph: AndOrGraph, root: int,
                      choice: dict[int, int]) -> dict[int, int]:
    out: dict[int, int] = {}
    stack = [root]
    seen = set()
    while stack:
        mid = stack.pop()
        if mid in seen:
            continue
        seen.add(mid)
        rid = choice.get(mid)
        if rid is not None:
            out[mid] = rid
            stack.extend(graph.nodes[rid].reactants)
    return out


def shortest_plan_length(graph: AndOrGraph, marginals: np.ndarray,
                         max_sweeps: Optional[int] = None) -> Optional[int]:
    """Fewest reactions over plans whose every step has positive marginal.

    Molecules with positive marginal buyability close for free; reactions
    with zero marginal feasibility are unusable.  Returns None when no such
    plan exists.
    """
    n = len(graph)
    marginals = np.asarray(marginals, float)
    cost = np.full(n, np.inf)
    limit = max_sweeps if max_sweeps is not None else 10 * n + 10
    for _ in range(limit):
        changed = False
        for node in reversed(graph.nodes):
            if node.kind == MOLECULE:
                best = 0.0 if marginals[node.id] > 0 else np.inf
                for rid in node.children:
                    if cost[rid] < best:
                        best = cost[rid]
            else:
                best = 1.0 if marginals[node.id] > 0 else np.inf
                for cid in node.reactants:
                    best += cost[cid]
            if best < cost[node.id]:
                cost[node.id] = best
                changed = True
        if not changed:
            break
    value = cost[graph.root]
    return None if not np.isfinite(value) else int(value)


# ---------------------------------------------------------------------------
# satisfiability gadget


@dataclass
class SatGadget:
    """AND/OR encoding of a 3-CNF formula.

    All reactions are feasible; buyability draws one truth assignment per
    scenario, making exactly one of each literal pair buyable.  The root has
    positive SSP exactly when the formula is satisfiable.
    """

    graph: AndOrGraph
    num_vars: int
    clauses: tuple[tuple[int, int, int], ...]

    def buyability(self, k: int, seed: int = 0) -> AssignmentBuyability:
        return AssignmentBuyability(self.num_vars, k, seed)

    def feasibility(self, k: int, seed: int = 0) -> IndependentFeasibility:
        return IndependentFeasibility(lambda info: 1.0, k=k, seed=seed)

    def scenario_matrix(self, k: int, seed: int = 0) -> ScenarioMatrix:
        return ScenarioMatrix(self.graph, self.feasibility(k, seed),
                              self.buyability(k, seed))

    def exact_ssp(self) -> float:
        """SSP under the uniform assignment distribution, by full enumeration."""
        k = 2 ** self.num_vars
        buy = AssignmentBuyability.enumerate(self.num_vars)
        matrix = ScenarioMatrix(self.graph, self.feasibility(k), buy)
        return estimate_ssp(self.graph, matrix)


def _literal_molecule(lit: int) -> str:
    return f"x{lit}" if lit > 0 else f"!x{-lit}"


def sat_gadget(cnf: Sequence[Sequence[int]]) -> SatGadget:
    """Build the reduction graph for a list of 3-literal clauses.

    Literals use signed 1-based variable indices.  The root molecule needs a
    single reaction consuming one molecule per clause; each clause molecule
    is produced from any one of its literal molecules by a dummy
    single-reactant reaction; literal molecules are leaves whose buyability
    encodes the truth assignment.
    """
    if not cnf:
        raise InvalidInputError("the formula needs at least one clause")
    clauses: list[tuple[int, int, int]] = []
    num_vars = 0
    for clause in cnf:
        lits = tuple(int(l) for l in clause)
        if len(lits) != 3:
            raise InvalidInputError(f"clause {clause!r} must have exactly 3 literals")
        if any(l == 0 for l in lits):
            raise InvalidInputError("literals are signed 1-based indices; 0 is invalid")
        num_vars = max(num_vars, max(abs(l) for l in lits))
        clauses.append(lits)

    graph = new_graph("sat", mode="graph")
    clause_names = [f"c{j + 1}" for j in range(len(clauses))]
    graph.expand(graph.root, [(clause_names, 1.0)])
    for name, lits in zip(clause_names, clauses):
        cid = graph.find_molecule(name)
        graph.expand(cid, [([_literal_molecule(l)], 1.0) for l in lits])
    for i in range(1, num_vars + 1):
        for mol in (f"x{i}", f"!x{i}"):
            try:
                mid = graph.find_molecule(mol)
            except KeyError:
                continue
            if graph.is_frontier(mid):
                graph.expand(mid, [])  # literals are terminal leaves
    return SatGadget(graph=graph, num_vars=num_vars, clauses=tuple(clauses))
