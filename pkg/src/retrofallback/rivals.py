"""Baseline search algorithms configured to maximize the success estimate.

Breadth-first search expands frontier nodes in insertion order.  The
best-first baseline scores nodes with the negative-log dual of the expected
success recursions evaluated on a single pseudo-scenario holding marginal
feasibilities and buyabilities, which makes it share propagation code with
the planner while reproducing classic additive-cost behaviour.  The OR-tree
Monte Carlo search treats states as molecule sets and rewards terminal
states with the empirical success of the path plan over sampled scenarios.

All searches run on tree-structured graphs, count unique backward-model
calls against the budget (repeat queries hit a cache), and are deterministic
given their seeds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .graph import MOLECULE, AndOrGraph, SynthesisPlan, new_graph
from .heuristics import Heuristic, mcts_partial_value, to_cost
from .planner import IterationRecord, SearchResult
from .reactions import CachedModel
from .uncertainty import MoleculeInfo, ReactionInfo

#: Hard ceiling on tree expansions per run; cache-hit expansions are free
#: against the call budget, so cyclic worlds need a structural stop.
EXPANSION_CAP_FACTOR = 50


def _tree_search(target, model, budget, tier_fn, select, depth_cap=25,
                 after_expand=None) -> SearchResult:
    """Shared skeleton of the tree-mode searches (selection rule differs)."""
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    cached = model if isinstance(model, CachedModel) else CachedModel(model)
    graph = new_graph(target, mode="tree", tier_fn=tier_fn)
    trace: list[IterationRecord] = []
    expansion_log: list[tuple[str, list]] = []
    logged: set[str] = set()
    frontier: list[int] = [graph.root]  # insertion-ordered, depth-capped
    next_bind = 1
    start_calls = cached.call_count
    expansion_cap = EXPANSION_CAP_FACTOR * budget
    termination = "budget"
    expansions = 0
    iteration = 0
    while True:
        t0 = time.perf_counter()
        if not frontier:
            termination = "empty-frontier"
            break
        chosen, score = select(graph, frontier)
        molecule = graph.nodes[chosen].molecule
        if not cached.is_cached(molecule):
            if cached.call_count - start_calls >= budget:
                termination = "budget"
                break
        if expansions >= expansion_cap:
            termination = "budget"  # structural cap, counted as resource exhaustion
            break
        proposals = cached.propose(molecule)
        graph.expand(chosen, proposals)
        frontier.remove(chosen)
        for nid in range(next_bind, len(graph)):
            node = graph.nodes[nid]
            if node.kind == MOLECULE and node.depth < depth_cap:
                frontier.append(nid)
        next_bind = len(graph)
        if after_expand is not None:
            after_expand(graph, chosen)
        expansions += 1
        if molecule not in logged:
            logged.add(molecule)
            expansion_log.append((molecule, proposals))
            iteration += 1
            trace.append(IterationRecord(iteration, molecule, score, None,
                                         len(graph), (time.perf_counter() - t0) * 1e3))
    return SearchResult(graph=graph, trace=trace, termination=termination,
                        calls_used=cached.call_count - start_calls,
                        expansion_log=expansion_log)


def run_bfs(target: str, model, budget: int, tier_fn=None,
            depth_cap: int = 25) -> SearchResult:
    """Uninformed baseline: expand frontier nodes in the order they appeared."""

    def select(graph, frontier):
        return frontier[0], None

    return _tree_search(target, model, budget, tier_fn, select, depth_cap)


class _BestFirstValues:
    """Incremental plan-cost values for best-first search on a tree.

    Tracks, in probability space, psi = the value of the best potential
    plan below each node and ov = the same restricted to plans that still
    contain a frontier molecule.  Both depend only on descendants, so
    expanding a leaf updates exactly the path back to the root.  The
    frontier node of minimum root-through cost is found by descending ov
    maximizers from the root; -ln ov(root) is that minimum cost.
    """

    def __init__(self, graph: AndOrGraph, feasibility, buyability,
                 heuristic: Heuristic):
        self.graph = graph
        self.feas = feasibility
        self.buy = buyability
        self.heuristic = heuristic
        self.psi: list[float] = []
        self.ov: list[float] = []
        self.margin: list[float] = []
        self._h_cache: dict[str, float] = {}
        self.bind_new_nodes()

    def _h(self, molecule: str) -> float:
        if molecule not in self._h_cache:
            self._h_cache[molecule] = self.heuristic.evaluate(molecule)
        return self._h_cache[molecule]

    def bind_new_nodes(self) -> None:
        graph = self.graph
        for nid in range(len(self.psi), len(graph)):
            node = graph.nodes[nid]
            marginal = (self.buy.marginal(_info_for(graph, nid))
                        if node.kind == MOLECULE
                        else self.feas.marginal(_info_for(graph, nid)))
            self.margin.append(marginal)
            if node.kind == MOLECULE:
                value = max(marginal, self._h(node.molecule))
                self.psi.append(value)
                self.ov.append(value)  # new molecules are frontier leaves
            else:
                self.psi.append(0.0)
                self.ov.append(0.0)

    def _recompute(self, nid: int) -> None:
        graph = self.graph
        node = graph.nodes[nid]
        if node.kind == MOLECULE:
            if node.expanded:
                best = self.margin[nid]
                open_best = 0.0
                for rid in node.children:
                    best = max(best, self.psi[rid])
                    open_best = max(open_best, self.ov[rid])
            else:
                best = max(self.margin[nid], self._h(node.molecule))
                open_best = best
            self.psi[nid], self.ov[nid] = best, open_best
        else:
            prod = self.margin[nid]
            for cid in node.reactants:
                prod *= self.psi[cid]
            open_best = 0.0
            for j in node.reactants:  # one reactant stays open, the rest close
                term = self.margin[nid] * self.ov[j]
                for i in node.reactants:
                    if i != j:
                        term *= self.psi[i]
                open_best = max(open_best, term)
            self.psi[nid], self.ov[nid] = prod, open_best

    def after_expansion(self, mol_id: int) -> None:
        self.bind_new_nodes()
        for rid in self.graph.nodes[mol_id].children:
            self._recompute(rid)
        nid = mol_id
        while True:
            old = (self.psi[nid], self.ov[nid])
            self._recompute(nid)
            if (self.psi[nid], self.ov[nid]) == old:
                break
            parents = self.graph.nodes[nid].parents
            if not parents:
                break
            rid = parents[0]
            self._recompute(rid)
            nid = self.graph.nodes[rid].product

    def select(self, frontier: Sequence[int]) -> tuple[int, Optional[float]]:
        graph = self.graph
        allowed = set(frontier)
        nid = graph.root
        guard = 0
        while True:
            guard += 1
            if guard > len(graph) + 1:
                break  # stale values; fall back to insertion order below
            node = graph.nodes[nid]
            if node.kind == MOLECULE and nid in allowed:
                return nid, to_cost(min(1.0, self.ov[graph.root]))
            if node.kind == MOLECULE:
                candidates = [r for r in node.children if self.ov[r] > 0.0]
                if not candidates:
                    break
                nid = max(candidates, key=lambda r: (self.ov[r], -r))
            else:
                best_j, best_term = None, 0.0
                for j in node.reactants:
                    term = self.ov[j]
                    for i in node.reactants:
                        if i != j:
                            term *= self.psi[i]
                    if term > best_term:
                        best_j, best_term = j, term
                if best_j is None:
                    break
                nid = best_j
        return frontier[0], None  # no open plan has positive value


def run_retro_star(target: str, model, feasibility, buyability,
                   heuristic: Heuristic, budget: int, tier_fn=None,
                   depth_cap: int = 25) -> SearchResult:
    """Best-first baseline: expand the frontier node of minimum plan cost.

    Reaction cost is -ln of marginal feasibility, molecule cost -ln of
    marginal buyability, frontier cost -ln of the heuristic value; the
    expanded node is a frontier molecule of a minimum-cost potential plan
    for the target, i.e. one minimizing the root-through cost.  Ties break
    toward earlier insertion.
    """
    values: dict[str, _BestFirstValues] = {}

    def select(graph, frontier):
        if "v" not in values:
            values["v"] = _BestFirstValues(graph, feasibility, buyability, heuristic)
        return values["v"].select(frontier)

    def after_expand(graph, mol_id):
        values["v"].after_expansion(mol_id)

    return _tree_search(target, model, budget, tier_fn, select, depth_cap,
                        after_expand=after_expand)


def _info_for(graph: AndOrGraph, nid: int):
    node = graph.nodes[nid]
    if node.kind == MOLECULE:
        return MoleculeInfo(node.molecule, node.purchase_tier)
    return ReactionInfo(
        product=graph.nodes[node.product].molecule,
        reactants=tuple(graph.nodes[c].molecule for c in node.reactants),
        rank=node.rank, score=node.score,
    )


def plan_cost(graph: AndOrGraph, plan: SynthesisPlan, feasibility, buyability,
              cost_heuristic: Optional[Callable[[str], float]] = None) -> float:
    """Additive plan cost: -ln marginals, with heuristically closable leaves.

    Reactions cost -ln of their marginal feasibility.  Molecules produced
    inside the plan cost nothing; its leaves cost the cheaper of buying
    (-ln marginal buyability) and, when the molecule is still expandable in
    the graph, the heuristic closing cost.  Leaves already expanded to a
    dead end can only be bought.
    """
    total = 0.0
    for rid in plan.reactions():
        total += to_cost(feasibility.marginal(_info_for(graph, rid)))
    for mid in plan.frontier(graph):
        buy = to_cost(buyability.marginal(_info_for(graph, mid)))
        if cost_heuristic is not None and graph.is_frontier(mid):
            buy = min(buy, cost_heuristic(graph.nodes[mid].molecule))
        total += buy
    return total


# ---------------------------------------------------------------------------
# OR-tree Monte Carlo search


@dataclass
class MctsConfig:
    exploration: float = 0.01
    expand_visits: int = 10  # visits before a leaf may expand
    reward_visit_cap: int = 100  # terminal rewards are zeroed afterwards
    depth_cap: int = 10
    iteration_cap_factor: int = 400


@dataclass
class OrTreeNode:
    """A set of open molecules reached by applying reactions along a path."""

    state: tuple[str, ...]
    depth: int
    parent_edge: Optional["OrTreeEdge"] = None
    edges: list["OrTreeEdge"] = field(default_factory=list)
    visits: int = 0
    terminal: bool = False
    expanded: bool = False
    # per-node empirical values are static once sampled; cache them
    value_heuristic: Optional[float] = None
    value_terminal: Optional[float] = None

    def path_reactions(self) -> list[ReactionInfo]:
        out = []
        node = self
        while node.parent_edge is not None:
            out.append(node.parent_edge.reaction)
            node = node.parent_edge.source
        return out[::-1]


@dataclass
class OrTreeEdge:
    source: OrTreeNode
    child: OrTreeNode
    reaction: ReactionInfo
    prior: float
    visits: int = 0
    total_reward: float = 0.0


def uct_score(edge: OrTreeEdge, parent_visits: int, exploration: float) -> float:
    """Mean reward plus prior-weighted exploration bonus (finite at N=0)."""
    mean = edge.total_reward / edge.visits if edge.visits else 0.0
    return mean + exploration * edge.prior * math.sqrt(parent_visits) / (1 + edge.visits)


class _MctsRun:
    def __init__(self, target, model, feasibility, buyability, heuristic,
                 budget, tier_fn, config):
        self.cached = model if isinstance(model, CachedModel) else CachedModel(model)
        self.feas = feasibility
        self.buy = buyability
        self.heuristic = heuristic
        self.budget = budget
        self.tier_fn = tier_fn
        self.cfg = config
        self.k = feasibility.k
        self.root = OrTreeNode(state=(target,), depth=0)
        self._bind_molecules([target])
        self._mark_if_terminal(self.root)
        self.expansion_log: list[tuple[str, list]] = []
        self.trace: list[IterationRecord] = []
        self.start_calls = self.cached.call_count
        self.open_leaves = 0 if self.root.terminal else 1
        self.tree_nodes = 1

    # -- scenario plumbing -------------------------------------------------

    def _bind_molecules(self, molecules: Sequence[str]) -> None:
        infos = [MoleculeInfo(m, self.tier_fn(m) if self.tier_fn else None)
                 for m in molecules]
        self.buy.extend(infos)

    def _buy_rows(self, molecules: Sequence[str]) -> np.ndarray:
        table = self.buy.table
        if not molecules:
            return np.zeros((0, self.k), dtype=np.uint8)
        return table.outcomes[[table.row(m) for m in molecules]]

    def _feas_rows(self, reactions: Sequence[ReactionInfo]) -> np.ndarray:
        table = self.feas.table
        if not reactions:
            return np.zeros((0, self.k), dtype=np.uint8)
        return table.outcomes[[table.row(r.signature) for r in reactions]]

    def _buy_marginal(self, molecule: str) -> float:
        tier = self.tier_fn(molecule) if self.tier_fn else None
        return self.buy.marginal(MoleculeInfo(molecule, tier))

    # -- state classification ----------------------------------------------

    def _open_molecules(self, node: OrTreeNode) -> list[str]:
        return [m for m in node.state if self._buy_marginal(m) <= 0.0]

    def _mark_if_terminal(self, node: OrTreeNode) -> None:
        if not self._open_molecules(node) or node.depth >= self.cfg.depth_cap:
            node.terminal = True

    # -- rewards -------------------------------------------------------------

    def _value(self, node: OrTreeNode, h_for_open: bool) -> float:
        """Empirical path-plan success; open molecules close at h if allowed."""
        cached = node.value_heuristic if h_for_open else node.value_terminal
        if cached is not None:
            return cached
        f_rows = self._feas_rows(node.path_reactions())
        b_rows = self._buy_rows(node.state)
        if h_for_open:
            h = np.array([self.heuristic.evaluate(m) for m in node.state])
        else:
            h = np.zeros(len(node.state))
        value = mcts_partial_value(f_rows, b_rows, h)
        if h_for_open:
            node.value_heuristic = value
        else:
            node.value_terminal = value
        return value

    # -- search --------------------------------------------------------------

    def run(self) -> SearchResult:
        termination = "budget"
        iteration_cap = self.cfg.iteration_cap_factor * self.budget
        for _ in range(iteration_cap):
            if self.cached.call_count - self.start_calls >= self.budget:
                termination = "budget"
                break
            if self.open_leaves == 0:
                termination = "empty-frontier"
                break
            if not self._simulate():
                termination = "budget"
                break
        else:
            termination = "budget"
        return SearchResult(
            graph=self.to_andor_graph(), trace=self.trace, termination=termination,
            calls_used=self.cached.call_count - self.start_calls,
            expansion_log=self.expansion_log,
        )

    def _simulate(self) -> bool:
        node = self.root
        while node.expanded and node.edges:
            parent_visits = max(node.visits, 1)
            # max() keeps the first maximum: ties break on proposal order
            node = max(
                node.edges,
                key=lambda e: uct_score(e, parent_visits, self.cfg.exploration),
            ).child
        if node.terminal:
            reward = 0.0
            if node.visits < self.cfg.reward_visit_cap:
                reward = self._value(node, h_for_open=False)
        elif node.visits >= self.cfg.expand_visits or node is self.root:
            if not self._expand(node):
                return self.cached.call_count - self.start_calls < self.budget
            reward = self._value(node, h_for_open=True)
        else:
            reward = self._value(node, h_for_open=True)
        self._backpropagate(node, reward)
        return True

    def _expand(self, node: OrTreeNode) -> bool:
        open_mols = self._open_molecules(node)
        molecule = open_mols[0]
        if (not self.cached.is_cached(molecule)
                and self.cached.call_count - self.start_calls >= self.budget):
            return False
        t0 = time.perf_counter()
        fresh = not self.cached.is_cached(molecule)
        proposals = self.cached.propose(molecule)
        if fresh:
            self.expansion_log.append((molecule, proposals))
            self.trace.append(IterationRecord(
                len(self.trace) + 1, molecule, None, None, self.tree_nodes,
                (time.perf_counter() - t0) * 1e3))
        node.expanded = True
        self.open_leaves -= 1
        rest = list(node.state)
        rest.remove(molecule)
        for rank, (reactants, score) in enumerate(proposals, start=1):
            info = ReactionInfo(product=molecule, reactants=tuple(reactants),
                                rank=rank, score=score)
            self.feas.extend([info])
            self._bind_molecules(reactants)
            state = tuple(sorted(set(rest) | set(reactants)))
            child = OrTreeNode(state=state, depth=node.depth + 1)
            edge = OrTreeEdge(source=node, child=child, reaction=info,
                              prior=self.feas.marginal(info))
            child.parent_edge = edge
            node.edges.append(edge)
            self.tree_nodes += 1
            self._mark_if_terminal(child)
            if not child.terminal:
                self.open_leaves += 1
        if not proposals:
            node.terminal = True  # dead end: no way to close this state
        return True

    def _backpropagate(self, node: OrTreeNode, reward: float) -> None:
        node.visits += 1
        edge = node.parent_edge
        while edge is not None:
            edge.visits += 1
            edge.total_reward += reward
            edge.source.visits += 1
            edge = edge.source.parent_edge

    def to_andor_graph(self) -> AndOrGraph:
        """Convert the OR tree to an AND/OR graph over its expansion log."""
        return replay_expansions(self.root.state[0], self.expansion_log,
                                 tier_fn=self.tier_fn)


def run_mcts(target: str, model, feasibility, buyability, heuristic: Heuristic,
             budget: int, tier_fn=None,
             config: Optional[MctsConfig] = None) -> SearchResult:
    """OR-tree Monte Carlo search with prior-guided UCT selection."""
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    run = _MctsRun(target, model, feasibility, buyability, heuristic, budget,
                   tier_fn, config or MctsConfig())
    return run.run()


def replay_expansions(target: str, expansion_log: Sequence[tuple[str, list]],
                      tier_fn=None) -> AndOrGraph:
    """Rebuild a graph-mode AND/OR graph from an expansion log.

    Used both to convert tree searches for analysis and to replay recorded
    runs; unexpanded or unreachable entries are ignored.
    """
    graph = new_graph(target, mode="graph", tier_fn=tier_fn)
    for molecule, proposals in expansion_log:
        try:
            nid = graph.find_molecule(molecule)
        except KeyError:
            continue
        if graph.is_frontier(nid):
            graph.expand(nid, proposals)
    return graph
