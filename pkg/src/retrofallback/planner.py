"""Greedy fallback-aware search.

Each iteration recomputes, for every sampled scenario, the success of every
node, the best expected success achievable through it after expansion, and
that value restricted to plans that produce the target.  A frontier molecule
maximizing the expected improvement of the success estimate, averaged over
currently failing scenarios, is expanded next.  The loop stops early when
nothing remains to expand or every scenario already succeeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .graph import AndOrGraph, SynthesisPlan, new_graph
from .heuristics import Heuristic
from .propagation import (
    DEFAULT_TOL,
    GraphIndex,
    psi_pass,
    rho_pass,
    success_pass,
)
from .reactions import CachedModel
from .uncertainty import ScenarioMatrix, unpack_bits


def _h_eff(graph: AndOrGraph, idx: GraphIndex, h_node: np.ndarray) -> np.ndarray:
    out = np.zeros(idx.n)
    out[idx.frontier] = h_node[idx.frontier]
    return out


def heuristic_values(graph: AndOrGraph, heuristic: Heuristic,
                     cache: Optional[dict[str, float]] = None) -> np.ndarray:
    """Per-node heuristic values (molecule rows; reactions get 0)."""
    values = np.zeros(len(graph))
    for node in graph.nodes:
        if node.kind != 0:
            continue
        if cache is not None and node.molecule in cache:
            values[node.id] = cache[node.molecule]
        else:
            v = heuristic.evaluate(node.molecule)
            if cache is not None:
                cache[node.molecule] = v
            values[node.id] = v
    return values


def compute_psi(graph: AndOrGraph, matrix: ScenarioMatrix, heuristic: Heuristic,
                idx: Optional[GraphIndex] = None,
                tol: float = DEFAULT_TOL) -> np.ndarray:
    """Best expected success value of every node per scenario."""
    if idx is None:
        idx = GraphIndex(graph)
    h_node = heuristic_values(graph, heuristic)
    return psi_pass(idx, matrix.outcomes, _h_eff(graph, idx, h_node), tol=tol)


def compute_rho(graph: AndOrGraph, psi: np.ndarray,
                idx: Optional[GraphIndex] = None,
                tol: float = DEFAULT_TOL) -> np.ndarray:
    """Best expected success restricted to plans producing the root."""
    if idx is None:
        idx = GraphIndex(graph)
    return rho_pass(idx, psi, tol=tol)


def sigma_bar_oracle(graph: AndOrGraph, plan: SynthesisPlan,
                     scenario: np.ndarray, h_node: np.ndarray) -> float:
    """Expected success of one plan if its frontier were expanded.

    Closed form under per-molecule independence: the product of feasibility
    over the plan's reactions times, for each frontier molecule of the plan,
    the larger of its buyability and (if it is still expandable in the
    graph) its heuristic value.  Brute-force maximization of this quantity
    over enumerated plans is the oracle the recursive values must match.
    """
    value = 1.0
    for rid in plan.reactions():
        value *= float(scenario[rid])
    for mid in plan.frontier(graph):
        e_term = h_node[mid] if graph.is_frontier(mid) else 0.0
        value *= max(float(scenario[mid]), e_term)
    return value


def alpha_values(frontier_ids: np.ndarray, rho: np.ndarray,
                 fail_mask: np.ndarray, mode: str = "mean",
                 quantile: float = 0.5) -> np.ndarray:
    """Expected improvement of the success estimate per frontier molecule.

    Averages the root-through value over scenarios where the target
    currently fails (mode/quantile aggregation available as variants).
    """
    contributions = rho[frontier_ids] * fail_mask[None, :]
    if mode == "mean":
        return contributions.mean(axis=1)
    if mode == "quantile":
        return np.quantile(contributions, quantile, axis=1)
    if mode == "mode":
        # mode of the discrete contribution values per row
        out = np.empty(len(frontier_ids))
        for i, row in enumerate(contributions):
            values, counts = np.unique(row, return_counts=True)
            out[i] = values[np.argmax(counts)]
        return out
    raise InvalidInputError(f"unknown alpha aggregation {mode!r}")


def select_next(frontier_ids: np.ndarray, alpha: np.ndarray,
                buy_marginals: np.ndarray) -> int:
    """Argmax of alpha; ties prefer lower marginal buyability, then lower id."""
    best = alpha.max()
    tied = frontier_ids[alpha == best]
    if len(tied) == 1:
        return int(tied[0])
    key = np.lexsort((tied, buy_marginals[tied]))
    return int(tied[key[0]])


@dataclass
class IterationRecord:
    iteration: int
    selected: Optional[str]
    alpha: Optional[float]
    ssp: Optional[float]
    nodes: int
    elapsed_ms: float

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "selected": self.selected,
            "alpha": self.alpha,
            "ssp": self.ssp,
            "nodes": self.nodes,
            "elapsed_ms": round(self.elapsed_ms, 3),
        }


@dataclass
class SearchResult:
    graph: AndOrGraph
    trace: list[IterationRecord]
    termination: str  # budget | empty-frontier | all-solved | error
    calls_used: int
    expansion_log: list[tuple[str, list]] = field(default_factory=list)
    matrix: Optional[ScenarioMatrix] = None
    error: Optional[str] = None
    final_ssp: Optional[float] = None  # search-matrix estimate on the final graph

    def trace_json(self) -> list[dict]:
        return [rec.to_json() for rec in self.trace]


def run_retro_fallback(
    target: str,
    model,
    feasibility,
    buyability,
    heuristic: Heuristic,
    budget: int,
    tier_fn=None,
    tol: float = DEFAULT_TOL,
    alpha_mode: str = "mean",
    alpha_quantile: float = 0.5,
) -> SearchResult:
    """Run the greedy fallback-aware loop for up to ``budget`` expansions.

    The scenario matrix is extended with posterior samples every time new
    nodes enter the graph.  The per-iteration success estimate comes from
    the search matrix itself and is non-decreasing along the run.
    """
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    cached = model if isinstance(model, CachedModel) else CachedModel(model)
    graph = new_graph(target, mode="graph", tier_fn=tier_fn)
    matrix = ScenarioMatrix(graph, feasibility, buyability)
    k = matrix.k
    trace: list[IterationRecord] = []
    expansion_log: list[tuple[str, list]] = []
    h_cache: dict[str, float] = {}
    start_calls = cached.call_count
    termination = "budget"
    error: Optional[str] = None

    iteration = 0
    while cached.call_count - start_calls < budget:
        iteration += 1
        t0 = time.perf_counter()
        idx = GraphIndex(graph)
        h_node = heuristic_values(graph, heuristic, cache=h_cache)
        s_bits = success_pass(idx, matrix.packed)
        root_success = unpack_bits(s_bits[graph.root : graph.root + 1], k)[0]
        ssp = float(root_success.mean())

        frontier_ids = np.flatnonzero(idx.frontier)
        if len(frontier_ids) == 0:
            trace.append(IterationRecord(iteration, None, None, ssp, len(graph),
                                         (time.perf_counter() - t0) * 1e3))
            termination = "empty-frontier"
            break
        if root_success.all():
            trace.append(IterationRecord(iteration, None, None, ssp, len(graph),
                                         (time.perf_counter() - t0) * 1e3))
            termination = "all-solved"
            break

        psi = psi_pass(idx, matrix.outcomes, _h_eff(graph, idx, h_node), tol=tol)
        rho = rho_pass(idx, psi, tol=tol)
        fail_mask = 1.0 - root_success.astype(float)
        alpha = alpha_values(frontier_ids, rho, fail_mask,
                             mode=alpha_mode, quantile=alpha_quantile)
        chosen = select_next(frontier_ids, alpha, matrix.marginals)
        molecule = graph.nodes[chosen].molecule
        try:
            proposals = cached.propose(molecule)
        except Exception as exc:  # noqa: BLE001 - abort with a partial trace
            termination = "error"
            error = f"{type(exc).__name__}: {exc}"
            trace.append(IterationRecord(iteration, molecule, None, ssp, len(graph),
                                         (time.perf_counter() - t0) * 1e3))
            break
        graph.expand(chosen, proposals)
        expansion_log.append((molecule, proposals))
        matrix.extend()
        chosen_alpha = float(alpha[frontier_ids == chosen][0])
        trace.append(IterationRecord(iteration, molecule, chosen_alpha, ssp,
                                     len(graph), (time.perf_counter() - t0) * 1e3))

    final_ssp = estimate_ssp_quick(graph, matrix)
    return SearchResult(graph=graph, trace=trace, termination=termination,
                        calls_used=cached.call_count - start_calls,
                        expansion_log=expansion_log, matrix=matrix, error=error,
                        final_ssp=final_ssp)


def estimate_ssp_quick(graph: AndOrGraph, matrix: ScenarioMatrix) -> float:
    idx = GraphIndex(graph)
    s_bits = success_pass(idx, matrix.packed)
    return int(np.bitwise_count(s_bits[graph.root]).sum()) / matrix.k
