"""Least-fixpoint propagation of per-scenario node values.

Success, expected-success and root-through values are all defined by
monotone recursions over the AND/OR graph (max/OR at molecules, product/AND
at reactions, and a top-down mirror for root-through values).  On acyclic
graphs one dependency-ordered traversal solves them exactly; strongly
connected components introduced by reaction cycles are iterated locally from
zero, which converges to the least fixpoint because every update is
monotone.  A feasible cycle with no buyable entry point therefore stays
unsuccessful instead of bootstrapping itself.

The traversal schedule is computed once per graph snapshot: nodes are
grouped by condensation depth, and each acyclic group of one kind is updated
with a single gather + segmented reduction over all scenarios at once.
Binary success values travel as packed uint64 bit columns, real values as
float64 matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import InternalInconsistencyError, NumericalError
from .graph import MOLECULE, AndOrGraph

DEFAULT_TOL = 1e-10


@dataclass
class _VectorStep:
    kind: int
    ids: np.ndarray  # nodes updated by this step
    with_deps: np.ndarray  # subset of ids that have dependencies
    dep_concat: np.ndarray  # concatenated dependency ids
    dep_starts: np.ndarray  # segment start offsets into dep_concat
    no_deps: np.ndarray  # subset of ids without dependencies


@dataclass
class _SccStep:
    members: np.ndarray  # reverse insertion order


def _ragged_gather(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Index array selecting, for each i, the slice [starts[i], starts[i]+lens[i])."""
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    reps = np.repeat(starts, lens)
    seg0 = np.repeat(np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
    return reps + (np.arange(total, dtype=np.int64) - seg0)


class GraphIndex:
    """Static traversal schedule for one snapshot of a search graph."""

    def __init__(self, graph: AndOrGraph):
        self.graph = graph
        n = len(graph)
        self.n = n
        self.root = graph.root
        kind = np.empty(n, dtype=np.int8)
        frontier = np.zeros(n, dtype=bool)
        child_counts = np.empty(n, dtype=np.int64)
        parent_counts = np.empty(n, dtype=np.int64)
        for node in graph.nodes:
            i = node.id
            kind[i] = node.kind
            child_counts[i] = len(node.children)
            parent_counts[i] = len(node.parents)
            if node.kind == MOLECULE and not node.expanded:
                frontier[i] = True
        self.kind = kind
        self.frontier = frontier
        n_edges = int(child_counts.sum())
        child_concat = np.fromiter(
            (c for node in graph.nodes for c in node.children),
            dtype=np.int64, count=n_edges,
        )
        parent_concat = np.fromiter(
            (p for node in graph.nodes for p in node.parents),
            dtype=np.int64, count=int(parent_counts.sum()),
        )
        child_offsets = np.concatenate([[0], np.cumsum(child_counts)])
        parent_offsets = np.concatenate([[0], np.cumsum(parent_counts)])
        self._csr = {
            "down": (child_offsets, child_concat, child_counts),
            "up": (parent_offsets, parent_concat, parent_counts),
        }

        src = np.repeat(np.arange(n), child_counts)
        dst = child_concat
        adj = sparse.csr_matrix(
            (np.ones(len(src), dtype=np.int8), (src, dst)), shape=(n, n)
        )
        n_comp, labels = csgraph.connected_components(
            adj, directed=True, connection="strong"
        )
        self.scc_labels = labels
        self.n_components = n_comp
        comp_sizes = np.bincount(labels, minlength=n_comp)
        self.has_cycles = bool((comp_sizes > 1).any())

        comp_edges = _unique_pairs(labels[src], labels[dst])
        depth_down = _longest_path_depths(n_comp, comp_edges, toward="sinks")
        depth_up = _longest_path_depths(n_comp, comp_edges, toward="sources")

        cyclic = comp_sizes[labels] > 1
        self.down_steps = self._build_steps(labels, cyclic, depth_down, "down")
        self.up_steps = self._build_steps(labels, cyclic, depth_up, "up")

    def _build_steps(self, labels, cyclic, comp_depth, direction: str) -> list:
        n = self.n
        offsets, concat, counts = self._csr[direction]
        node_depth = comp_depth[labels]
        # order every plain node by (depth, kind, id); one ragged gather pulls
        # all dependencies in that order, so per-step arrays are pure slices
        order = np.lexsort((np.arange(n), self.kind, cyclic, node_depth))
        lens = counts[order]
        gathered = concat[_ragged_gather(offsets[order], lens)]
        ends = np.cumsum(lens)
        begins = ends - lens
        # one run per (depth, kind) for plain nodes; cyclic components must
        # stay whole (they mix kinds), so kind is masked out of their key
        cyc = cyclic[order].astype(np.int64)
        run_key = node_depth[order] * 4 + cyc * 2 + self.kind[order] * (1 - cyc)
        bounds = np.concatenate([[0], np.flatnonzero(np.diff(run_key)) + 1, [n]])
        steps: list = []
        for pos, stop in zip(bounds[:-1], bounds[1:]):
            first = order[pos]
            if cyclic[first]:
                loop_nodes = order[pos:stop]
                for comp in np.unique(labels[loop_nodes]):
                    members = loop_nodes[labels[loop_nodes] == comp]
                    steps.append(_SccStep(members=members[np.argsort(-members)]))
                continue
            ids = order[pos:stop]
            has = lens[pos:stop] > 0
            steps.append(_VectorStep(
                kind=int(self.kind[first]), ids=ids, with_deps=ids[has],
                dep_concat=gathered[begins[pos] : ends[stop - 1]],
                dep_starts=(begins[pos:stop][has] - begins[pos]).astype(np.int64),
                no_deps=ids[~has],
            ))
        return steps

    def children(self, nid: int) -> list[int]:
        return self.graph.nodes[nid].children

    def parents(self, nid: int) -> list[int]:
        return self.graph.nodes[nid].parents


def _unique_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mask = a != b
    if not mask.any():
        return np.zeros((0, 2), dtype=np.int64)
    span = int(max(a.max(), b.max())) + 1
    keys = np.unique(a[mask].astype(np.int64) * span + b[mask])
    return np.stack([keys // span, keys % span], axis=1)


def _longest_path_depths(n_comp: int, edges: np.ndarray, toward: str) -> np.ndarray:
    """Longest-path depth of each condensation component.

    ``toward="sinks"``: depth 0 at components with no outgoing edges and
    1 + max over successors elsewhere (dependency order for bottom-up
    passes).  ``toward="sources"`` mirrors it for top-down passes.
    Vectorized Kahn peeling: each round resolves all components whose
    dependencies are settled.
    """
    depth = np.zeros(n_comp, dtype=np.int64)
    if toward == "sinks":
        u_col, v_col = edges[:, 0], edges[:, 1]  # u depends on v
    else:
        u_col, v_col = edges[:, 1], edges[:, 0]
    pending = np.bincount(u_col, minlength=n_comp)
    by_dep = np.argsort(v_col, kind="stable")
    sorted_v = v_col[by_dep]
    sorted_u = u_col[by_dep]
    ready = np.flatnonzero(pending == 0)
    seen = 0
    while len(ready):
        seen += len(ready)
        left = np.searchsorted(sorted_v, ready, side="left")
        right = np.searchsorted(sorted_v, ready, side="right")
        lens = right - left
        if not lens.any():
            break
        rows = _ragged_gather(left, lens)
        us = sorted_u[rows]
        np.maximum.at(depth, us, np.repeat(depth[ready], lens) + 1)
        np.subtract.at(pending, us, 1)
        ready = np.unique(us[pending[us] == 0])
    if seen != n_comp:
        raise InternalInconsistencyError("condensation DAG contained a cycle")
    return depth


# ---------------------------------------------------------------------------
# packed binary success


def success_pass(idx: GraphIndex, packed_outcomes: np.ndarray) -> np.ndarray:
    """Per-scenario success bits for every node.

    ``packed_outcomes`` holds buyability bits at molecule rows and
    feasibility bits at reaction rows.  Molecules succeed when buyable or
    any child reaction succeeds; reactions succeed when feasible and all
    reactant molecules succeed.
    """
    n, w = packed_outcomes.shape
    s = np.zeros((n, w), dtype=np.uint64)
    for step in idx.down_steps:
        if isinstance(step, _SccStep):
            _success_scc(idx, s, packed_outcomes, step.members)
            continue
        if step.kind == MOLECULE:
            if len(step.no_deps):
                s[step.no_deps] = packed_outcomes[step.no_deps]
            if len(step.with_deps):
                agg = np.bitwise_or.reduceat(s[step.dep_concat], step.dep_starts, axis=0)
                s[step.with_deps] = packed_outcomes[step.with_deps] | agg
        else:
            agg = np.bitwise_and.reduceat(s[step.dep_concat], step.dep_starts, axis=0)
            s[step.with_deps] = packed_outcomes[step.with_deps] & agg
    return s


def _success_scc(idx, s, packed, members) -> None:
    limit = len(members) * 64 * s.shape[1] + 2
    for _ in range(limit):
        changed = False
        for nid in members:
            deps = idx.children(nid)
            if idx.kind[nid] == MOLECULE:
                new = packed[nid]
                for d in deps:
                    new = new | s[d]
            else:
                new = packed[nid]
                for d in deps:
                    new = new & s[d]
            if not np.array_equal(new, s[nid]):
                s[nid] = new
                changed = True
        if not changed:
            return
    raise InternalInconsistencyError("packed success iteration failed to settle")


# ---------------------------------------------------------------------------
# real-valued expected success


def psi_pass(idx: GraphIndex, outcomes: np.ndarray, h_eff: np.ndarray,
             tol: float = DEFAULT_TOL) -> np.ndarray:
    """Best expected success value of every node under one graph snapshot.

    ``h_eff`` is the per-node heuristic contribution: the heuristic value at
    frontier molecules and 0 elsewhere (passing all zeros computes plain
    success as floats).  Molecules take max(b, h_eff, best child reaction);
    reactions multiply feasibility by the product over reactants.
    """
    n, k = outcomes.shape
    psi = np.zeros((n, k))
    for step in idx.down_steps:
        if isinstance(step, _SccStep):
            _psi_scc(idx, psi, outcomes, h_eff, step.members, tol)
            continue
        if step.kind == MOLECULE:
            if len(step.no_deps):
                psi[step.no_deps] = np.maximum(outcomes[step.no_deps],
                                               h_eff[step.no_deps, None])
            if len(step.with_deps):
                agg = np.maximum.reduceat(psi[step.dep_concat], step.dep_starts, axis=0)
                np.maximum(agg, outcomes[step.with_deps], out=agg)
                np.maximum(agg, h_eff[step.with_deps, None], out=agg)
                psi[step.with_deps] = agg
        else:
            agg = np.multiply.reduceat(psi[step.dep_concat], step.dep_starts, axis=0)
            psi[step.with_deps] = outcomes[step.with_deps] * agg
    return psi


def _psi_scc(idx, psi, outcomes, h_eff, members, tol) -> None:
    def sweep() -> float:
        worst = 0.0
        for nid in members:
            deps = idx.children(nid)
            if idx.kind[nid] == MOLECULE:
                new = max(float(h_eff[nid]), 0.0)
                new = np.maximum(outcomes[nid], new)
                for d in deps:
                    new = np.maximum(new, psi[d])
            else:
                new = outcomes[nid].copy()
                for d in deps:
                    new = new * psi[d]
            delta = float(np.max(np.abs(new - psi[nid])))
            if delta > worst:
                worst = delta
            psi[nid] = new
        return worst

    _iterate_to_fixpoint(sweep, lambda: psi.__setitem__(members, 0.0),
                         len(members), tol)


def _iterate_to_fixpoint(sweep, reset, size: int, tol: float) -> None:
    limit = max(10 * size, 20)
    for _attempt in range(2):
        for _ in range(limit):
            if sweep() <= tol:
                return
        reset()  # non-convergence: restart the cycle group from zero once
    raise NumericalError(
        f"value iteration failed to converge within {limit} sweeps twice"
    )


def rho_pass(idx: GraphIndex, psi: np.ndarray,
             tol: float = DEFAULT_TOL) -> np.ndarray:
    """Root-through values: best expected success of plans for the root.

    The root copies its own psi value; other molecules take the best parent
    reaction; a reaction rescales its parent molecule's value by
    psi(reaction)/psi(parent), i.e. the factor lost by *committing* to that
    reaction instead of the parent's best alternative.
    """
    n, k = psi.shape
    rho = np.zeros((n, k))
    rho[idx.root] = psi[idx.root]
    for step in idx.up_steps:
        if isinstance(step, _SccStep):
            _rho_scc(idx, rho, psi, step.members, tol)
            continue
        if step.kind == MOLECULE:
            ids = step.with_deps[step.with_deps != idx.root]
            if len(ids) != len(step.with_deps):
                # a cycle points back at the root: its value stays pinned,
                # so fall back to per-node updates for the rest of the step
                _rho_molecules_scalar(idx, rho, ids)
            elif len(ids):
                agg = np.maximum.reduceat(rho[step.dep_concat], step.dep_starts, axis=0)
                rho[ids] = agg
        else:
            ids = step.with_deps
            parents = step.dep_concat  # exactly one parent per reaction
            ratio = _commit_ratio(psi[ids], psi[parents])
            rho[ids] = rho[parents] * ratio
    return rho


def _rho_molecules_scalar(idx, rho, ids) -> None:
    for nid in ids:
        best = rho[idx.parents(nid)[0]]
        for pid in idx.parents(nid)[1:]:
            best = np.maximum(best, rho[pid])
        rho[nid] = best


def _commit_ratio(psi_r: np.ndarray, psi_m: np.ndarray) -> np.ndarray:
    bad = (psi_r > 0) & (psi_m <= 0)
    if bad.any():
        raise InternalInconsistencyError(
            "a reaction has positive expected success but its product has none"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(psi_r > 0, psi_r / np.where(psi_m > 0, psi_m, 1.0), 0.0)
    return np.minimum(ratio, 1.0)


def _rho_scc(idx, rho, psi, members, tol) -> None:
    root = idx.root

    def sweep() -> float:
        worst = 0.0
        for nid in members:
            if nid == root:
                continue
            if idx.kind[nid] == MOLECULE:
                parents = idx.parents(nid)
                new = rho[parents[0]]
                for pid in parents[1:]:
                    new = np.maximum(new, rho[pid])
            else:
                pid = idx.parents(nid)[0]
                new = rho[pid] * _commit_ratio(psi[nid], psi[pid])
            delta = float(np.max(np.abs(new - rho[nid])))
            if delta > worst:
                worst = delta
            rho[nid] = new
        return worst

    def reset():
        keep = rho[root].copy()
        rho[members] = 0.0
        rho[root] = keep

    _iterate_to_fixpoint(sweep, reset, len(members), tol)


# ---------------------------------------------------------------------------
# incremental packed success for growing graphs


class IncrementalSuccess:
    """Maintains packed success bits while a graph grows.

    Used to replay an expansion log and read off the success estimate after
    every model call without recomputing from scratch.  Correct because
    adding nodes can only raise success values, so chaotic re-relaxation
    from the previous fixpoint converges to the new one.
    """

    def __init__(self, graph: AndOrGraph, words: int):
        self.graph = graph
        self.words = words
        self._store = np.zeros((64, words), dtype=np.uint64)
        self._n = 0

    @property
    def s(self) -> np.ndarray:
        return self._store[: self._n]

    def extend(self, packed_outcomes: np.ndarray) -> None:
        """Bind new nodes (rows of ``packed_outcomes`` align to node ids)."""
        graph = self.graph
        n = len(graph)
        if n == self._n:
            return
        if n > len(self._store):
            grown = np.zeros((max(n, 2 * len(self._store)), self.words),
                             dtype=np.uint64)
            grown[: self._n] = self._store[: self._n]
            self._store = grown
        self._store[self._n : n] = 0
        new_ids = range(self._n, n)
        # seeds: the new nodes plus their direct parents, whose child sets grew
        seeds = set(new_ids)
        for nid in list(seeds):
            seeds.update(graph.nodes[nid].parents)
        self._n = n
        # LIFO relaxation; seeding in id order pops deepest-first
        self._relax(sorted(seeds), packed_outcomes)

    def _relax(self, seeds: list[int], packed: np.ndarray) -> None:
        graph = self.graph
        s = self.s
        pending = list(seeds)
        queued = set(pending)
        while pending:
            nid = pending.pop()
            queued.discard(nid)
            node = graph.nodes[nid]
            if node.kind == MOLECULE:
                new = packed[nid]
                for cid in node.children:
                    new = new | s[cid]
            else:
                new = packed[nid]
                for cid in node.reactants:
                    new = new & s[cid]
            if not np.array_equal(new, s[nid]):
                s[nid] = new
                for pid in node.parents:
                    if pid not in queued:
                        queued.add(pid)
                        pending.append(pid)

    def root_success_count(self) -> int:
        return int(np.bitwise_count(self.s[self.graph.root]).sum())
