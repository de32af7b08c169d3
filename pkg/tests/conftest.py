"""Shared fixtures: canonical example graphs and fixed-outcome models."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pytest

from retrofallback.graph import AndOrGraph, new_graph
from retrofallback.heuristics import Heuristic
from retrofallback.uncertainty import Info, ScenarioMatrix, ScenarioTable


class FixedProcess:
    """Feasibility/buyability stand-in with prescribed outcome rows."""

    def __init__(self, k: int, rows: dict[str, Sequence[int]],
                 default: float = 0.0,
                 marginals: Optional[dict[str, float]] = None):
        self.table = ScenarioTable(k)
        self._rows = {key: np.asarray(row, dtype=np.uint8) for key, row in rows.items()}
        self._default = default
        self._marginals = marginals or {}

    @property
    def k(self) -> int:
        return self.table.k

    def marginal(self, info: Info) -> float:
        sig = info.signature
        if sig in self._marginals:
            return self._marginals[sig]
        if sig in self._rows:
            return float(self._rows[sig].mean())
        return self._default

    def extend(self, infos: Sequence[Info]) -> None:
        fresh = [i for i in infos if i.signature not in self.table.index]
        seen = set()
        unique = []
        for info in fresh:
            if info.signature not in seen:
                seen.add(info.signature)
                unique.append(info)
        if not unique:
            return
        rows = np.empty((len(unique), self.k), dtype=np.uint8)
        marginals = np.empty(len(unique))
        for i, info in enumerate(unique):
            rows[i] = self._rows.get(
                info.signature,
                np.full(self.k, int(round(self._default)), dtype=np.uint8),
            )
            marginals[i] = self.marginal(info)
        self.table.append([i.signature for i in unique], rows, marginals)

    sample_matrix = extend


class MappingHeuristic(Heuristic):
    name = "fixed-mapping"

    def __init__(self, values: dict[str, float], default: float = 0.0):
        self.values = values
        self.default = default

    def _evaluate(self, molecule: str) -> float:
        return self.values.get(molecule, self.default)


def build_fig1_graph() -> AndOrGraph:
    """Two-route example: target via (ma+mb) or (mb+mc+md), ma via me."""
    g = new_graph("m*")
    g.expand(0, [(["ma", "mb"], 0.9), (["mb", "mc", "md"], 0.8)])
    g.expand(g.find_molecule("ma"), [(["me"], 0.9)])
    return g


GOLDEN_BUYABLE = {"mc", "me", "mh"}
GOLDEN_H = {"mc": 0.5, "md": 0.1, "me": 0.5, "mf": 0.8, "mg": 0.9, "mi": 0.5}
#: molecule -> (s, psi, rho) and reaction product -> same, from the worked example
GOLDEN_EXPECTED = {
    "m*": (0, 0.9, 0.9),
    "r:m*>>ma.mb": (0, 0.01, 0.01),
    "ma": (0, 0.1, 0.01),
    "mb": (0, 0.1, 0.01),
    "r:m*>>mf": (0, 0.0, 0.0),
    "mf": (0, 0.8, 0.0),
    "r:m*>>mg.mh": (0, 0.9, 0.9),
    "mg": (0, 0.9, 0.9),
    "mh": (1, 1.0, 0.9),
    "r:ma>>mc.md": (0, 0.1, 0.01),
    "mc": (1, 1.0, 0.01),
    "md": (0, 0.1, 0.01),
    "r:mb>>md.me": (0, 0.1, 0.01),
    "me": (1, 1.0, 0.01),
    "r:mh>>mi": (0, 0.5, 0.45),
    "mi": (0, 0.5, 0.45),
}


def build_golden_graph() -> AndOrGraph:
    """The worked-example graph: three branches, one shared intermediate."""
    g = new_graph("m*")
    g.expand(0, [(["ma", "mb"], 0.9), (["mf"], 0.8), (["mg", "mh"], 0.7)])
    g.expand(g.find_molecule("ma"), [(["mc", "md"], 0.9)])
    g.expand(g.find_molecule("mb"), [(["md", "me"], 0.9)])
    g.expand(g.find_molecule("mh"), [(["mi"], 0.9)])
    return g


def golden_matrix(graph: AndOrGraph, k: int = 1) -> ScenarioMatrix:
    """Single fixed scenario of the worked example, replicated k times."""
    buy_rows = {m: [1] * k for m in GOLDEN_BUYABLE}
    feas_rows = {"m*>>mf": [0] * k}  # the one infeasible reaction
    feas = FixedProcess(k, feas_rows, default=1.0)
    buy = FixedProcess(k, buy_rows, default=0.0)
    return ScenarioMatrix(graph, feas, buy)


def golden_label(graph: AndOrGraph, nid: int) -> str:
    node = graph.nodes[nid]
    if node.kind == 0:
        return node.molecule
    from retrofallback.uncertainty import ScenarioMatrix as _SM

    return "r:" + _SM.node_info(graph, nid).signature


@pytest.fixture
def fig1_graph() -> AndOrGraph:
    return build_fig1_graph()


@pytest.fixture
def golden() -> tuple[AndOrGraph, ScenarioMatrix, MappingHeuristic]:
    graph = build_golden_graph()
    return graph, golden_matrix(graph), MappingHeuristic(GOLDEN_H)
