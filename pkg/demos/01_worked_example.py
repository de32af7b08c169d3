"""Walk through the value propagation on a small hand-built search graph.

A target has three candidate routes: a two-reactant route whose branches
share a leaf, a route through an infeasible reaction, and a strong route
whose second reactant is directly buyable.  For one sampled scenario we
compute, per node: success s (can it be made right now), expected success
psi (how good could it get if we expanded below it), and root-through value
rho (how good is the best target plan committed to this node).
"""

import numpy as np

from retrofallback import new_graph
from retrofallback.heuristics import Heuristic
from retrofallback.planner import compute_psi, compute_rho
from retrofallback.success import node_success
from retrofallback.uncertainty import ScenarioMatrix, ScenarioTable


class TableModel:
    """Fixed outcomes for the demo scenario."""

    def __init__(self, k, rows, default=0.0):
        self.table = ScenarioTable(k)
        self.rows, self.default = rows, default

    @property
    def k(self):
        return self.table.k

    def marginal(self, info):
        return float(np.mean(self.rows.get(info.signature, [self.default])))

    def extend(self, infos):
        fresh = [i for i in infos if i.signature not in self.table.index]
        if not fresh:
            return
        rows = np.array([
            self.rows.get(i.signature, [int(self.default)] * self.k) for i in fresh
        ], dtype=np.uint8)
        self.table.append([i.signature for i in fresh], rows,
                          np.array([self.marginal(i) for i in fresh]))


class TableHeuristic(Heuristic):
    name = "demo"

    def __init__(self, values):
        self.values = values

    def _evaluate(self, molecule):
        return self.values.get(molecule, 0.0)


def main():
    graph = new_graph("target")
    graph.expand(0, [(["left1", "left2"], 0.9), (["dead"], 0.8), (["open", "stock"], 0.7)])
    graph.expand(graph.find_molecule("left1"), [(["buyA", "shared"], 0.9)])
    graph.expand(graph.find_molecule("left2"), [(["shared", "buyB"], 0.9)])
    graph.expand(graph.find_molecule("stock"), [(["deep"], 0.9)])

    buyable = {"buyA", "buyB", "stock"}
    heuristic = TableHeuristic({"buyA": 0.5, "shared": 0.1, "buyB": 0.5,
                                "dead": 0.8, "open": 0.9, "deep": 0.5})
    feas = TableModel(1, {"target>>dead": [0]}, default=1.0)
    buy = TableModel(1, {m: [1] for m in buyable}, default=0.0)
    matrix = ScenarioMatrix(graph, feas, buy)

    s = node_success(graph, matrix)[:, 0]
    psi = compute_psi(graph, matrix, heuristic)
    rho = compute_rho(graph, psi)

    print(f"{'node':>22}  {'s':>2}  {'psi':>6}  {'rho':>6}")
    for node in graph.nodes:
        if node.kind == 0:
            label = node.molecule
        else:
            info = ScenarioMatrix.node_info(graph, node.id)
            label = f"[{info.product} => {'+'.join(info.reactants)}]"
        print(f"{label:>22}  {int(s[node.id]):>2}  {psi[node.id, 0]:>6.3f}  "
              f"{rho[node.id, 0]:>6.3f}")

    print("\nThe shared leaf is double counted by design: the recursion trades")
    print("that bias for tractability, and the strong branch still dominates.")


if __name__ == "__main__":
    main()
