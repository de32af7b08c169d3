"""Why exact success probabilities are out of reach: a clause gadget.

Any 3-CNF formula compiles into a small search graph plus a correlated
buyability model (each scenario buys exactly one of every literal pair).
The graph's success probability is positive exactly when the formula is
satisfiable, so computing it exactly would decide satisfiability.
"""

from retrofallback.success import estimate_ssp, sat_gadget


def show(name, clauses):
    gadget = sat_gadget(clauses)
    exact = gadget.exact_ssp()
    sampled = estimate_ssp(gadget.graph, gadget.scenario_matrix(k=4096, seed=0))
    print(f"  {name:<28} nodes={len(gadget.graph):>2}  exact SSP={exact:.4f}  "
          f"sampled={sampled:.4f}  satisfiable={exact > 0}")


def main():
    print("formula -> gadget graph -> success probability:")
    show("(x1 | x2 | x3)", [(1, 2, 3)])
    show("(x1) & (!x1)", [(1, 1, 1), (-1, -1, -1)])
    show("xor-ish over two variables", [(1, 2, 2), (-1, -2, -2)])
    eight = [tuple(s * v for s, v in zip(signs, (1, 2, 3)))
             for signs in [(a, b, c) for a in (1, -1) for b in (1, -1)
                           for c in (1, -1)]]
    show("all eight clauses over 3 vars", eight)
    show("any seven of them", eight[:-1])


if __name__ == "__main__":
    main()
