"""Enumerate every synthesis plan hiding inside a small search graph,
including the subtle ones: the buy-it-directly singleton and plans that
stop early at an intermediate molecule."""

from retrofallback import enumerate_plans, new_graph, validate_plan


def main():
    graph = new_graph("m*")
    graph.expand(0, [(["ma", "mb"], 0.9), (["mb", "mc", "md"], 0.8)])
    graph.expand(graph.find_molecule("ma"), [(["me"], 0.9)])

    plans = enumerate_plans(graph, "m*")
    print(f"{len(plans)} plans produce the target:")
    for i, plan in enumerate(plans, start=1):
        steps = []
        for mid, rid in plan.choice:
            rxn = graph.nodes[rid]
            reactants = "+".join(graph.nodes[c].molecule for c in rxn.reactants)
            steps.append(f"{graph.nodes[mid].molecule} => {reactants}")
        leaves = ", ".join(graph.nodes[m].molecule for m in plan.frontier(graph))
        print(f"  T{i}: {len(plan.choice)} reactions "
              f"[{'; '.join(steps) or 'buy it'}]  leaves: {leaves}")
        assert validate_plan(graph, plan)

    print("\nCycles terminate too:")
    loop = new_graph("A")
    loop.expand(0, [(["B"], 0.9)])
    loop.expand(loop.find_molecule("B"), [(["A"], 0.9)])
    for plan in enumerate_plans(loop, "A"):
        names = sorted(loop.nodes[m].molecule for m in plan.molecules(loop))
        print(f"  plan over molecules {names} ({plan.length()} reactions)")


if __name__ == "__main__":
    main()
