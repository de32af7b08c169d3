"""Explicit AND/OR search graphs.

Molecule (OR) nodes alternate with reaction (AND) nodes in a bipartite
directed graph rooted at a target molecule.  Edges run product-molecule ->
reaction and reaction -> reactant-molecule, i.e. backwards from the chemistry
point of view.  The graph only ever grows: expanding a frontier molecule adds
reaction nodes and their reactant molecules, and never removes anything.

Two storage modes exist.  In ``graph`` mode each distinct molecule string is
stored once, so the graph may contain cycles.  In ``tree`` mode every
proposal creates fresh reactant nodes, every node has at most one parent and
the graph is always acyclic (proposals that would re-create an ancestor
molecule on the same branch are skipped, since a synthesis plan can never use
them).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

from .errors import (
    InvalidInputError,
    NotFoundError,
    PreconditionError,
    RejectedProposalError,
)

MOLECULE = 0
REACTION = 1

#: A backward proposal: an ordered reactant list plus a model score in [0, 1].
Proposal = tuple[Sequence[str], float]


@dataclass
class MoleculeNode:
    id: int
    molecule: str
    expanded: bool = False
    purchase_tier: Optional[int] = None
    depth: int = 0
    children: list[int] = field(default_factory=list)  # reaction ids
    parents: list[int] = field(default_factory=list)  # reaction ids

    kind = MOLECULE

    @property
    def on_frontier(self) -> bool:
        return not self.expanded


@dataclass
class ReactionNode:
    id: int
    product: int
    reactants: list[int]
    rank: int
    score: float

    kind = REACTION

    @property
    def children(self) -> list[int]:
        return self.reactants

    @property
    def parents(self) -> list[int]:
        return [self.product]


Node = Union[MoleculeNode, ReactionNode]


class AndOrGraph:
    """Append-only AND/OR graph with frontier bookkeeping.

    Single-writer: :meth:`expand` must not run concurrently with itself.
    All other methods are read-only traversals and may run in parallel
    between expansions.
    """

    def __init__(
        self,
        target: str,
        mode: str = "graph",
        tier_fn: Optional[Callable[[str], Optional[int]]] = None,
    ):
        if not target:
            raise InvalidInputError("target molecule string must be nonempty")
        if mode not in ("tree", "graph"):
            raise InvalidInputError(f"unknown graph mode {mode!r}")
        self.mode = mode
        self.tier_fn = tier_fn
        self.nodes: list[Node] = []
        self.root = 0
        self._mol_index: dict[str, int] = {}
        self._frontier: set[int] = set()
        self._add_molecule(target, depth=0)

    # -- construction ----------------------------------------------------

    def _add_molecule(self, molecule: str, depth: int) -> int:
        nid = len(self.nodes)
        tier = self.tier_fn(molecule) if self.tier_fn is not None else None
        if tier is not None and not 0 <= tier <= 5:
            raise InvalidInputError(f"purchase tier {tier} outside 0-5")
        node = MoleculeNode(id=nid, molecule=molecule, purchase_tier=tier, depth=depth)
        self.nodes.append(node)
        if self.mode == "graph":
            self._mol_index[molecule] = nid
        self._frontier.add(nid)
        return nid

    def expand(self, mol_id: int, proposals: Iterable[Proposal]) -> list[int]:
        """Expand a frontier molecule with backward-model proposals.

        Returns the ids of all nodes added.  The molecule leaves the
        frontier even when ``proposals`` is empty (a dead end).  Duplicate
        proposals (same reactant multiset) keep only the lowest rank; in
        tree mode, proposals that would recreate an ancestor molecule of
        ``mol_id`` are skipped as unusable by any synthesis plan.
        """
        mol = self.molecule_node(mol_id)
        if mol.expanded:
            raise PreconditionError(f"node {mol_id} ({mol.molecule!r}) is not on the frontier")
        mol.expanded = True
        self._frontier.discard(mol_id)

        banned: set[str] = set()
        if self.mode == "tree":
            banned = self._branch_molecules(mol_id)

        added: list[int] = []
        seen: set[tuple[str, ...]] = set()
        for rank, (reactants, score) in enumerate(proposals, start=1):
            reactants = _dedupe_preserving_order(reactants)
            if not reactants:
                raise InvalidInputError("a proposal must have at least one reactant")
            if mol.molecule in reactants:
                raise RejectedProposalError(
                    f"product {mol.molecule!r} appears among its own reactants"
                )
            key = tuple(sorted(reactants))
            if key in seen:
                continue
            seen.add(key)
            if banned and any(r in banned for r in reactants):
                continue
            rid = len(self.nodes)
            rxn = ReactionNode(id=rid, product=mol_id, reactants=[], rank=rank,
                               score=float(score))
            self.nodes.append(rxn)
            added.append(rid)
            for r in reactants:
                if self.mode == "graph" and r in self._mol_index:
                    cid = self._mol_index[r]
                else:
                    cid = self._add_molecule(r, depth=mol.depth + 1)
                    added.append(cid)
                rxn.reactants.append(cid)
                self.nodes[cid].parents.append(rid)
            mol.children.append(rid)
        return sorted(added)

    def _branch_molecules(self, mol_id: int) -> set[str]:
        """Molecule strings on the unique tree path from the root to mol_id."""
        out = {self.nodes[mol_id].molecule}
        nid = mol_id
        while True:
            parents = self.nodes[nid].parents
            if not parents:
                return out
            rxn = self.nodes[parents[0]]
            nid = rxn.product
            out.add(self.nodes[nid].molecule)

    # -- queries ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def molecule_node(self, nid: int) -> MoleculeNode:
        node = self.node(nid)
        if node.kind != MOLECULE:
            raise InvalidInputError(f"node {nid} is a reaction, not a molecule")
        return node

    def node(self, nid: int) -> Node:
        if not 0 <= nid < len(self.nodes):
            raise NotFoundError(nid)
        return self.nodes[nid]

    def find_molecule(self, molecule: str) -> int:
        """Node id for a molecule string (graph mode only)."""
        if self.mode != "graph":
            raise PreconditionError("molecule lookup by string requires graph mode")
        if molecule not in self._mol_index:
            raise NotFoundError(molecule)
        return self._mol_index[molecule]

    def frontier(self) -> set[int]:
        """Ids of unexpanded molecule nodes."""
        return set(self._frontier)

    def is_frontier(self, nid: int) -> bool:
        return nid in self._frontier

    def molecule_ids(self) -> Iterator[int]:
        return (n.id for n in self.nodes if n.kind == MOLECULE)

    def reaction_ids(self) -> Iterator[int]:
        return (n.id for n in self.nodes if n.kind == REACTION)

    # -- serialization ----------------------------------------------------

    def to_jsonl(self) -> str:
        """One JSON object per node, in id order."""
        lines = []
        for n in self.nodes:
            if n.kind == MOLECULE:
                obj = {"id": n.id, "kind": "molecule", "molecule": n.molecule,
                       "expanded": n.expanded}
                if n.purchase_tier is not None:
                    obj["tier"] = n.purchase_tier
            else:
                obj = {"id": n.id, "kind": "reaction", "product": n.product,
                       "reactants": list(n.reactants), "rank": n.rank, "score": n.score}
            lines.append(json.dumps(obj, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, mode: str = "graph") -> "AndOrGraph":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or records[0]["kind"] != "molecule":
            raise InvalidInputError("node dump must start with the root molecule")
        graph = cls.__new__(cls)
        graph.mode = mode
        graph.tier_fn = None
        graph.nodes = []
        graph.root = 0
        graph._mol_index = {}
        graph._frontier = set()
        for rec in records:
            if rec["id"] != len(graph.nodes):
                raise InvalidInputError("node ids must be dense and in order")
            if rec["kind"] == "molecule":
                node = MoleculeNode(
                    id=rec["id"], molecule=rec["molecule"], expanded=rec["expanded"],
                    purchase_tier=rec.get("tier"),
                )
                graph.nodes.append(node)
                if mode == "graph":
                    graph._mol_index[node.molecule] = node.id
                if not node.expanded:
                    graph._frontier.add(node.id)
            else:
                graph.nodes.append(ReactionNode(
                    id=rec["id"], product=rec["product"], reactants=list(rec["reactants"]),
                    rank=rec["rank"], score=rec["score"],
                ))
        # reactions precede their reactant molecules in id order, so edges
        # are wired only once every node exists
        for node in graph.nodes:
            if node.kind == REACTION:
                graph.nodes[node.product].children.append(node.id)
                for cid in node.reactants:
                    graph.nodes[cid].parents.append(node.id)
        return graph


def _dedupe_preserving_order(items: Sequence[str]) -> list[str]:
    seen = set()
    out = []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


def new_graph(target: str, mode: str = "graph",
              tier_fn: Optional[Callable[[str], Optional[int]]] = None) -> AndOrGraph:
    """Fresh search graph containing only the unexpanded target molecule."""
    return AndOrGraph(target, mode=mode, tier_fn=tier_fn)


# ---------------------------------------------------------------------------
# synthesis plans


@dataclass(frozen=True)
class SynthesisPlan:
    """An acyclic subgraph choosing at most one reaction per molecule.

    ``choice`` maps molecule id -> chosen reaction id; molecules without an
    entry form the plan frontier (they must be bought for the plan to run).
    """

    root: int
    nodes: frozenset[int]
    choice: tuple[tuple[int, int], ...]

    @property
    def choice_map(self) -> dict[int, int]:
        return dict(self.choice)

    def reactions(self) -> list[int]:
        return sorted(r for _, r in self.choice)

    def molecules(self, graph: AndOrGraph) -> list[int]:
        return sorted(n for n in self.nodes if graph.nodes[n].kind == MOLECULE)

    def frontier(self, graph: AndOrGraph) -> list[int]:
        chosen = {m for m, _ in self.choice}
        return sorted(
            n for n in self.nodes
            if graph.nodes[n].kind == MOLECULE and n not in chosen
        )

    def length(self) -> int:
        """Number of reactions in the plan."""
        return len(self.choice)


def _make_plan(graph: AndOrGraph, root: int, choice: dict[int, int]) -> SynthesisPlan:
    nodes = {root} | set(choice.keys()) | set(choice.values())
    for rid in choice.values():
        nodes.update(graph.nodes[rid].reactants)
    return SynthesisPlan(
        root=root, nodes=frozenset(nodes), choice=tuple(sorted(choice.items()))
    )


def enumerate_plans(graph: AndOrGraph, product: Union[int, str],
                    max_count: int = 10_000) -> list[SynthesisPlan]:
    """All synthesis plans producing ``product``, capped at ``max_count``.

    Recursion never revisits a molecule already open on the current branch,
    so cyclic graphs terminate; cross-branch merges are checked for choice
    consistency and acyclicity before being accepted.
    """
    if isinstance(product, str):
        product = graph.find_molecule(product)
    node = graph.node(product)
    if node.kind != MOLECULE:
        raise NotFoundError(product)

    def plans_for(mid: int, banned: frozenset[int]) -> list[dict[int, int]]:
        # each plan is represented by its molecule -> reaction choice map
        out: list[dict[int, int]] = [{}]  # the singleton plan {mid}
        for rid in graph.nodes[mid].children:
            rxn = graph.nodes[rid]
            if any(c in banned for c in rxn.reactants):
                continue
            sub_banned = banned | {mid}
            branch_plans: list[list[dict[int, int]]] = []
            for cid in rxn.reactants:
                branch_plans.append(plans_for(cid, sub_banned))
            for combo in _consistent_products(branch_plans):
                merged = dict(combo)
                merged[mid] = rid
                if _choice_is_acyclic(graph, merged):
                    out.append(merged)
                    if len(out) >= max_count:
                        return out
        return out

    choices = plans_for(product, frozenset())
    plans = []
    seen = set()
    for ch in choices[:max_count]:
        plan = _make_plan(graph, product, ch)
        if plan.choice not in seen:
            seen.add(plan.choice)
            plans.append(plan)
    return plans


def _consistent_products(branches: list[list[dict[int, int]]]) -> Iterator[dict[int, int]]:
    """Cartesian product of branch choice maps, dropping conflicting merges."""
    if not branches:
        yield {}
        return
    head, *rest = branches
    for h in head:
        for tail in _consistent_products(rest):
            merged = dict(h)
            ok = True
            for m, r in tail.items():
                if merged.get(m, r) != r:
                    ok = False
                    break
                merged[m] = r
            if ok:
                yield merged


def _choice_is_acyclic(graph: AndOrGraph, choice: dict[int, int]) -> bool:
    """Kahn check over molecule -> reaction -> reactant edges of the plan."""
    state: dict[int, int] = {}  # 0 = open, 1 = done

    def visit(mid: int) -> bool:
        st = state.get(mid)
        if st == 1:
            return True
        if st == 0:
            return False  # back edge
        state[mid] = 0
        rid = choice.get(mid)
        if rid is not None:
            for cid in graph.nodes[rid].reactants:
                if not visit(cid):
                    return False
        state[mid] = 1
        return True

    return all(visit(m) for m in choice)


def validate_plan(graph: AndOrGraph, plan: SynthesisPlan) -> bool:
    """Audit a plan directly against the synthesis-plan conditions.

    Checks (independently of how the plan was produced): induced edges only,
    acyclicity, at most one chosen reaction per molecule, reactions carry all
    reactants plus their product, weak connectivity, and a unique parentless
    molecule equal to the plan root.
    """
    nodes = set(plan.nodes)
    choice = plan.choice_map
    if plan.root not in nodes or graph.nodes[plan.root].kind != MOLECULE:
        return False
    # the chosen reaction of every molecule must be one of its graph children
    for mid, rid in choice.items():
        if mid not in nodes or rid not in nodes:
            return False
        if graph.nodes[mid].kind != MOLECULE or graph.nodes[rid].kind != REACTION:
            return False
        if rid not in graph.nodes[mid].children:
            return False
    # induced edges: a plan may not contain a reaction of an included molecule
    # without choosing it (that edge would be in the induced subgraph)
    for mid in nodes:
        node = graph.nodes[mid]
        if node.kind != MOLECULE:
            continue
        for rid in node.children:
            if rid in nodes and choice.get(mid) != rid:
                return False
    # reactions: full reactant set and product present
    for nid in nodes:
        node = graph.nodes[nid]
        if node.kind != REACTION:
            continue
        if node.product not in nodes or choice.get(node.product) != nid:
            return False
        if any(cid not in nodes for cid in node.reactants):
            return False
    # acyclic
    if not _choice_is_acyclic(graph, choice):
        return False
    # unique parentless molecule = root; here "parent" means an in-plan edge
    parented = set(choice.values())  # reactions all have their product's edge
    for nid in nodes:
        node = graph.nodes[nid]
        if node.kind == REACTION:
            if nid not in parented:
                return False
            continue
        has_parent = any(
            rid in nodes and nid in graph.nodes[rid].reactants for rid in node.parents
        )
        if has_parent == (nid == plan.root):
            return False
    # weakly connected
    return _weakly_connected(graph, nodes, choice)


def _weakly_connected(graph: AndOrGraph, nodes: set[int], choice: dict[int, int]) -> bool:
    if not nodes:
        return False
    adj: dict[int, set[int]] = {n: set() for n in nodes}
    for mid, rid in choice.items():
        adj[mid].add(rid)
        adj[rid].add(mid)
        for cid in graph.nodes[rid].reactants:
            adj[rid].add(cid)
            adj[cid].add(rid)
    stack = [next(iter(nodes))]
    seen = set(stack)
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen == nodes
