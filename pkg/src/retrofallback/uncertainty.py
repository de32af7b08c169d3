"""Feasibility and buyability models.

A feasibility model is a binary stochastic process over reactions; a
buyability model is one over molecules.  Both expose per-outcome marginals
and can extend a matrix of sampled scenarios as the search graph grows,
conditioning on everything sampled so far.  Scenario rows are keyed by
*content* (the reaction signature or molecule string), so the same reaction
appearing at two nodes of a tree-structured graph receives identical
outcomes, as a stochastic process over reaction space requires.

Independent models draw each row from a counter-based substream keyed by
``(seed, content)``, which makes the sampled matrix invariant to how
extensions are batched.  The correlated feasibility model thresholds a
latent Gaussian field with quantile-matched means at zero and extends by
conditioning on previously drawn latents via an incrementally grown
Cholesky factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .errors import InvalidInputError, NumericalError
from .graph import MOLECULE, AndOrGraph
from .reactions import Fingerprint, reaction_fingerprints, substream

# ---------------------------------------------------------------------------
# marginals


def rank_marginal(rank: int) -> float:
    """Feasibility of a proposal by its model rank, clamped to 0.75.

    The raw rule 0.75/(rank/10) exceeds one for ranks below ten, so it is
    capped at the intended top-reaction value of 0.75.
    """
    if rank < 1:
        raise InvalidInputError(f"rank must be >= 1, got {rank}")
    return min(0.75, 7.5 / rank)


def constant_marginal(p: float = 0.5) -> float:
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"constant marginal {p} outside [0, 1]")
    return p


def tier_marginal(tier: Optional[int], mode: str = "binary") -> float:
    """Buyability of a molecule from its purchase tier (None = unpurchasable)."""
    if tier is None:
        return 0.0
    if not 0 <= tier <= 5:
        raise InvalidInputError(f"purchase tier {tier} outside 0-5")
    if mode == "binary":
        return 1.0 if tier <= 2 else 0.0
    if mode == "stochastic":
        return {0: 1.0, 1: 1.0, 2: 1.0, 3: 0.5, 4: 0.2, 5: 0.05}[tier]
    raise InvalidInputError(f"unknown buyability mode {mode!r}")


# ---------------------------------------------------------------------------
# similarity kernel


def jaccard(x: Fingerprint, y: Fingerprint) -> float:
    """Count-vector Jaccard similarity; two empty fingerprints count as equal."""
    if not x and not y:
        return 1.0
    num = 0
    den = 0
    for k in set(x) | set(y):
        xv = x.get(k, 0)
        yv = y.get(k, 0)
        num += min(xv, yv)
        den += max(xv, yv)
    return num / den if den else 1.0


def reaction_kernel(feats1: tuple[Fingerprint, Fingerprint],
                    feats2: tuple[Fingerprint, Fingerprint]) -> float:
    """Similarity of two reactions: Jaccard of the combined fingerprints
    times Jaccard of the product/reactant difference fingerprints."""
    return jaccard(feats1[0], feats2[0]) * jaccard(feats1[1], feats2[1])


# ---------------------------------------------------------------------------
# content descriptors


@dataclass(frozen=True)
class ReactionInfo:
    product: str
    reactants: tuple[str, ...]
    rank: int
    score: float = 0.0

    @property
    def signature(self) -> str:
        return f"{self.product}>>{'.'.join(sorted(self.reactants))}"

    def features(self) -> tuple[Fingerprint, Fingerprint]:
        return reaction_fingerprints(self.product, self.reactants)


@dataclass(frozen=True)
class MoleculeInfo:
    molecule: str
    tier: Optional[int] = None

    @property
    def signature(self) -> str:
        return self.molecule


Info = Union[ReactionInfo, MoleculeInfo]


# ---------------------------------------------------------------------------
# scenario storage


def _packed_words(k: int) -> int:
    return (k + 63) // 64


def pack_bits(rows: np.ndarray) -> np.ndarray:
    """Pack (..., k) binary uint8 into (..., w) uint64 words, little-endian."""
    k = rows.shape[-1]
    w = _packed_words(k)
    padded = np.zeros(rows.shape[:-1] + (w * 64,), dtype=np.uint8)
    padded[..., :k] = rows
    return np.packbits(padded, axis=-1, bitorder="little").view(np.uint64)


def unpack_bits(packed: np.ndarray, k: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`."""
    bits = np.unpackbits(packed.view(np.uint8), axis=-1, bitorder="little")
    return bits[..., :k]


class ScenarioTable:
    """Append-only per-content rows of k binary outcomes.

    Extension never mutates existing rows; contents are deduplicated, so a
    content seen twice maps to the same row.
    """

    def __init__(self, k: int):
        if k < 1:
            raise InvalidInputError("scenario count k must be >= 1")
        self.k = k
        self.words = _packed_words(k)
        self.index: dict[str, int] = {}
        self._outcomes = np.zeros((0, k), dtype=np.uint8)
        self._packed = np.zeros((0, self.words), dtype=np.uint64)
        self._marginals = np.zeros((0,), dtype=np.float64)

    def __len__(self) -> int:
        return len(self.index)

    def row(self, content: str) -> int:
        return self.index[content]

    @property
    def outcomes(self) -> np.ndarray:
        return self._outcomes

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def marginals(self) -> np.ndarray:
        return self._marginals

    def append(self, contents: Sequence[str], outcomes: np.ndarray,
               marginals: np.ndarray) -> None:
        assert outcomes.shape == (len(contents), self.k)
        start = len(self.index)
        for i, c in enumerate(contents):
            assert c not in self.index
            self.index[c] = start + i
        self._outcomes = np.concatenate([self._outcomes, outcomes.astype(np.uint8)])
        self._packed = np.concatenate([self._packed, pack_bits(outcomes)])
        self._marginals = np.concatenate([self._marginals, np.asarray(marginals, float)])


# ---------------------------------------------------------------------------
# models


class IndependentProcess:
    """Outcomes sampled independently per content from seeded substreams."""

    def __init__(self, marginal_fn: Callable[[Info], float], k: int, seed: int,
                 tag: str):
        self._marginal_fn = marginal_fn
        self.table = ScenarioTable(k)
        self.seed = seed
        self.tag = tag

    @property
    def k(self) -> int:
        return self.table.k

    def marginal(self, info: Info) -> float:
        return self._marginal_fn(info)

    def extend(self, infos: Sequence[Info]) -> None:
        fresh = _deduplicate_unseen(self.table, infos)
        if not fresh:
            return
        contents = [i.signature for i in fresh]
        marginals = np.array([self.marginal(i) for i in fresh])
        rows = np.empty((len(fresh), self.k), dtype=np.uint8)
        for i, (content, p) in enumerate(zip(contents, marginals)):
            rng = substream(self.seed, self.tag, content)
            rows[i] = rng.random(self.k) < p
        self.table.append(contents, rows, marginals)

    def sample_matrix(self, infos: Sequence[Info]) -> None:
        """One-shot sampling; identical to incremental extension."""
        self.extend(infos)


def _deduplicate_unseen(table: ScenarioTable, infos: Sequence[Info]) -> list[Info]:
    fresh = []
    seen = set()
    for info in infos:
        sig = info.signature
        if sig not in table.index and sig not in seen:
            seen.add(sig)
            fresh.append(info)
    return fresh


class IndependentFeasibility(IndependentProcess):
    def __init__(self, marginal_fn, k: int, seed: int):
        super().__init__(marginal_fn, k, seed, tag="feasibility")


class IndependentBuyability(IndependentProcess):
    def __init__(self, mode: str, k: int, seed: int):
        if mode not in ("binary", "stochastic"):
            raise InvalidInputError(f"unknown buyability mode {mode!r}")
        self.mode = mode
        super().__init__(lambda info: tier_marginal(info.tier, mode), k, seed,
                         tag="buyability")


class LatentGPFeasibility:
    """Correlated feasibility: sign-thresholded latent Gaussian field.

    Latents have unit variance, mean ``ndtri(marginal)`` (so marginals are
    preserved exactly in distribution) and covariance given by the reaction
    similarity kernel.  Extension draws from the conditional Gaussian given
    all previous latents; the Cholesky factor of the kernel matrix is grown
    by block updates and never recomputed from scratch.
    """

    def __init__(self, marginal_fn: Callable[[ReactionInfo], float], k: int,
                 seed: int, kernel: Callable = reaction_kernel,
                 jitter: float = 1e-8, max_jitter: float = 1e-4):
        self._marginal_fn = marginal_fn
        self.table = ScenarioTable(k)
        self.seed = seed
        self.kernel = kernel
        self.jitter = jitter
        self.max_jitter = max_jitter
        self._feats: list[tuple[Fingerprint, Fingerprint]] = []
        self._mu = np.zeros((0,))
        self._chol = np.zeros((0, 0))  # lower-triangular factor of K + jitter*I
        self._white = np.zeros((0, k))  # whitened draws E with Z = mu + L @ E
        self._latent = np.zeros((0, k))

    @property
    def k(self) -> int:
        return self.table.k

    @property
    def latent(self) -> np.ndarray:
        """Per-content latent values, one row per reaction, one column per scenario."""
        return self._latent

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    def marginal(self, info: ReactionInfo) -> float:
        return self._marginal_fn(info)

    def extend(self, infos: Sequence[ReactionInfo]) -> None:
        fresh = _deduplicate_unseen(self.table, infos)
        if not fresh:
            return
        n_old = len(self._feats)
        n_new = len(fresh)
        feats_new = [i.features() for i in fresh]
        marginals = np.array([self.marginal(i) for i in fresh])
        mu_new = _latent_mean(marginals)

        k_no = np.empty((n_new, n_old))
        for i, fn in enumerate(feats_new):
            for j, fo in enumerate(self._feats):
                k_no[i, j] = self.kernel(fn, fo)
        k_nn = np.empty((n_new, n_new))
        for i in range(n_new):
            for j in range(i + 1):
                k_nn[i, j] = k_nn[j, i] = self.kernel(feats_new[i], feats_new[j])

        if n_old:
            # A = L^-1 K_on, so the conditional covariance is the Schur
            # complement K_nn - A^T A and the factor extends as [[L,0],[A^T,Ls]]
            a = solve_triangular(self._chol, k_no.T, lower=True)
            schur = k_nn - a.T @ a
            cond_mean = mu_new[:, None] + a.T @ self._white
        else:
            a = np.zeros((0, n_new))
            schur = k_nn
            cond_mean = np.broadcast_to(mu_new[:, None], (n_new, self.k)).copy()

        schur[np.diag_indices(n_new)] += self.jitter
        ls = self._stable_cholesky(schur)
        eps = np.empty((n_new, self.k))
        for i, info in enumerate(fresh):
            rng = substream(self.seed, "gp-feasibility", info.signature)
            eps[i] = rng.standard_normal(self.k)
        z = cond_mean + ls @ eps

        grown = np.zeros((n_old + n_new, n_old + n_new))
        grown[:n_old, :n_old] = self._chol
        grown[n_old:, :n_old] = a.T
        grown[n_old:, n_old:] = ls
        self._chol = grown
        self._white = np.concatenate([self._white, eps])
        self._latent = np.concatenate([self._latent, z])
        self._feats.extend(feats_new)
        self._mu = np.concatenate([self._mu, mu_new])
        self.table.append([i.signature for i in fresh], (z > 0).astype(np.uint8),
                          marginals)

    def _stable_cholesky(self, mat: np.ndarray) -> np.ndarray:
        jitter = self.jitter
        eye = np.eye(len(mat))
        while True:
            try:
                return np.linalg.cholesky(mat + (jitter - self.jitter) * eye)
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > self.max_jitter:
                    raise NumericalError(
                        "kernel extension lost positive definiteness "
                        f"(jitter escalated past {self.max_jitter})"
                    ) from None

    def sample_matrix(self, infos: Sequence[ReactionInfo],
                      max_chunk: int = 2048) -> None:
        """One-shot batch sampling for analysis-time matrices.

        Equivalent in distribution to incremental extension; latents are not
        retained, and scenario columns are drawn in chunks to bound memory.
        """
        fresh = _deduplicate_unseen(self.table, infos)
        if not fresh:
            return
        if len(self.table):
            self.extend(infos)  # already partially extended: stay incremental
            return
        feats = [i.features() for i in fresh]
        marginals = np.array([self.marginal(i) for i in fresh])
        mu = _latent_mean(marginals)
        n = len(fresh)
        kmat = np.empty((n, n))
        for i in range(n):
            for j in range(i + 1):
                kmat[i, j] = kmat[j, i] = self.kernel(feats[i], feats[j])
        kmat[np.diag_indices(n)] += self.jitter
        try:
            chol = np.linalg.cholesky(kmat)
        except np.linalg.LinAlgError:
            chol = self._stable_cholesky(kmat)
        rows = np.empty((n, self.k), dtype=np.uint8)
        rngs = [substream(self.seed, "gp-feasibility", i.signature) for i in fresh]
        for start in range(0, self.k, max_chunk):
            stop = min(start + max_chunk, self.k)
            eps = np.stack([r.standard_normal(stop - start) for r in rngs])
            rows[:, start:stop] = (mu[:, None] + chol @ eps) > 0
        self.table.append([i.signature for i in fresh], rows, marginals)


def _latent_mean(marginals: np.ndarray) -> np.ndarray:
    """Quantile-matched latent means: P[N(mu,1) > 0] equals the marginal."""
    clipped = np.clip(marginals, 1e-12, 1 - 1e-12)
    mu = ndtri(clipped)
    mu[marginals <= 0.0] = -np.inf
    mu[marginals >= 1.0] = np.inf
    return mu


class AssignmentBuyability:
    """Correlated buyability over literal molecules of a truth assignment.

    Each scenario draws one assignment of ``num_vars`` boolean variables;
    molecule ``x{i}`` is buyable iff variable i is true and ``!x{i}`` iff it
    is false, so exactly one of the pair is buyable per scenario.  All other
    molecules are never buyable.
    """

    def __init__(self, num_vars: int, k: int, seed: int = 0,
                 assignments: Optional[np.ndarray] = None):
        self.num_vars = num_vars
        self.table = ScenarioTable(k)
        if assignments is None:
            rng = substream(seed, "sat-assignments")
            assignments = (rng.random((num_vars, k)) < 0.5).astype(np.uint8)
        if assignments.shape != (num_vars, k):
            raise InvalidInputError("assignment matrix has the wrong shape")
        self.assignments = assignments

    @classmethod
    def enumerate(cls, num_vars: int) -> "AssignmentBuyability":
        """One scenario column per possible assignment (k = 2**num_vars)."""
        k = 2 ** num_vars
        cols = np.arange(k)
        assignments = ((cols[None, :] >> np.arange(num_vars)[:, None]) & 1).astype(np.uint8)
        return cls(num_vars, k, assignments=assignments)

    @property
    def k(self) -> int:
        return self.table.k

    def _row_and_marginal(self, molecule: str) -> tuple[np.ndarray, float]:
        name = molecule[1:] if molecule.startswith("!") else molecule
        if name.startswith("x") and name[1:].isdigit():
            i = int(name[1:]) - 1
            if 0 <= i < self.num_vars:
                row = self.assignments[i]
                if molecule.startswith("!"):
                    row = 1 - row
                return row.astype(np.uint8), 0.5
        return np.zeros(self.table.k, dtype=np.uint8), 0.0

    def marginal(self, info: MoleculeInfo) -> float:
        return self._row_and_marginal(info.molecule)[1]

    def extend(self, infos: Sequence[MoleculeInfo]) -> None:
        fresh = _deduplicate_unseen(self.table, infos)
        if not fresh:
            return
        rows = np.empty((len(fresh), self.table.k), dtype=np.uint8)
        marginals = np.empty(len(fresh))
        for i, info in enumerate(fresh):
            rows[i], marginals[i] = self._row_and_marginal(info.molecule)
        self.table.append([i.signature for i in fresh], rows, marginals)

    def sample_matrix(self, infos: Sequence[MoleculeInfo]) -> None:
        self.extend(infos)


# ---------------------------------------------------------------------------
# per-graph binding


class ScenarioMatrix:
    """Scenario outcomes aligned to the nodes of one search graph.

    Reaction rows hold feasibility outcomes, molecule rows buyability
    outcomes.  The per-node arrays are gathered views over the content
    tables, grown as the graph grows; existing rows never change.
    """

    def __init__(self, graph: AndOrGraph, feasibility, buyability):
        if feasibility.k != buyability.k:
            raise InvalidInputError("feasibility and buyability must share k")
        self.graph = graph
        self.feasibility = feasibility
        self.buyability = buyability
        self.k = feasibility.k
        self.words = _packed_words(self.k)
        self._n = 0
        self._out64 = np.zeros((0, self.k))
        self._packed = np.zeros((0, self.words), dtype=np.uint64)
        self._marginal = np.zeros((0,))
        self.extend()

    @staticmethod
    def node_info(graph: AndOrGraph, nid: int) -> Info:
        node = graph.nodes[nid]
        if node.kind == MOLECULE:
            return MoleculeInfo(node.molecule, node.purchase_tier)
        return ReactionInfo(
            product=graph.nodes[node.product].molecule,
            reactants=tuple(graph.nodes[c].molecule for c in node.reactants),
            rank=node.rank,
            score=node.score,
        )

    def extend(self, one_shot: bool = False) -> None:
        """Bind any nodes added to the graph since the last call."""
        n = len(self.graph)
        if n == self._n:
            return
        new_ids = range(self._n, n)
        infos = [self.node_info(self.graph, nid) for nid in new_ids]
        rxn_infos = [i for i in infos if isinstance(i, ReactionInfo)]
        mol_infos = [i for i in infos if isinstance(i, MoleculeInfo)]
        if one_shot:
            self.feasibility.sample_matrix(rxn_infos)
            self.buyability.sample_matrix(mol_infos)
        else:
            self.feasibility.extend(rxn_infos)
            self.buyability.extend(mol_infos)

        out64 = np.empty((len(infos), self.k))
        packed = np.empty((len(infos), self.words), dtype=np.uint64)
        marginal = np.empty(len(infos))
        for i, info in enumerate(infos):
            table = (self.feasibility.table if isinstance(info, ReactionInfo)
                     else self.buyability.table)
            row = table.row(info.signature)
            out64[i] = table.outcomes[row]
            packed[i] = table.packed[row]
            marginal[i] = table.marginals[row]
        self._out64 = np.concatenate([self._out64, out64])
        self._packed = np.concatenate([self._packed, packed])
        self._marginal = np.concatenate([self._marginal, marginal])
        self._n = n

    def __len__(self) -> int:
        return self._n

    @property
    def outcomes(self) -> np.ndarray:
        """(n, k) float64; b at molecule rows, f at reaction rows."""
        return self._out64

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def marginals(self) -> np.ndarray:
        return self._marginal

    def scenario(self, j: int) -> np.ndarray:
        """Single scenario column as (n,) uint8."""
        if not 0 <= j < self.k:
            raise InvalidInputError(f"scenario index {j} outside 0..{self.k - 1}")
        return self._out64[:, j].astype(np.uint8)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelsConfig:
    feasibility_kind: str = "constant"
    feasibility_p: float = 0.5
    buyability_kind: str = "binary"
    k: int = 256
    seed: int = 0

    KINDS = ("constant", "rank", "gp-constant", "gp-rank")

    def __post_init__(self):
        if self.feasibility_kind not in self.KINDS:
            raise InvalidInputError(f"unknown feasibility kind {self.feasibility_kind!r}")
        if self.buyability_kind not in ("binary", "stochastic"):
            raise InvalidInputError(f"unknown buyability kind {self.buyability_kind!r}")
        constant_marginal(self.feasibility_p)
        if self.k < 1:
            raise InvalidInputError("k must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelsConfig":
        feas = doc.get("feasibility", {})
        buy = doc.get("buyability", {})
        return cls(
            feasibility_kind=feas.get("kind", "constant"),
            feasibility_p=feas.get("p", 0.5),
            buyability_kind=buy.get("kind", "binary"),
            k=doc.get("k", 256),
            seed=doc.get("seed", 0),
        )

    def to_dict(self) -> dict:
        return {
            "feasibility": {"kind": self.feasibility_kind, "p": self.feasibility_p},
            "buyability": {"kind": self.buyability_kind},
            "k": self.k,
            "seed": self.seed,
        }


def build_models(config: ModelsConfig, k: Optional[int] = None,
                 seed: Optional[int] = None):
    """Instantiate (feasibility, buyability) from a configuration block."""
    k = config.k if k is None else k
    seed = config.seed if seed is None else seed
    if config.feasibility_kind in ("constant", "gp-constant"):
        marginal_fn = lambda info: constant_marginal(config.feasibility_p)  # noqa: E731
    else:
        marginal_fn = lambda info: rank_marginal(info.rank)  # noqa: E731
    if config.feasibility_kind.startswith("gp-"):
        feas = LatentGPFeasibility(marginal_fn, k=k, seed=seed)
    else:
        feas = IndependentFeasibility(marginal_fn, k=k, seed=seed)
    buy = IndependentBuyability(config.buyability_kind, k=k, seed=seed)
    return feas, buy
