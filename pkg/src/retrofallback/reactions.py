"""Backward reaction models and molecule fingerprints.

Three model families implement the same ``propose`` contract (deterministic,
bounded branching, product never among reactants):

* :class:`SyntheticWorld` -- a seeded string-rewriting chemistry used for
  hermetic experiments.  Molecules are words over a small alphabet; backward
  proposals either split a word into substrings or rewrite one character,
  which creates shared intermediates, dead ends and occasional cycles.
* :class:`RuleBasedModel` -- a transparent exact-match rule table loaded from
  JSON; the reference semantics mirrored by external model servers.
* :class:`retrofallback.client.RemoteBackwardModel` -- wire-protocol client.

Fingerprints are character-bigram count vectors, the synthetic stand-in for
radius-1 circular substructure counts; they feed the reaction similarity
kernel used by the correlated feasibility model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InvalidInputError, RejectedProposalError

Proposal = tuple[tuple[str, ...], float]

#: Sparse count vector keyed by feature string.
Fingerprint = dict[str, int]


def stable_hash(*parts: Union[str, int]) -> int:
    """Platform-independent 64-bit hash used to derive RNG substreams."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def substream(seed: int, *parts: Union[str, int]) -> np.random.Generator:
    """Counter-based RNG stream keyed by ``(seed, parts...)``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stable_hash(*parts),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# fingerprints


def fingerprint(molecule: str) -> Fingerprint:
    """Character-bigram counts of a molecule string."""
    fp: Fingerprint = {}
    for i in range(len(molecule) - 1):
        bg = molecule[i : i + 2]
        fp[bg] = fp.get(bg, 0) + 1
    return fp


def _fp_sum(fps: Sequence[Fingerprint]) -> Fingerprint:
    out: Fingerprint = {}
    for fp in fps:
        for k, v in fp.items():
            out[k] = out.get(k, 0) + v
    return out


def reaction_fingerprints(product: str, reactants: Sequence[str]) -> tuple[Fingerprint, Fingerprint]:
    """(combined, delta) fingerprints of a reaction.

    ``combined`` sums the product and reactant fingerprints; ``delta`` is the
    elementwise absolute difference between the product fingerprint and the
    sum of the reactant fingerprints (zero entries are dropped).
    """
    fp_p = fingerprint(product)
    fp_r = _fp_sum([fingerprint(r) for r in reactants])
    combined = _fp_sum([fp_p, fp_r])
    delta: Fingerprint = {}
    for k in set(fp_p) | set(fp_r):
        d = abs(fp_p.get(k, 0) - fp_r.get(k, 0))
        if d:
            delta[k] = d
    return combined, delta


# ---------------------------------------------------------------------------
# synthetic world


@dataclass(frozen=True)
class WorldConfig:
    """Parameters of a seeded synthetic chemistry.

    The world is fully determined by ``seed`` plus these parameters.
    """

    seed: int
    alphabet: str = "abcdef"
    max_children: int = 10  # K: proposals per molecule
    max_reactants: int = 3  # L: reactants per proposal
    buyable_len: int = 3  # molecules shorter than this may carry a tier
    dead_end_prob: float = 0.3
    rewrite_prob: float = 0.25
    tier_weights_len1: tuple[float, ...] = (0.5, 0.3, 0.2, 0.0, 0.0, 0.0)
    tier_weights_len2: tuple[float, ...] = (0.0, 0.0, 0.3, 0.3, 0.2, 0.2)
    len_max: int = 12  # scaling constant of the synthetic difficulty score

    def __post_init__(self):
        if self.max_children < 1 or self.max_reactants < 1:
            raise InvalidInputError("max_children and max_reactants must be >= 1")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise InvalidInputError("alphabet must be nonempty without duplicates")


class SyntheticWorld:
    """Deterministic backward model over a string-rewriting chemistry."""

    def __init__(self, config: WorldConfig):
        self.config = config
        self.call_count = 0

    def _check(self, molecule: str) -> None:
        if not molecule:
            raise InvalidInputError("empty molecule string")
        bad = set(molecule) - set(self.config.alphabet)
        if bad:
            raise InvalidInputError(
                f"molecule {molecule!r} uses symbols outside the alphabet: {sorted(bad)}"
            )

    def propose(self, molecule: str) -> list[Proposal]:
        """Backward proposals for one molecule, deterministic under the seed."""
        self._check(molecule)
        self.call_count += 1
        cfg = self.config
        n = len(molecule)
        if n == 1:
            return []
        rng = substream(cfg.seed, "propose", molecule)
        if n < cfg.buyable_len and rng.random() < cfg.dead_end_prob:
            return []
        n_props = int(rng.integers(1, cfg.max_children + 1))
        seen: set[tuple[str, ...]] = set()
        reactant_lists: list[tuple[str, ...]] = []
        for _ in range(n_props):
            if n >= 2 and rng.random() < cfg.rewrite_prob:
                reactants = (self._rewrite(molecule, rng),)
            else:
                reactants = self._split(molecule, rng)
            if molecule in reactants:
                continue
            key = tuple(sorted(reactants))
            if key in seen:
                continue
            seen.add(key)
            reactant_lists.append(reactants)
        scores = np.sort(rng.random(len(reactant_lists)))[::-1]
        for i in range(1, len(scores)):
            if scores[i] >= scores[i - 1]:  # enforce strictly decreasing
                scores[i] = np.nextafter(scores[i - 1], 0.0)
        return [(rl, float(s)) for rl, s in zip(reactant_lists, scores)]

    def _split(self, molecule: str, rng: np.random.Generator) -> tuple[str, ...]:
        n = len(molecule)
        max_cuts = min(self.config.max_reactants - 1, n - 1)
        if max_cuts < 1:
            return (self._rewrite(molecule, rng),)
        cuts = int(rng.integers(1, max_cuts + 1))
        pos = np.sort(rng.choice(np.arange(1, n), size=cuts, replace=False))
        parts = []
        prev = 0
        for p in list(pos) + [n]:
            parts.append(molecule[prev:p])
            prev = p
        # collapse duplicate fragments: reactant lists are edge sets
        out = []
        for p in parts:
            if p not in out:
                out.append(p)
        return tuple(out)

    def _rewrite(self, molecule: str, rng: np.random.Generator) -> str:
        pos = int(rng.integers(0, len(molecule)))
        old = molecule[pos]
        others = [c for c in self.config.alphabet if c != old]
        new = others[int(rng.integers(0, len(others)))]
        return molecule[:pos] + new + molecule[pos + 1 :]

    def tier(self, molecule: str) -> Optional[int]:
        """Purchase tier of a molecule, or None for unpurchasable ones."""
        self._check(molecule)
        cfg = self.config
        n = len(molecule)
        if n >= cfg.buyable_len:
            return None
        weights = cfg.tier_weights_len1 if n == 1 else cfg.tier_weights_len2
        rng = substream(cfg.seed, "tier", molecule)
        return int(rng.choice(6, p=np.asarray(weights) / sum(weights)))

    def difficulty(self, molecule: str) -> float:
        """Synthetic difficulty score in [1, 10]; longer molecules are harder."""
        raw = 1.0 + 9.0 * len(molecule) / self.config.len_max
        return float(min(10.0, max(1.0, raw)))

    def random_targets(self, count: int, length_range: tuple[int, int] = (6, 8)) -> list[str]:
        """Distinct unpurchasable target molecules drawn from the world seed."""
        lo, hi = length_range
        if lo < self.config.buyable_len:
            raise InvalidInputError("targets must be at least buyable_len long")
        rng = substream(self.config.seed, "targets")
        letters = list(self.config.alphabet)
        out: list[str] = []
        seen = set()
        while len(out) < count:
            n = int(rng.integers(lo, hi + 1))
            mol = "".join(rng.choice(letters, size=n))
            if mol not in seen:
                seen.add(mol)
                out.append(mol)
        return out


# ---------------------------------------------------------------------------
# rule-based reference model


@dataclass(frozen=True)
class RewriteRule:
    lhs: str
    rhs: tuple[str, ...]
    score: float


class RuleBasedModel:
    """Exact-match rewrite rules; the in-process reference rule engine.

    A rule fires when its ``lhs`` equals the queried molecule.  Matching
    rules are returned ordered by descending score (ties keep file order),
    exactly the semantics an external reference server must reproduce.
    """

    def __init__(self, rules: Sequence[RewriteRule]):
        self.rules = list(rules)
        self.call_count = 0
        by_lhs: dict[str, list[RewriteRule]] = {}
        for rule in self.rules:
            _validate_rule(rule)
            by_lhs.setdefault(rule.lhs, []).append(rule)
        self._by_lhs = {
            lhs: sorted(rs, key=lambda r: -r.score) for lhs, rs in by_lhs.items()
        }

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "RuleBasedModel":
        try:
            doc = json.loads(Path(path).read_text("utf8"))
            rules = [
                RewriteRule(lhs=r["lhs"], rhs=tuple(r["rhs"]), score=float(r["score"]))
                for r in doc["rules"]
            ]
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"unreadable rule file {path}: {exc}") from exc
        return cls(rules)

    def propose(self, molecule: str) -> list[Proposal]:
        if not molecule:
            raise InvalidInputError("empty molecule string")
        self.call_count += 1
        return [(r.rhs, r.score) for r in self._by_lhs.get(molecule, [])]


def _validate_rule(rule: RewriteRule) -> None:
    if not rule.lhs or not rule.rhs or any(not x for x in rule.rhs):
        raise InvalidInputError(f"rule {rule} has empty molecules")
    if rule.lhs in rule.rhs:
        raise RejectedProposalError(f"rule {rule} lists its product among the reactants")
    if not 0.0 <= rule.score <= 1.0:
        raise InvalidInputError(f"rule score {rule.score} outside [0, 1]")


# ---------------------------------------------------------------------------
# caching wrapper


class CachedModel:
    """Memoizes propose() by molecule string.

    ``call_count`` of the wrapped model counts unique expansions only; cache
    hits are free, which is what search budgets account against.
    """

    def __init__(self, model):
        self.model = model
        self._cache: dict[str, list[Proposal]] = {}
        self.cache_hits = 0

    @property
    def call_count(self) -> int:
        return self.model.call_count

    def is_cached(self, molecule: str) -> bool:
        return molecule in self._cache

    def propose(self, molecule: str) -> list[Proposal]:
        if molecule in self._cache:
            self.cache_hits += 1
            return self._cache[molecule]
        out = self.model.propose(molecule)
        self._cache[molecule] = out
        return out
