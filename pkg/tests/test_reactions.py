"""Synthetic world, fingerprints, rule engine and the caching wrapper."""

import json

import numpy as np
import pytest

from retrofallback.errors import InvalidInputError, RejectedProposalError
from retrofallback.graph import new_graph
from retrofallback.reactions import (
    CachedModel,
    RuleBasedModel,
    SyntheticWorld,
    WorldConfig,
    fingerprint,
    reaction_fingerprints,
)


@pytest.fixture
def world():
    return SyntheticWorld(WorldConfig(seed=42))


class TestSyntheticWorld:
    def test_propose_is_deterministic(self, world):
        first = world.propose("abcd")
        second = world.propose("abcd")
        assert first == second
        other = SyntheticWorld(WorldConfig(seed=42))
        assert other.propose("abcd") == first

    def test_reactants_partition_and_never_echo_the_product(self, world):
        for reactants, _ in world.propose("abcd"):
            assert "abcd" not in reactants
            for r in reactants:
                assert r and set(r) <= set("abcdef")

    def test_branching_bounds_hold_over_a_corpus(self):
        world = SyntheticWorld(WorldConfig(seed=7, max_children=5, max_reactants=3))
        rng = np.random.default_rng(1)
        letters = list("abcdef")
        for _ in range(1000):
            mol = "".join(rng.choice(letters, size=int(rng.integers(1, 9))))
            proposals = world.propose(mol)
            assert len(proposals) <= 5
            for reactants, _ in proposals:
                assert 1 <= len(reactants) <= 3

    def test_scores_strictly_decreasing(self, world):
        for mol in ("abcdef", "fedcba", "aabbcc"):
            scores = [s for _, s in world.propose(mol)]
            assert all(a > b for a, b in zip(scores, scores[1:]))
            assert all(0.0 <= s <= 1.0 for s in scores)

    def test_symbols_outside_alphabet_rejected(self, world):
        with pytest.raises(InvalidInputError):
            world.propose("abcz")

    def test_short_molecules_can_dead_end(self):
        world = SyntheticWorld(WorldConfig(seed=3, dead_end_prob=0.5))
        short = [f"{a}{b}" for a in "abcdef" for b in "abcdef"]
        dead = sum(1 for mol in short if not world.propose(mol))
        assert 0 < dead < len(short)

    def test_single_letters_are_terminal(self, world):
        assert world.propose("a") == []

    def test_tiers_only_below_the_buyable_length(self, world):
        assert world.tier("a") in (0, 1, 2)
        assert world.tier("ab") in range(6)
        assert world.tier("abc") is None

    def test_difficulty_scales_with_length(self, world):
        assert world.difficulty("a") < world.difficulty("abcdefab")
        assert 1.0 <= world.difficulty("a") <= 10.0
        assert world.difficulty("a" * 50) == 10.0

    def test_random_targets_are_distinct_and_sized(self, world):
        targets = world.random_targets(20, (5, 7))
        assert len(set(targets)) == 20
        assert all(5 <= len(t) <= 7 for t in targets)

    def test_some_world_is_exhausted_quickly(self):
        # at least one of many seeds yields a finite graph well under the cap
        exhausted = 0
        for seed in range(100):
            world = SyntheticWorld(WorldConfig(seed=seed, max_children=3))
            target = world.random_targets(1, (4, 4))[0]
            g = new_graph(target)
            cached = CachedModel(world)
            expansions = 0
            while g.frontier() and expansions < 10_000:
                nid = min(g.frontier())
                g.expand(nid, cached.propose(g.nodes[nid].molecule))
                expansions += 1
            if not g.frontier():
                exhausted += 1
        assert exhausted >= 1


class TestFingerprints:
    def test_repeated_bigram_counts(self):
        assert fingerprint("aa") == {"aa": 1}
        assert fingerprint("aaa") == {"aa": 2}
        assert fingerprint("a") == {}

    def test_reaction_fingerprint_arithmetic(self):
        # fp("xxx") = {xx: 2}; fp("xx") = {xx: 1} twice as reactants
        combined, delta = reaction_fingerprints("xxx", ["xx", "xx"])
        assert combined == {"xx": 4}
        assert delta == {}  # |2 - 2| drops to nothing

    def test_identical_reactions_have_identical_fingerprints(self):
        a = reaction_fingerprints("abcd", ["ab", "cd"])
        b = reaction_fingerprints("abcd", ["ab", "cd"])
        assert a == b

    def test_delta_captures_changed_substructures(self):
        combined, delta = reaction_fingerprints("abc", ["ab"])
        assert combined == {"ab": 2, "bc": 1}
        assert delta == {"bc": 1}


class TestRuleBasedModel:
    def test_matching_rules_ordered_by_descending_score(self, tmp_path):
        doc = {"rules": [
            {"lhs": "ab", "rhs": ["a", "b"], "score": 0.5},
            {"lhs": "ab", "rhs": ["b"], "score": 0.9},
            {"lhs": "cd", "rhs": ["c", "d"], "score": 0.7},
        ]}
        path = tmp_path / "rules.json"
        path.write_text(json.dumps(doc))
        model = RuleBasedModel.from_json(path)
        assert model.propose("ab") == [(("b",), 0.9), (("a", "b"), 0.5)]
        assert model.propose("zz") == []

    def test_rule_with_product_among_reactants_rejected(self):
        from retrofallback.reactions import RewriteRule

        with pytest.raises(RejectedProposalError):
            RuleBasedModel([RewriteRule("ab", ("ab", "c"), 0.5)])

    def test_unreadable_rule_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(InvalidInputError):
            RuleBasedModel.from_json(path)

    def test_score_out_of_range_rejected(self):
        from retrofallback.reactions import RewriteRule

        with pytest.raises(InvalidInputError):
            RuleBasedModel([RewriteRule("ab", ("a",), 1.5)])


class TestCachedModel:
    def test_call_count_counts_unique_expansions_only(self, world):
        cached = CachedModel(world)
        cached.propose("abcd")
        cached.propose("abcd")
        cached.propose("abce")
        assert cached.call_count == 2
        assert cached.cache_hits == 1

    def test_cache_returns_identical_proposals(self, world):
        cached = CachedModel(world)
        assert cached.propose("abcd") is cached.propose("abcd")
