"""Remote reaction-model client over the line-JSON wire protocol."""

import json
import sys
import textwrap

import pytest

from retrofallback.client import RemoteBackwardModel
from retrofallback.errors import ProtocolError, RejectedProposalError, RemoteTimeoutError

ECHO_SERVER = textwrap.dedent(
    """
    import json, sys
    for line in sys.stdin:
        req = json.loads(line)
        sys.stdout.write(json.dumps({"id": req["id"], "reactions": []}) + "\\n")
        sys.stdout.flush()
    """
)

RULE_SERVER = textwrap.dedent(
    """
    import json, sys
    rules = {"ab": [{"reactants": ["a", "b"], "score": 0.9}],
             "abc": [{"reactants": ["ab", "c"], "score": 0.8},
                      {"reactants": ["a", "bc"], "score": 0.6}]}
    for line in sys.stdin:
        req = json.loads(line)
        out = {"id": req["id"], "reactions": rules.get(req["molecule"], [])}
        sys.stdout.write(json.dumps(out) + "\\n")
        sys.stdout.flush()
    """
)


def spawn(script: str, timeout: float = 10.0) -> RemoteBackwardModel:
    return RemoteBackwardModel.spawn([sys.executable, "-c", script], timeout=timeout)


class TestProtocolBasics:
    def test_terminal_molecule_yields_empty_list(self):
        with spawn(ECHO_SERVER) as model:
            assert model.propose("zz") == []
            assert model.call_count == 1

    def test_ids_round_trip_across_requests(self):
        with spawn(ECHO_SERVER) as model:
            for _ in range(5):
                model.propose("m")  # an id mismatch would raise

    def test_rule_server_proposals_parse_in_order(self):
        with spawn(RULE_SERVER) as model:
            assert model.propose("abc") == [(("ab", "c"), 0.8), (("a", "bc"), 0.6)]
            assert model.propose("ab") == [(("a", "b"), 0.9)]


def respond_with(payload: str) -> str:
    return (
        "import sys\n"
        "sys.stdin.readline()\n"
        f"sys.stdout.write({payload!r} + '\\n')\n"
        "sys.stdout.flush()\n"
        "sys.stdin.read()\n"
    )


class TestValidation:
    def test_malformed_json_response(self):
        with spawn(respond_with("this is not json")) as model:
            with pytest.raises(ProtocolError):
                model.propose("m")

    def test_wrong_id_rejected(self):
        with spawn(respond_with('{"id": 99, "reactions": []}')) as model:
            with pytest.raises(ProtocolError):
                model.propose("m")

    def test_unordered_scores_rejected(self):
        bad = json.dumps({"id": 0, "reactions": [
            {"reactants": ["a"], "score": 0.3},
            {"reactants": ["b"], "score": 0.9},
        ]})
        with spawn(respond_with(bad)) as model:
            with pytest.raises(ProtocolError):
                model.propose("m")

    def test_score_out_of_range_rejected(self):
        bad = json.dumps({"id": 0, "reactions": [{"reactants": ["a"], "score": 2.0}]})
        with spawn(respond_with(bad)) as model:
            with pytest.raises(ProtocolError):
                model.propose("m")

    def test_product_among_reactants_rejected(self):
        bad = json.dumps({"id": 0, "reactions": [{"reactants": ["m"], "score": 0.5}]})
        with spawn(respond_with(bad)) as model:
            with pytest.raises(RejectedProposalError):
                model.propose("m")

    def test_server_error_object_raises(self):
        bad = json.dumps({"id": None, "error": "bad request"})
        with spawn(respond_with(bad)) as model:
            with pytest.raises(ProtocolError):
                model.propose("m")

    def test_timeout(self):
        sleepy = "import time, sys\nsys.stdin.readline()\ntime.sleep(5)\n"
        with spawn(sleepy, timeout=0.3) as model:
            with pytest.raises(RemoteTimeoutError):
                model.propose("m")

    def test_closed_server_raises_protocol_error(self):
        with spawn("pass") as model:
            with pytest.raises(ProtocolError):
                model.propose("m")


class TestAgainstInProcessEngine:
    def test_rule_server_matches_rule_based_model(self, tmp_path):
        from retrofallback.reactions import RuleBasedModel

        doc = {"rules": [
            {"lhs": "ab", "rhs": ["a", "b"], "score": 0.9},
            {"lhs": "abc", "rhs": ["ab", "c"], "score": 0.8},
            {"lhs": "abc", "rhs": ["a", "bc"], "score": 0.6},
        ]}
        path = tmp_path / "rules.json"
        path.write_text(json.dumps(doc))
        engine = RuleBasedModel.from_json(path)
        server = textwrap.dedent(
            f"""
            import json, sys
            doc = json.load(open({str(path)!r}))
            rules = {{}}
            for rule in doc["rules"]:
                rules.setdefault(rule["lhs"], []).append(rule)
            for line in sys.stdin:
                req = json.loads(line)
                hits = sorted(rules.get(req["molecule"], []),
                              key=lambda r: -r["score"])
                out = {{"id": req["id"], "reactions": [
                    {{"reactants": list(r["rhs"]), "score": r["score"]}} for r in hits
                ]}}
                sys.stdout.write(json.dumps(out) + "\\n")
                sys.stdout.flush()
            """
        )
        with spawn(server) as model:
            for molecule in ("ab", "abc", "zz"):
                assert model.propose(molecule) == engine.propose(molecule)
