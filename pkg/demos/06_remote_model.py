"""Drive a search through the wire protocol instead of an in-process model.

The client speaks line-delimited JSON to any conforming server.  This demo
spawns the bundled reference server (modelserver/, built with `npm run
build`) when available and falls back to an in-process rule engine behind a
tiny Python stdio server otherwise, then runs the greedy planner against it.
"""

import json
import sys
import tempfile
import textwrap
from pathlib import Path

from retrofallback.client import RemoteBackwardModel
from retrofallback.heuristics import OptimisticHeuristic
from retrofallback.planner import run_retro_fallback
from retrofallback.uncertainty import IndependentBuyability, IndependentFeasibility

RULES = {"rules": [
    {"lhs": "abcd", "rhs": ["ab", "cd"], "score": 0.9},
    {"lhs": "abcd", "rhs": ["abc", "d"], "score": 0.7},
    {"lhs": "abc", "rhs": ["ab", "c"], "score": 0.8},
    {"lhs": "ab", "rhs": ["a", "b"], "score": 0.6},
    {"lhs": "cd", "rhs": ["c", "d"], "score": 0.5},
]}

PY_FALLBACK_SERVER = textwrap.dedent(
    """
    import json, sys
    rules = json.load(open(sys.argv[1]))["rules"]
    table = {}
    for rule in rules:
        table.setdefault(rule["lhs"], []).append(rule)
    for line in sys.stdin:
        req = json.loads(line)
        hits = sorted(table.get(req["molecule"], []), key=lambda r: -r["score"])
        out = {"id": req["id"],
               "reactions": [{"reactants": r["rhs"], "score": r["score"]} for r in hits]}
        sys.stdout.write(json.dumps(out) + "\\n")
        sys.stdout.flush()
    """
)


def main():
    rules_path = Path(tempfile.mkdtemp()) / "rules.json"
    rules_path.write_text(json.dumps(RULES))
    reference = Path(__file__).resolve().parent.parent / "modelserver" / "dist" / "cli.js"
    if reference.exists():
        argv = ["node", str(reference), "--rules", str(rules_path)]
        print(f"using the reference server: {' '.join(argv)}")
    else:
        argv = [sys.executable, "-c", PY_FALLBACK_SERVER, str(rules_path)]
        print("reference server not built; using the in-process fallback server")

    tiers = {m: 0 for m in "abcd"}
    with RemoteBackwardModel.spawn(argv, timeout=15) as model:
        feas = IndependentFeasibility(lambda info: 0.75, k=64, seed=0)
        buy = IndependentBuyability("binary", k=64, seed=0)
        result = run_retro_fallback("abcd", model, feas, buy,
                                    OptimisticHeuristic(), budget=10,
                                    tier_fn=tiers.get)
    print(f"termination: {result.termination} after {result.calls_used} model calls")
    for entry in result.trace:
        print(f"  iter {entry.iteration}: expanded {entry.selected!r}, "
              f"success estimate {entry.ssp:.3f}")
    print(f"final success estimate: {result.final_ssp:.3f}")


if __name__ == "__main__":
    main()
