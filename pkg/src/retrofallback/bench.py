"""Experiment runner: seeded multi-target campaigns, metrics and a CLI.

Every run is reproducible from its configuration: the synthetic world, the
targets, the search-time scenario matrix and the analysis matrix all derive
from the campaign seed through keyed substreams.  Analysis uses a fresh
scenario matrix (default ten thousand scenarios) drawn from a stream
disjoint from the search matrices, and the same world seed feeds every
algorithm so comparisons pair by (target, trial).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import (
    CapacityError,
    ConfigError,
    InvalidInputError,
    MigrationError,
    SerializationError,
)
from .graph import AndOrGraph
from .heuristics import Heuristic, by_name
from .planner import SearchResult, run_retro_fallback
from .propagation import IncrementalSuccess
from .reactions import CachedModel, SyntheticWorld, WorldConfig, stable_hash
from .rivals import replay_expansions, run_bfs, run_mcts, run_retro_star
from .success import best_plan_marginal, estimate_ssp, plan_success_all, shortest_plan_length
from .uncertainty import ModelsConfig, ScenarioMatrix, build_models
from .graph import new_graph

log = logging.getLogger("retrofallback.bench")

SCHEMA_VERSION = 1

ALGORITHMS = ("retro-fallback", "bfs", "retro-star", "mcts")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    algorithm: str = "retro-fallback"
    heuristic: str = "difficulty"
    feasibility: dict = field(default_factory=lambda: {"kind": "constant", "p": 0.5})
    buyability: dict = field(default_factory=lambda: {"kind": "binary"})
    k: int = 256
    budget: int = 200
    analysis_k: int = 10_000
    trials: int = 3
    num_targets: int = 100
    targets: Optional[tuple[str, ...]] = None
    target_lengths: tuple[int, int] = (6, 8)
    world: dict = field(default_factory=dict)
    dump_graphs: bool = False  # attach the final graph dump to each run

    def validate(self) -> None:
        problems = []
        if self.algorithm not in ALGORITHMS:
            problems.append(f"algorithm: unknown value {self.algorithm!r}")
        if self.heuristic not in ("optimistic", "difficulty"):
            problems.append(f"heuristic: unknown value {self.heuristic!r}")
        if self.k < 1:
            problems.append("k: must be >= 1")
        if self.budget < 1:
            problems.append("budget: must be >= 1")
        if self.analysis_k < self.k:
            problems.append("analysis_k: must be >= k")
        if self.trials < 1:
            problems.append("trials: must be >= 1")
        if self.targets is None and self.num_targets < 1:
            problems.append("num_targets: must be >= 1 when targets are generated")
        if self.targets is not None and not self.targets:
            problems.append("targets: must be nonempty when given")
        fk = self.feasibility.get("kind", "constant")
        if fk not in ModelsConfig.KINDS:
            problems.append(f"feasibility.kind: unknown value {fk!r}")
        p = self.feasibility.get("p", 0.5)
        if not isinstance(p, (int, float)) or not 0 <= p <= 1:
            problems.append(f"feasibility.p: {p!r} outside [0, 1]")
        bk = self.buyability.get("kind", "binary")
        if bk not in ("binary", "stochastic"):
            problems.append(f"buyability.kind: unknown value {bk!r}")
        lo, hi = self.target_lengths
        if lo > hi or lo < 1:
            problems.append("target_lengths: must satisfy 1 <= lo <= hi")
        try:
            self.world_config()
        except InvalidInputError as exc:
            problems.append(f"world: {exc}")
        if problems:
            raise ConfigError(problems)

    def world_config(self) -> WorldConfig:
        fields = dict(self.world)
        fields.setdefault("seed", stable_hash(self.seed, "world"))
        fields["tier_weights_len1"] = tuple(fields.get("tier_weights_len1",
                                                       WorldConfig.tier_weights_len1))
        fields["tier_weights_len2"] = tuple(fields.get("tier_weights_len2",
                                                       WorldConfig.tier_weights_len2))
        return WorldConfig(**fields)

    def models_config(self, k: int, seed: int) -> ModelsConfig:
        return ModelsConfig(
            feasibility_kind=self.feasibility.get("kind", "constant"),
            feasibility_p=self.feasibility.get("p", 0.5),
            buyability_kind=self.buyability.get("kind", "binary"),
            k=k, seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "algorithm": self.algorithm,
            "heuristic": self.heuristic,
            "feasibility": dict(self.feasibility),
            "buyability": dict(self.buyability),
            "k": self.k,
            "budget": self.budget,
            "analysis_k": self.analysis_k,
            "trials": self.trials,
            "num_targets": self.num_targets,
            "targets": list(self.targets) if self.targets is not None else None,
            "target_lengths": list(self.target_lengths),
            "world": dict(self.world),
            "dump_graphs": self.dump_graphs,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in sorted(unknown)])
        kwargs = dict(doc)
        if kwargs.get("targets") is not None:
            kwargs["targets"] = tuple(kwargs["targets"])
        if "target_lengths" in kwargs:
            kwargs["target_lengths"] = tuple(kwargs["target_lengths"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _heuristic_for(config: ExperimentConfig, world: SyntheticWorld) -> Heuristic:
    return by_name(config.heuristic, scorer=world.difficulty)


def run_single(config: ExperimentConfig, target: str, target_index: int,
               trial: int) -> dict:
    """One (target, trial) run of the configured algorithm, with analysis."""
    world = SyntheticWorld(config.world_config())
    model = CachedModel(world)
    heuristic = _heuristic_for(config, world)
    search_seed = stable_hash(config.seed, "search", target_index, trial)
    t0 = time.perf_counter()
    result = _dispatch(config, target, world, model, heuristic, search_seed)
    wall_ms = (time.perf_counter() - t0) * 1e3
    analysis_seed = stable_hash(config.seed, "analysis", target_index, trial)
    analysis = analyze_run(result, target, config, analysis_seed, world)
    record = {
        "target": target,
        "trial": trial,
        "algorithm": config.algorithm,
        "termination": result.termination,
        "calls_used": result.calls_used,
        "trace": result.trace_json(),
        "search_ssp": result.final_ssp,
        "curve": analysis["curve"],
        "metrics": analysis["metrics"],
        "wall_ms": round(wall_ms, 3),
    }
    if config.dump_graphs:
        record["graph"] = analysis["graph"].to_jsonl()
    if result.error:
        record["error"] = result.error
    return record


def _dispatch(config: ExperimentConfig, target: str, world: SyntheticWorld,
              model: CachedModel, heuristic: Heuristic,
              search_seed: int) -> SearchResult:
    models_cfg = config.models_config(k=config.k, seed=search_seed)
    feas, buy = build_models(models_cfg)
    if config.algorithm == "retro-fallback":
        return run_retro_fallback(target, model, feas, buy, heuristic,
                                  config.budget, tier_fn=world.tier)
    if config.algorithm == "bfs":
        return run_bfs(target, model, config.budget, tier_fn=world.tier)
    if config.algorithm == "retro-star":
        return run_retro_star(target, model, feas, buy, heuristic,
                              config.budget, tier_fn=world.tier)
    if config.algorithm == "mcts":
        return run_mcts(target, model, feas, buy, heuristic, config.budget,
                        tier_fn=world.tier)
    raise ConfigError([f"algorithm: unknown value {config.algorithm!r}"])


def analyze_run(result: SearchResult, target: str, config: ExperimentConfig,
                analysis_seed: int, world: SyntheticWorld) -> dict:
    """Replay the expansion log and score it on a fresh analysis matrix."""
    graph = replay_expansions(target, result.expansion_log, tier_fn=world.tier)
    models_cfg = config.models_config(k=config.analysis_k, seed=analysis_seed)
    feas, buy = build_models(models_cfg)
    matrix = ScenarioMatrix(graph, feas, buy)
    metrics = compute_metrics(graph, matrix)
    curve = _replay_curve(target, result.expansion_log, matrix, world)
    if curve:
        assert abs(curve[-1][1] - metrics["ssp"]) < 1e-12
    return {"metrics": metrics, "curve": curve, "graph": graph}


def _replay_curve(target: str, expansion_log, matrix: ScenarioMatrix,
                  world: SyntheticWorld) -> list[list[float]]:
    graph = new_graph(target, mode="graph", tier_fn=world.tier)
    inc = IncrementalSuccess(graph, matrix.words)
    inc.extend(matrix.packed[: len(graph)])
    curve: list[list[float]] = []
    for i, (molecule, proposals) in enumerate(expansion_log):
        try:
            nid = graph.find_molecule(molecule)
        except KeyError:
            continue
        if graph.is_frontier(nid):
            graph.expand(nid, proposals)
        inc.extend(matrix.packed[: len(graph)])
        curve.append([i + 1, inc.root_success_count() / matrix.k])
    return curve


def compute_metrics(graph: AndOrGraph, matrix: ScenarioMatrix) -> dict:
    """Final-graph metrics under one analysis matrix.

    Reports the success estimate of the whole plan set, the empirical
    success of the single best plan under independent marginals, the
    shortest plan length among plans with positive marginal probability,
    whether any scenario succeeds, and the node count.
    """
    ssp = estimate_ssp(graph, matrix)
    best = best_plan_marginal(graph, matrix.marginals)
    if best is None:
        best_success = 0.0
    else:
        best_success = float(plan_success_all(graph, best, matrix).mean())
    assert best_success <= ssp + 1e-12, "a single plan cannot beat the plan set"
    return {
        "ssp": ssp,
        "best_plan_success": best_success,
        "shortest_plan_length": shortest_plan_length(graph, matrix.marginals),
        "solved": ssp > 0.0,
        "nodes": len(graph),
    }


@dataclass
class ExperimentRecord:
    config: ExperimentConfig
    runs: list[dict]
    summary: dict
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "config": self.config.to_dict(),
            "runs": self.runs,
            "summary": self.summary,
            "wall_ms": round(self.wall_ms, 3),
        }


def campaign_targets(config: ExperimentConfig) -> list[str]:
    if config.targets is not None:
        return list(config.targets)
    world = SyntheticWorld(config.world_config())
    return world.random_targets(config.num_targets, config.target_lengths)


def _run_job(args: tuple) -> dict:
    config_doc, target, target_index, trial = args
    config = ExperimentConfig.from_dict(config_doc)
    return run_single(config, target, target_index, trial)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentRecord:
    """Execute trials x targets and aggregate summary statistics."""
    config.validate()
    targets = campaign_targets(config)
    jobs_spec = [
        (config.to_dict(), target, ti, trial)
        for ti, target in enumerate(targets)
        for trial in range(config.trials)
    ]
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_job, jobs_spec, chunksize=1))
    else:
        runs = [_run_job(spec) for spec in jobs_spec]
    wall_ms = (time.perf_counter() - t0) * 1e3
    return ExperimentRecord(config=config, runs=runs,
                            summary=summarize_runs(runs), wall_ms=wall_ms)


def summarize_runs(runs: Sequence[dict]) -> dict:
    ssp = np.array([r["metrics"]["ssp"] for r in runs])
    best = np.array([r["metrics"]["best_plan_success"] for r in runs])
    solved = np.array([r["metrics"]["solved"] for r in runs])
    return {
        "runs": len(runs),
        "mean_ssp": float(ssp.mean()),
        "std_ssp": float(ssp.std(ddof=1)) if len(runs) > 1 else 0.0,
        "stderr_ssp": (float(ssp.std(ddof=1) / math.sqrt(len(runs)))
                       if len(runs) > 1 else 0.0),
        "mean_best_plan_success": float(best.mean()),
        "fraction_solved": float(solved.mean()),
        "mean_calls": float(np.mean([r["calls_used"] for r in runs])),
        "mean_nodes": float(np.mean([r["metrics"]["nodes"] for r in runs])),
    }


# ---------------------------------------------------------------------------
# persistence


def emit_results(record: ExperimentRecord, path: Path) -> None:
    """Write record JSON (stable key order) plus a companion curve CSV."""
    path = Path(path)
    doc = record.to_dict() if isinstance(record, ExperimentRecord) else record
    try:
        text = json.dumps(doc, sort_keys=True, allow_nan=False, indent=1)
    except ValueError as exc:
        raise SerializationError(f"record is not serializable: {exc}") from exc
    path.write_text(text + "\n", "utf8")
    with path.with_suffix(".csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "budget_used", "ssp"])
        for run in doc["runs"]:
            for i, (calls, ssp) in enumerate(run["curve"], start=1):
                writer.writerow([i, calls, ssp])


def load_results(path: Path) -> dict:
    doc = json.loads(Path(path).read_text("utf8"))
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise MigrationError(
            f"record {path} has schema version {version}, expected {SCHEMA_VERSION}"
        )
    return doc


def trace_signature(record: dict) -> list:
    """Deterministic view of a record's runs (wall-clock fields dropped)."""
    out = []
    for run in record["runs"] if "runs" in record else [record]:
        trace = [
            {k: v for k, v in entry.items() if k != "elapsed_ms"}
            for entry in run["trace"]
        ]
        out.append({
            "target": run["target"],
            "trial": run["trial"],
            "termination": run["termination"],
            "calls_used": run["calls_used"],
            "trace": trace,
            "curve": run["curve"],
            "metrics": run["metrics"],
        })
    return out


# ---------------------------------------------------------------------------
# scaling analysis


def scaling_report(records: Sequence[dict]) -> list[dict]:
    """Log-log least-squares fit of run wall time against final node count.

    Informational: reports the fitted exponent per (feasibility kind,
    heuristic) cell.  Requires at least five runs spanning a decade of node
    counts.
    """
    points: dict[tuple[str, str], list[tuple[float, float]]] = {}
    total = 0
    all_nodes = []
    for doc in records:
        cfg = doc["config"]
        cell = (cfg["feasibility"].get("kind", "constant"), cfg["heuristic"])
        for run in doc["runs"]:
            nodes = run["metrics"]["nodes"]
            wall = run.get("wall_ms", 0.0)
            if nodes > 1 and wall > 0.0:
                points.setdefault(cell, []).append((nodes, wall))
                all_nodes.append(nodes)
                total += 1
    if total < 5:
        raise CapacityError(f"need at least 5 runs to fit scaling, got {total}")
    if max(all_nodes) < 10 * min(all_nodes):
        raise CapacityError("runs must span at least one decade of node counts")
    report = []
    for (model, heuristic), pts in sorted(points.items()):
        if len(pts) < 2:
            continue
        logn = np.log10([p[0] for p in pts])
        logt = np.log10([p[1] for p in pts])
        exponent, intercept = np.polyfit(logn, logt, 1)
        report.append({
            "model": model,
            "heuristic": heuristic,
            "exponent": float(exponent),
            "intercept": float(intercept),
            "points": len(pts),
        })
    return report


# ---------------------------------------------------------------------------
# CLI


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--algorithm", choices=ALGORITHMS)
    parser.add_argument("--heuristic", choices=("optimistic", "difficulty"))
    parser.add_argument("--k", type=int)
    parser.add_argument("--budget", type=int)


def _apply_overrides(config: ExperimentConfig,
                     args: argparse.Namespace) -> ExperimentConfig:
    updates = {}
    for name in ("seed", "algorithm", "heuristic", "k", "budget"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if updates:
        config = replace(config, **updates)
        config.validate()
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bench", description="seeded retrosynthesis search experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a campaign from a config file")
    p_run.add_argument("--config", type=Path, required=True)
    p_run.add_argument("--out", type=Path, required=True)
    _add_overrides(p_run)

    p_metrics = sub.add_parser("metrics", help="score a serialized graph")
    p_metrics.add_argument("--graph", type=Path, required=True)
    p_metrics.add_argument("--config", type=Path)
    p_metrics.add_argument("--analysis-k", type=int, default=10_000)
    p_metrics.add_argument("--seed", type=int, default=0)

    p_scaling = sub.add_parser("scaling", help="fit runtime scaling over records")
    p_scaling.add_argument("--in", dest="indir", type=Path, required=True)

    p_plot = sub.add_parser("plot-data", help="merge record curves into a CSV")
    p_plot.add_argument("--in", dest="indir", type=Path, required=True)
    p_plot.add_argument("--csv", type=Path, required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=os.environ.get("RETROFALLBACK_LOG", "WARNING").upper(),
        format="%(name)s %(levelname)s %(message)s",
    )

    if args.command == "run":
        config = ExperimentConfig.from_dict(json.loads(args.config.read_text("utf8")))
        config = _apply_overrides(config, args)
        record = run_experiment(config, jobs=args.jobs)
        args.out.mkdir(parents=True, exist_ok=True)
        out_path = args.out / "record.json"
        emit_results(record, out_path)
        if config.dump_graphs:
            graph_dir = args.out / "graphs"
            graph_dir.mkdir(exist_ok=True)
            for i, run in enumerate(record.runs):
                name = f"{i:04d}_{run['target']}_t{run['trial']}.jsonl"
                (graph_dir / name).write_text(run["graph"], "utf8")
        print(json.dumps(record.summary, indent=1, sort_keys=True))
        print(f"wrote {out_path}")
        return 0

    if args.command == "metrics":
        text = args.graph.read_text("utf8")
        graph = AndOrGraph.from_jsonl(text)
        if args.config:
            doc = json.loads(args.config.read_text("utf8"))
            models_cfg = ModelsConfig.from_dict(doc)
            models_cfg = ModelsConfig(
                feasibility_kind=models_cfg.feasibility_kind,
                feasibility_p=models_cfg.feasibility_p,
                buyability_kind=models_cfg.buyability_kind,
                k=args.analysis_k, seed=args.seed,
            )
        else:
            models_cfg = ModelsConfig(k=args.analysis_k, seed=args.seed)
        feas, buy = build_models(models_cfg)
        matrix = ScenarioMatrix(graph, feas, buy)
        print(json.dumps(compute_metrics(graph, matrix), indent=1, sort_keys=True))
        return 0

    if args.command == "scaling":
        records = [load_results(p) for p in sorted(args.indir.glob("*.json"))]
        try:
            report = scaling_report(records)
        except CapacityError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(report, indent=1, sort_keys=True))
        return 0

    if args.command == "plot-data":
        rows = []
        for path in sorted(args.indir.glob("*.json")):
            doc = load_results(path)
            algorithm = doc["config"]["algorithm"]
            for run in doc["runs"]:
                for i, (calls, ssp) in enumerate(run["curve"], start=1):
                    rows.append([algorithm, run["target"], run["trial"], i, calls, ssp])
        with args.csv.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "target", "trial", "iteration",
                             "budget_used", "ssp"])
            writer.writerows(rows)
        print(f"wrote {args.csv} ({len(rows)} rows)")
        return 0

    return 2  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
