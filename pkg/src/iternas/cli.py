"""Command line entry point: ``iternas search|eval|pareto|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .controller import run_iterative_search
from .cost_model import BudgetInconsistencyError, genome_cost
from .evaluator import EvalLog, Evaluator, OracleError, RecordSchemaError, load_records, make_oracle
from .evolution import InfeasibleSpaceError
from .predictor import HybridEvaluator
from .report import build_report, front_csv, pareto_front, write_calibration
from .search_space import GenomeError, GenomeParseError, genome_from_canonical_text, genome_to_canonical_text

logger = logging.getLogger("iternas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_INFEASIBLE = 4
EXIT_NOT_FOUND = 5
EXIT_EMPTY = 6
EXIT_ORACLE = 7
EXIT_GENOME = 8


def _err(message: str) -> None:
    print(f"iternas: {message}", file=sys.stderr)


def _load(path: str) -> RunConfig | int:
    try:
        return load_config(path)
    except FileNotFoundError:
        _err(f"config not found: {path}")
        return EXIT_NOT_FOUND
    except BudgetInconsistencyError as exc:
        _err(str(exc))
        return EXIT_BUDGET
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG


def make_evaluator(cfg: RunConfig, log: EvalLog | None = None, jobs: int = 1) -> Evaluator:
    oracle = make_oracle(cfg.oracle, cfg.space, cfg.hardware)
    policy = cfg.predictor_policy
    if policy is None or policy.oracle_fraction >= 1.0:
        return Evaluator(oracle, cfg.space, seed=cfg.search.seed, log=log, jobs=jobs)
    return HybridEvaluator(oracle, cfg.space, policy, seed=cfg.search.seed, log=log, jobs=jobs)


def cmd_search(args) -> int:
    cfg = _load(args.config)
    if isinstance(cfg, int):
        return cfg
    if args.seed is not None:
        try:
            cfg = replace(cfg, search=replace(cfg.search, seed=args.seed))
        except ValueError as exc:
            _err(f"config error: {exc}")
            return EXIT_CONFIG
    out = cfg.output_dir
    print(json.dumps({"run": cfg.header()}, sort_keys=True))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _err(f"cannot create output dir {out}: {exc}")
        return EXIT_CONFIG

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    with EvalLog(out / "evals.jsonl", truncate=True) as log, \
            open(out / "history.jsonl", "w", encoding="utf-8") as hist:
        evaluator = make_evaluator(cfg, log, args.jobs)

        def on_swap(record):
            hist.write(json.dumps(record.to_dict()) + "\n")
            hist.flush()

        try:
            best, history = run_iterative_search(
                cfg.search, cfg.space, cfg.hardware, cfg.budgets, evaluator, on_swap=on_swap
            )
        except InfeasibleSpaceError as exc:
            _err(f"infeasible search space: {exc}")
            return EXIT_INFEASIBLE
        except OracleError as exc:
            _err(f"oracle failure: {exc}")
            return EXIT_ORACLE
    wall = time.perf_counter() - t0

    (out / "best_genome.txt").write_text(genome_to_canonical_text(best.genome), encoding="utf-8")
    write_calibration(out / "calibration.csv", getattr(evaluator, "calibration", []))
    meta = {
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": wall,
        "jobs": args.jobs,
        "config": str(Path(args.config).resolve()),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(
        f"best_fitness={best.fitness!r} params={best.cost.total.params} swaps={len(history)} "
        f"oracle_calls={evaluator.oracle_calls} wall_time={wall:.2f}s output={out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args.config)
    if isinstance(cfg, int):
        return cfg
    try:
        text = Path(args.genome).read_text(encoding="utf-8")
    except FileNotFoundError:
        _err(f"genome file not found: {args.genome}")
        return EXIT_NOT_FOUND
    try:
        genome = genome_from_canonical_text(text, cfg.space)
    except (GenomeParseError, GenomeError) as exc:
        _err(f"invalid genome: {exc}")
        return EXIT_GENOME
    report = genome_cost(genome, cfg.space, cfg.hardware)
    try:
        fitness = make_oracle(cfg.oracle, cfg.space, cfg.hardware)(genome)
    except OracleError as exc:
        _err(f"oracle failure: {exc}")
        return EXIT_ORACLE
    payload = {
        "genome": genome_to_canonical_text(genome, compact=True),
        "cost": report.to_dict(),
        "constraints": report.constraint_table(cfg.budgets),
        "fitness": fitness,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_pareto(args) -> int:
    try:
        records = load_records(args.evals)
    except FileNotFoundError:
        _err(f"evaluation log not found: {args.evals}")
        return EXIT_NOT_FOUND
    except RecordSchemaError as exc:
        _err(f"{args.evals}: {exc}")
        return EXIT_CONFIG
    front = pareto_front(records)
    if not front:
        _err(f"no oracle-scored records in {args.evals}")
        return EXIT_EMPTY
    sys.stdout.write(front_csv(front))
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.dir)
    missing = [n for n in ("history.jsonl", "evals.jsonl", "calibration.csv") if not (run_dir / n).is_file()]
    if missing:
        _err(f"missing run artifacts in {run_dir}: {', '.join(missing)}")
        return EXIT_NOT_FOUND
    summary = build_report(run_dir)
    text = json.dumps(summary, indent=2)
    (run_dir / "report.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iternas", description="Iterative hardware-aware evolutionary NAS")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the alternating backbone/head search")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="parallel oracle evaluations")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="cost report and fitness of one genome")
    p.add_argument("--config", required=True)
    p.add_argument("--genome", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pareto", help="params/fitness Pareto front of an evaluation log")
    p.add_argument("--evals", required=True)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
