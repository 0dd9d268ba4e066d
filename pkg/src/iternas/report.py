"""Pareto front extraction and run summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from scipy import stats

from .evaluator import ORACLE, EvalRecord, load_records

CALIBRATION_HEADER = ("predicted", "true", "swap", "generation")


def pareto_front(records: Iterable[EvalRecord]) -> list[EvalRecord]:
    """Oracle records not dominated under (max fitness, min params), params ascending.

    Repeated genomes are counted once.  Records with identical params and
    fitness do not dominate each other and are all kept.
    """
    seen: set[str] = set()
    pool = []
    for r in records:
        if r.fitness_source != ORACLE or r.canonical_genome in seen:
            continue
        seen.add(r.canonical_genome)
        pool.append(r)
    pool.sort(key=lambda r: (r.cost.params, -r.fitness, r.canonical_genome))
    front: list[EvalRecord] = []
    best = -math.inf
    i = 0
    while i < len(pool):
        # records sharing a param count: only the top fitness can survive
        j = i
        while j < len(pool) and pool[j].cost.params == pool[i].cost.params:
            j += 1
        top = pool[i].fitness
        if top > best:
            front.extend(r for r in pool[i:j] if r.fitness == top)
            best = top
        i = j
    return front


def front_csv(front: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["params", "fitness", "genome"])
    for r in front:
        writer.writerow([r.cost.params, repr(r.fitness), r.canonical_genome])
    return buf.getvalue()


def write_calibration(path: Path, pairs: Iterable[tuple[float, float, int, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CALIBRATION_HEADER)
        for predicted, true, swap, generation in pairs:
            writer.writerow([repr(float(predicted)), repr(float(true)), swap, generation])


def read_calibration(path: Path) -> list[tuple[float, float, int, int]]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return [(float(r["predicted"]), float(r["true"]), int(r["swap"]), int(r["generation"])) for r in rows]


def read_history(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    if len(x) < 2:
        return None
    rho = stats.spearmanr(x, y).statistic
    return None if rho is None or math.isnan(rho) else float(rho)


def build_report(run_dir: Path) -> dict:
    history = read_history(run_dir / "history.jsonl")
    records = load_records(run_dir / "evals.jsonl")
    pairs = read_calibration(run_dir / "calibration.csv")
    oracle_records = [r for r in records if r.fitness_source == ORACLE]
    curve = [h["best_fitness"] for h in history]
    calibration: dict = {"present": bool(pairs)}
    if pairs:
        calibration["pairs"] = len(pairs)
        calibration["spearman"] = spearman([p[0] for p in pairs], [p[1] for p in pairs])
    return {
        "swaps": len(history),
        "best_fitness_curve": curve,
        "curve_non_decreasing": all(b >= a for a, b in zip(curve, curve[1:])),
        "best": history[-1]["best"] if history else None,
        "oracle_calls": {
            "total": len(oracle_records),
            "per_swap": [h["oracle_calls"] for h in history],
        },
        "predictor_scored": len(records) - len(oracle_records),
        "calibration": calibration,
        "pareto_front": [
            {"params": r.cost.params, "fitness": r.fitness, "genome": r.canonical_genome}
            for r in pareto_front(records)
        ],
    }
