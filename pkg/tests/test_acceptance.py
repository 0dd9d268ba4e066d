"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line (also repeated in the
terminal summary).  Library-level runs write ``evals.jsonl`` and
``history.jsonl`` like the CLI does, so the soundness and monotonicity audits
at the end of the module cover every run made here.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import default_profile, toy_space
from iternas.cli import main
from iternas.controller import SearchState, run_iterative_search
from iternas.cost_model import (
    CostProfile,
    CostVector,
    HardwareProfile,
    genome_cost,
    hardware_preset,
    is_feasible,
)
from iternas.evaluator import (
    ORACLE,
    EvalLog,
    EvalRecord,
    Evaluator,
    ScoredGenome,
    SyntheticLinearOracle,
    SyntheticRuggedOracle,
    load_records,
)
from iternas.evolution import SearchConfig, SearchProblem
from iternas.predictor import HybridEvaluator, PredictorPolicy, fit, predict
from iternas.search_space import (
    Genome,
    HeadBlockSlot,
    HeadGene,
    ModuleKind,
    SearchSpace,
    StageGene,
    default_space,
    enumerate_genomes,
    genome_from_canonical_text,
    genome_to_canonical_text,
    module_canonical_text,
    sample_uniform,
)
from test_cost_model import flat_cost
from test_predictor import spearman

ROOT = Path(__file__).resolve().parents[1]
HW = hardware_preset("max78002")
SEEDS = range(20)

pytestmark = pytest.mark.slow

RESULTS: list[str] = []
RUNS: list[tuple[Path, SearchSpace, CostProfile]] = []


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def logged_search(run_dir: Path, config: SearchConfig, space: SearchSpace, profile: CostProfile,
                  make_evaluator, watch=None):
    """run_iterative_search with the CLI's evals.jsonl / history.jsonl side files.

    ``watch(state)`` may return an ``on_population`` hook that needs the live state.
    """
    run_dir.mkdir(parents=True, exist_ok=True)
    with EvalLog(run_dir / "evals.jsonl", truncate=True) as log, \
            open(run_dir / "history.jsonl", "w", encoding="utf-8") as hist:
        ev = make_evaluator(log)
        problem = SearchProblem(space, HW, profile)
        state = SearchState.create(problem, config, ev)
        if watch is not None:
            state.on_population = watch(state)

        def on_swap(record):
            hist.write(json.dumps(record.to_dict()) + "\n")

        best, history = run_iterative_search(config, space, HW, profile, ev, on_swap=on_swap, state=state)
    RUNS.append((run_dir, space, profile))
    return best, history, ev, state


def toy_problem():
    """The toy space with a backbone budget at the 60th percentile of backbone params."""
    space = toy_space()
    genomes = enumerate_genomes(space)
    backbone = np.array([genome_cost(g, space, HW).backbone.params for g in genomes])
    tau_b = int(np.quantile(backbone, 0.6))
    profile = CostProfile(
        CostVector(10**9, 81_920, 128), CostVector(tau_b, 81_920, 100), CostVector(10**9 - tau_b, 81_920, 28)
    )
    return space, genomes, profile


def brute_force_optimum(space, genomes, profile, oracle) -> tuple[ScoredGenome, float]:
    feasible = []
    for g in genomes:
        report = genome_cost(g, space, HW)
        if all(is_feasible(report, profile, m) for m in (ModuleKind.BACKBONE, ModuleKind.HEAD, None)):
            feasible.append(ScoredGenome(g, oracle(g), report))
    return min(feasible, key=ScoredGenome.rank_key), 1 - len(feasible) / len(genomes)


def test_global_optimum_recovery(workdir):
    space, genomes, profile = toy_problem()
    oracle = SyntheticRuggedOracle(space, HW, seed=1)
    target, excluded = brute_force_optimum(space, genomes, profile, oracle)
    hits, slowest = 0, 0.0
    for seed in SEEDS:
        t0 = time.perf_counter()
        best, history, _, _ = logged_search(
            workdir / f"optimum-{seed}", SearchConfig(seed=seed, max_module_swaps=10), space, profile,
            lambda log, s=seed: Evaluator(oracle, space, seed=s, log=log),
        )
        slowest = max(slowest, time.perf_counter() - t0)
        hits += best.genome == target.genome
    ok = hits >= 19 and excluded >= 0.25 and slowest < 60
    verdict(
        "global-optimum recovery",
        ok,
        f"{hits}/20 seeds hit the brute-force optimum over {len(genomes)} genomes "
        f"(budget excludes {excluded:.0%}, slowest run {slowest:.1f}s; need >=19, >=25%, <60s)",
    )


def test_alternation_value(workdir):
    space = default_space()
    profile = default_profile()
    oracle = SyntheticRuggedOracle(space, HW, seed=1, coupling_scale=0.3)
    assert oracle.coupling_scale > 0
    wins = 0
    for seed in SEEDS:
        single, _, _, _ = logged_search(
            workdir / f"single-{seed}", SearchConfig(seed=seed, max_module_swaps=1), space, profile,
            lambda log, s=seed: Evaluator(oracle, space, seed=s, log=log),
        )
        alternating, _, _, _ = logged_search(
            workdir / f"alternating-{seed}", SearchConfig(seed=seed, max_module_swaps=6), space, profile,
            lambda log, s=seed: Evaluator(oracle, space, seed=s, log=log),
        )
        wins += alternating.fitness > single.fitness
    verdict("alternation value", wins >= 15, f"6-swap beats 1-swap in {wins}/20 paired seeds (need >=15)")


def test_passthrough_composition(workdir):
    space, profile = default_space(), default_profile()
    oracle = SyntheticRuggedOracle(space, HW, seed=1)
    failures, checked = [], 0
    for rho in (0.0, 0.25, 0.5, 1.0):
        seen = []

        def watch(state, seen=seen):
            def hook(swap, module, population, k):
                buffer = [module_canonical_text(e.genome, module) for e in state.buffers[module].entries]
                seen.append((swap, module, population, k, buffer))
            return hook

        config = SearchConfig(seed=3, passthrough_ratio=rho, max_module_swaps=6, patience=50)
        logged_search(workdir / f"passthrough-{rho}", config, space, profile,
                      lambda log: Evaluator(oracle, space, seed=3, log=log), watch=watch)
        for swap, module, population, k, buffer in seen:
            checked += 1
            want = min(math.floor(rho * 100), len(buffer))
            elites = [module_canonical_text(s.genome, module) for s in population[:k]]
            if k != want or len(population) != 100 or elites != buffer[:k]:
                failures.append((rho, swap, k, want, len(population)))
    verdict(
        "passthrough composition",
        not failures and checked == 24,
        f"{checked} swap-start populations over rho in (0, 0.25, 0.5, 1.0), N=100; mismatches: {failures or 'none'}",
    )


def test_cost_model_oracle_equivalence():
    space = toy_space()
    genomes = enumerate_genomes(space)
    mismatches = 0
    for g in genomes:
        report = genome_cost(g, space, HW)
        ref = flat_cost(g, space)
        mismatches += (report.backbone.params, report.head.params) != (ref["backbone"][0], ref["head"][0])
        mismatches += report.total.params != ref["backbone"][0] + ref["head"][0]
    verdict(
        "cost-model oracle equivalence",
        mismatches == 0 and len(genomes) <= 4096,
        f"{len(genomes)} genomes, {mismatches} parameter-count mismatches against the flat enumeration",
    )


def test_predictor_quality():
    space = default_space()
    rng = np.random.default_rng(2024)

    def records(oracle, n):
        out = []
        for _ in range(n):
            g = sample_uniform(space, rng)
            out.append(EvalRecord(genome_to_canonical_text(g, compact=True), oracle(g),
                                  genome_cost(g, space, HW).total, ORACLE, "", 0, 0, 0))
        return out

    noisy = SyntheticLinearOracle(space, HW, seed=7, noise_std=0.5, noise_seed=7)
    data = records(noisy, 700)
    model = fit(data[:500], space)
    held = data[500:]
    preds = [predict(model, genome_from_canonical_text(r.canonical_genome, space), space) for r in held]
    rho = spearman(preds, [r.fitness for r in held])

    exact = SyntheticLinearOracle(space, HW, seed=8, param_penalty=0.0)
    train = records(exact, 300)
    exact_model = fit(train, space, ridge_lambda=0.0)
    residual = max(
        abs(predict(exact_model, genome_from_canonical_text(r.canonical_genome, space), space) - r.fitness)
        for r in train
    )
    verdict(
        "predictor quality",
        rho >= 0.8 and residual <= 1e-8,
        f"held-out Spearman {rho:.4f} on 200 records after 500 (need >=0.8); "
        f"noiseless linear residual {residual:.2e} (need <=1e-8)",
    )


def test_predictor_economy(workdir):
    space, _, profile = toy_problem()
    oracle = SyntheticRuggedOracle(space, HW, seed=1)
    policy = PredictorPolicy(min_training_records=20, oracle_fraction=0.25)
    plain_calls, hybrid_calls, plain_best, hybrid_best = [], [], [], []
    for seed in SEEDS:
        config = SearchConfig(seed=seed, max_module_swaps=10)
        best, _, ev, _ = logged_search(workdir / f"economy-oracle-{seed}", config, space, profile,
                                       lambda log, s=seed: Evaluator(oracle, space, seed=s, log=log))
        plain_calls.append(ev.oracle_calls)
        plain_best.append(best.fitness)
        best, _, ev, _ = logged_search(workdir / f"economy-hybrid-{seed}", config, space, profile,
                                       lambda log, s=seed: HybridEvaluator(oracle, space, policy, seed=s, log=log))
        hybrid_calls.append(ev.oracle_calls)
        hybrid_best.append(best.fitness)
    ratio = sum(hybrid_calls) / sum(plain_calls)
    m_plain, m_hybrid = statistics.median(plain_best), statistics.median(hybrid_best)
    gap = abs(m_hybrid - m_plain) / abs(m_plain)
    verdict(
        "predictor economy",
        ratio <= 0.45 and gap <= 0.01,
        f"hybrid used {ratio:.3f} of the oracle calls ({sum(hybrid_calls)} vs {sum(plain_calls)}, need <=0.45); "
        f"median best {m_hybrid:.6g} vs {m_plain:.6g}, gap {gap:.2%} (need <=1%)",
    )


def test_determinism(workdir, monkeypatch, capsys):
    outputs = []
    for i, jobs in enumerate((1, 4)):
        out = workdir / f"determinism-{i}"
        monkeypatch.setenv("ITERNAS_OUTPUT_DIR", str(out))
        code = main(["search", "--config", str(ROOT / "configs" / "default.yaml"), "--jobs", str(jobs)])
        capsys.readouterr()
        assert code == 0
        RUNS.append((out, default_space(), default_profile()))
        outputs.append({n: (out / n).read_bytes() for n in ("best_genome.txt", "history.jsonl", "evals.jsonl")})
    same = [n for n in outputs[0] if outputs[0][n] == outputs[1][n]]
    verdict(
        "determinism",
        len(same) == 3,
        f"byte-identical with --jobs 1 and --jobs 4: {', '.join(same) or 'none'} (need all three files)",
    )


def test_max78002_preset_gate():
    hw = hardware_preset("max78002")
    results = {}

    wide = SearchSpace(1, 1, 1, (1.0,), (0.2,), (2049,), (), input_resolution=1)
    report = genome_cost(Genome((StageGene(1, 0, (0,)),), ()), wide, hw)
    results["2049 channels"] = [v[0] for v in report.violations] == ["max_channels"]

    slots = (HeadBlockSlot(0, "fpn", 8), HeadBlockSlot(1, "yolo_head", 8), HeadBlockSlot(2, "yolo_head", 8))
    deep = SearchSpace(1, 1, 39, (1.0,), (0.2,), (8,), slots, input_resolution=1)
    report = genome_cost(Genome((StageGene(39, 0, (0,) * 39),), (HeadGene(0, 0),) * 3), deep, hw)
    results["129 layers"] = report.total.primal_layers == 129 and [v[0] for v in report.violations] == [
        "max_primal_layers"
    ]

    big_map = SearchSpace(2, 1, 1, (1.0,), (0.2,), (81, 8), (), input_resolution=32)
    g = Genome((StageGene(1, 0, (0,)), StageGene(1, 0, (0,))), ())
    plain = HardwareProfile(2048, 128, 81_920, 1, streaming_mode=False)
    report = genome_cost(g, big_map, plain)
    results["first-stage map, streaming off"] = [v[0] for v in report.violations] == ["max_activation_bytes"]
    results["same map, streaming on"] = genome_cost(g, big_map, hw).violations == ()

    verdict(
        "MAX78002 preset gate",
        all(results.values()),
        ", ".join(f"{k}: {'flagged correctly' if v else 'WRONG'}" for k, v in results.items()),
    )


def test_constraint_soundness():
    assert RUNS, "run the whole module: this audit reads the logs of the other acceptance runs"
    audited, bad = 0, []
    for run_dir, space, profile in RUNS:
        for r in load_records(run_dir / "evals.jsonl"):
            report = genome_cost(genome_from_canonical_text(r.canonical_genome, space), space, HW)
            # odd swaps search the backbone, even swaps the head; swap 0 is the starting genome
            if r.swap_index == 0:
                modules = (ModuleKind.BACKBONE, ModuleKind.HEAD, None)
            else:
                modules = (ModuleKind.BACKBONE if r.swap_index % 2 else ModuleKind.HEAD,)
            audited += 1
            if report.total != r.cost or not all(is_feasible(report, profile, m) for m in modules):
                bad.append((run_dir.name, r.canonical_genome))
        for line in (run_dir / "history.jsonl").read_text().splitlines():
            best = json.loads(line)["best"]
            report = genome_cost(genome_from_canonical_text(best["genome"], space), space, HW)
            audited += 1
            if not all(is_feasible(report, profile, m) for m in (ModuleKind.BACKBONE, ModuleKind.HEAD, None)):
                bad.append((run_dir.name, best["genome"]))
    verdict(
        "constraint soundness",
        not bad,
        f"{audited} logged candidates and swap winners from {len(RUNS)} runs re-costed; {len(bad)} violations",
    )


def test_monotonicity():
    assert RUNS, "run the whole module: this audit reads the histories of the other acceptance runs"
    broken = []
    for run_dir, _, _ in RUNS:
        curve = [json.loads(line)["best_fitness"] for line in (run_dir / "history.jsonl").read_text().splitlines()]
        if any(b < a for a, b in zip(curve, curve[1:])):
            broken.append(run_dir.name)
    verdict(
        "monotonicity",
        not broken,
        f"per-swap best fitness non-decreasing in {len(RUNS) - len(broken)}/{len(RUNS)} histories",
    )
