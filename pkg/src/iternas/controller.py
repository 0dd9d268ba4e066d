"""Alternating backbone/head search with per-module memory buffers and passthrough."""

from __future__ import annotations

import dataclasses
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from .cost_model import CostProfile, HardwareProfile
from .evaluator import ORACLE, Evaluator, ScoredGenome, best_of, rank
from .evolution import (
    InfeasibleSpaceError,
    SearchConfig,
    SearchProblem,
    sample_feasible,
    evolve_generation,
    slot_rng,
)
from .search_space import (
    Genome,
    ModuleKind,
    SearchSpace,
    context_hash,
    module_canonical_text,
    sample_uniform,
)

logger = logging.getLogger(__name__)


@dataclass
class MemoryBuffer:
    """Best distinct module configurations seen so far, best first."""

    module: ModuleKind
    capacity: int
    entries: list[ScoredGenome] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def merge(self, candidates) -> None:
        by_genes: dict[str, ScoredGenome] = {}
        for s in list(self.entries) + list(candidates):
            if s.fitness_source != ORACLE:
                raise ValueError("only oracle-verified candidates may enter a memory buffer")
            key = module_canonical_text(s.genome, self.module)
            kept = by_genes.get(key)
            if kept is None or s.rank_key() < kept.rank_key():
                by_genes[key] = s
        self.entries = rank(by_genes.values())[: self.capacity]

    def best(self) -> ScoredGenome | None:
        return self.entries[0] if self.entries else None


@dataclass(frozen=True)
class SwapRecord:
    swap_index: int
    module: ModuleKind
    best: ScoredGenome
    generations_run: int
    evaluations_used: int
    oracle_calls: int
    elites: int
    fresh: int
    buffer_size: int  # at swap start, after the incumbent joined

    def to_dict(self) -> dict:
        return {
            "swap": self.swap_index,
            "module": self.module.value,
            "best": self.best.to_dict(),
            "best_fitness": self.best.fitness,
            "generations": self.generations_run,
            "evaluations": self.evaluations_used,
            "oracle_calls": self.oracle_calls,
            "passthrough": {"elites": self.elites, "fresh": self.fresh, "buffer_size": self.buffer_size},
        }


def _in_context(s: ScoredGenome, module: ModuleKind) -> ScoredGenome:
    return dataclasses.replace(s, context_hash=context_hash(s.genome, module))


def passthrough_init(buffer: MemoryBuffer, rho: float, N: int, module: ModuleKind, fixed: Genome,
                     problem: SearchProblem, config: SearchConfig, evaluator: Evaluator,
                     swap: int) -> tuple[list[ScoredGenome], int]:
    """Top ``floor(rho * N)`` buffer entries plus feasible uniform samples.

    Buffer entries are transplanted onto the current fixed module; entries
    whose stored context differs from the current one are re-scored.  Returns
    the population and the number of elites taken from the buffer.
    """
    if not 0.0 <= rho <= 1.0 or N < 1:
        raise ValueError("need 0 <= rho <= 1 and N >= 1")
    want = min(math.floor(rho * N), len(buffer))
    ctx = context_hash(fixed, module)
    current, stale = [], []
    for entry in buffer.entries:
        if len(current) + len(stale) == want:
            break
        genome = fixed.with_module(module, entry.genome.module_genes(module))
        if entry.context_hash == ctx and entry.genome == genome:
            current.append(entry)
            continue
        report = problem.cost(genome)
        if problem.feasible(report, module):
            stale.append((genome, report))
    k = len(current) + len(stale)
    fresh = [
        sample_feasible(fixed, module, problem, config.resample_limit * 10, slot_rng(config.seed, swap, 0, slot))
        for slot in range(N - k)
    ]
    scored = evaluator.score(stale + fresh, module, swap, 0) if stale or fresh else []
    return current + scored, k


def _verify_winner(population: list[ScoredGenome], module: ModuleKind, ev: Evaluator, swap: int,
                   generation: int) -> list[ScoredGenome]:
    # oracle-check the leader until the leader is an oracle value
    population = rank(population)
    while population[0].fitness_source != ORACLE:
        population[0] = ev.verify(population[:1], module, swap, generation)[0]
        population = rank(population)
    return population


@dataclass
class SearchState:
    problem: SearchProblem
    config: SearchConfig
    evaluator: Evaluator
    buffers: dict[ModuleKind, MemoryBuffer]
    tally: Counter = field(default_factory=Counter)
    on_population: Callable[[int, ModuleKind, list[ScoredGenome], int], None] | None = None

    @classmethod
    def create(cls, problem: SearchProblem, config: SearchConfig, evaluator: Evaluator, **kw) -> "SearchState":
        buffers = {m: MemoryBuffer(m, config.capacity) for m in ModuleKind}
        return cls(problem, config, evaluator, buffers, **kw)


def run_inner_search(module: ModuleKind, incumbent: ScoredGenome, state: SearchState,
                     swap: int) -> tuple[ScoredGenome, SwapRecord]:
    """Evolve ``module`` with the other module fixed to the incumbent's genes.

    The incumbent always competes for the result, so a swap never returns
    something worse than what it started from.
    """
    cfg, ev = state.config, state.evaluator
    calls_before, evals_before = ev.oracle_calls, ev.evaluations
    buffer = state.buffers[module]
    incumbent = _in_context(incumbent, module)
    buffer.merge([incumbent])
    buffer_at_start = len(buffer)
    population, k = passthrough_init(
        buffer, cfg.passthrough_ratio, cfg.population_size, module, incumbent.genome,
        state.problem, cfg, ev, swap,
    )
    if state.on_population is not None:
        state.on_population(swap, module, population, k)
    ev.end_generation()
    for generation in range(1, cfg.generations_per_swap + 1):
        population = evolve_generation(population, module, state.problem, cfg, ev, swap, generation, state.tally)
        ev.end_generation()

    population = _verify_winner(population, module, ev, swap, cfg.generations_per_swap)
    verified = [s for s in population if s.fitness_source == ORACLE]
    buffer.merge(verified)
    best = best_of(verified + [incumbent])
    record = SwapRecord(
        swap_index=swap,
        module=module,
        best=best,
        generations_run=cfg.generations_per_swap,
        evaluations_used=ev.evaluations - evals_before,
        oracle_calls=ev.oracle_calls - calls_before,
        elites=k,
        fresh=cfg.population_size - k,
        buffer_size=buffer_at_start,
    )
    return best, record


def initial_genome(problem: SearchProblem, config: SearchConfig) -> Genome:
    rng = slot_rng(config.seed, 0, 0, 0, stream=2)
    draws = config.resample_limit * 100
    for _ in range(draws):
        genome = sample_uniform(problem.space, rng)
        report = problem.cost(genome)
        if all(problem.feasible(report, m) for m in (ModuleKind.BACKBONE, ModuleKind.HEAD, None)):
            return genome
    raise InfeasibleSpaceError(f"no genome within all budgets after {draws} uniform draws")


def run_iterative_search(config: SearchConfig, space: SearchSpace, hw: HardwareProfile,
                         profile: CostProfile, evaluator: Evaluator,
                         on_swap: Callable[[SwapRecord], None] | None = None,
                         state: SearchState | None = None) -> tuple[ScoredGenome, list[SwapRecord]]:
    """Coordinate descent over (backbone, head), backbone first.

    Stops after ``max_module_swaps`` swaps or when the best fitness has not
    improved for ``patience`` consecutive swaps.
    """
    problem = SearchProblem(space, hw, profile)
    state = state or SearchState.create(problem, config, evaluator)
    start = initial_genome(problem, config)
    incumbent = evaluator.oracle_scores([(start, problem.cost(start))], ModuleKind.BACKBONE, 0, 0)[0]
    best_ever = incumbent
    history: list[SwapRecord] = []
    stale = 0
    for swap in range(1, config.max_module_swaps + 1):
        module = ModuleKind.BACKBONE if swap % 2 else ModuleKind.HEAD
        best, record = run_inner_search(module, incumbent, state, swap)
        history.append(record)
        if on_swap is not None:
            on_swap(record)
        logger.info("swap %d (%s): best %.6g", swap, module.value, best.fitness)
        gain = best.fitness - best_ever.fitness
        if gain > config.improvement_tol * max(1.0, abs(best_ever.fitness)):
            stale = 0
        else:
            stale += 1
        best_ever = best_of([best_ever, best])
        incumbent = best
        if stale >= config.patience:
            break
    return best_ever, history
