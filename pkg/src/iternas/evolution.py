"""Module-scoped evolutionary cycle: variation, feasibility repair, selection."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .cost_model import CostProfile, CostReport, HardwareProfile, genome_cost, is_feasible
from .evaluator import Evaluator, ScoredGenome, best_of, rank
from .search_space import (
    Genome,
    HeadGene,
    ModuleKind,
    SearchSpace,
    StageGene,
    sample_module,
)

__all__ = [
    "InfeasibleSpaceError",
    "ModuleKind",
    "ScoredGenome",
    "SearchConfig",
    "SearchProblem",
    "crossover_module",
    "evolve_generation",
    "make_feasible_offspring",
    "mutate_module",
    "sample_feasible",
    "slot_rng",
    "tournament_select",
]


class InfeasibleSpaceError(RuntimeError):
    """No genome satisfying the budgets could be found."""


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 100
    mutation_prob: float = 0.1
    parent_ratio: float = 0.25
    mutation_ratio: float = 0.5
    tournament_size: int = 2
    generations_per_swap: int = 10
    max_module_swaps: int = 50
    passthrough_ratio: float = 0.5
    resample_limit: int = 32
    seed: int = 0
    patience: int = 6
    improvement_tol: float = 1e-9
    buffer_capacity: int | None = None

    def __post_init__(self):
        for name in ("mutation_prob", "parent_ratio", "mutation_ratio", "passthrough_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.tournament_size < 2:
            raise ValueError("tournament_size must be >= 2")
        if self.generations_per_swap < 0 or self.max_module_swaps < 1:
            raise ValueError("need generations_per_swap >= 0 and max_module_swaps >= 1")
        if self.resample_limit < 1 or self.patience < 1:
            raise ValueError("resample_limit and patience must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def capacity(self) -> int:
        return self.buffer_capacity or 2 * self.population_size

    @property
    def num_parents(self) -> int:
        return min(self.population_size, max(1, math.ceil(self.parent_ratio * self.population_size)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SearchProblem:
    space: SearchSpace
    hw: HardwareProfile
    budgets: CostProfile

    def cost(self, genome: Genome) -> CostReport:
        return genome_cost(genome, self.space, self.hw)

    def feasible(self, report: CostReport, module: ModuleKind | None) -> bool:
        return is_feasible(report, self.budgets, module)


def slot_rng(seed: int, swap: int, generation: int, slot: int, stream: int = 0) -> np.random.Generator:
    """Random stream for one candidate slot, independent of evaluation order."""
    return np.random.default_rng([seed, swap, generation, slot, stream])


def _other_value(current: int, n: int, rng: np.random.Generator) -> int:
    # uniform over the legal values other than the current one
    if n < 2:
        return current
    v = int(rng.integers(n - 1))
    return v + 1 if v >= current else v


def mutate_module(genome: Genome, module: ModuleKind, space: SearchSpace, mutation_prob: float,
                  rng: np.random.Generator) -> Genome:
    """Each gene of ``module`` moves to a different legal value with probability ``mutation_prob``."""
    n_w, n_e = len(space.width_multipliers), len(space.expansion_ratios)
    n_d = space.depth_max - space.depth_min + 1
    if module is ModuleKind.HEAD:
        head = []
        for gene in genome.head:
            w, e = gene.width_index, gene.expansion_index
            if rng.random() < mutation_prob:
                w = _other_value(w, n_w, rng)
            if rng.random() < mutation_prob:
                e = _other_value(e, n_e, rng)
            head.append(HeadGene(w, e))
        return Genome(genome.backbone, tuple(head))

    stages = []
    for stage in genome.backbone:
        exps = [
            _other_value(i, n_e, rng) if rng.random() < mutation_prob else i
            for i in stage.expansion_indices
        ]
        depth = stage.depth
        if rng.random() < mutation_prob:
            depth = space.depth_min + _other_value(depth - space.depth_min, n_d, rng)
        if depth > len(exps):
            exps.extend(int(i) for i in rng.integers(n_e, size=depth - len(exps)))
        del exps[depth:]
        width = stage.width_index
        if rng.random() < mutation_prob:
            width = _other_value(width, n_w, rng)
        stages.append(StageGene(depth, width, tuple(exps)))
    return Genome(tuple(stages), genome.head)


def crossover_module(a: Genome, b: Genome, module: ModuleKind, rng: np.random.Generator) -> Genome:
    """Stage/slot-level uniform crossover of ``module``; everything else comes from ``a``."""
    genes_a, genes_b = a.module_genes(module), b.module_genes(module)
    picks = rng.random(len(genes_a)) < 0.5
    child = tuple(gb if pick else ga for ga, gb, pick in zip(genes_a, genes_b, picks))
    return a.with_module(module, child)


def sample_feasible(base: Genome, module: ModuleKind, problem: SearchProblem, draws: int,
                    rng: np.random.Generator) -> tuple[Genome, CostReport]:
    for _ in range(draws):
        candidate = base.with_module(module, sample_module(problem.space, module, rng))
        report = problem.cost(candidate)
        if problem.feasible(report, module):
            return candidate, report
    raise InfeasibleSpaceError(
        f"no {module.value} genome within budget after {draws} uniform draws; "
        f"budget {problem.budgets.for_module(module)} is likely unsatisfiable"
    )


def make_feasible_offspring(parents: Sequence[Genome], module: ModuleKind, problem: SearchProblem,
                            config: SearchConfig, rng: np.random.Generator,
                            tally: Counter | None = None) -> tuple[Genome, CostReport]:
    """Vary the parents until the child fits the module budget.

    With probability ``mutation_ratio`` the child is a mutated copy of the
    first parent, otherwise a crossover of the first two parents followed by
    mutation.  After ``resample_limit`` failed attempts, fall back to uniform
    sampling of the module genes.
    """
    if not parents:
        raise ValueError("need at least one parent")
    a = parents[0]
    b = parents[1] if len(parents) > 1 else parents[0]
    for attempt in range(config.resample_limit):
        if rng.random() < config.mutation_ratio:
            branch, child = "mutation", a
        else:
            branch, child = "crossover", crossover_module(a, b, module, rng)
        child = mutate_module(child, module, problem.space, config.mutation_prob, rng)
        if tally is not None and attempt == 0:
            tally[branch] += 1
        report = problem.cost(child)
        if problem.feasible(report, module):
            return child, report
        if tally is not None:
            tally["rejected"] += 1
    if tally is not None:
        tally["fallback"] += 1
    return sample_feasible(a, module, problem, config.resample_limit * 10, rng)


def tournament_select(population: Sequence[ScoredGenome], tournament_size: int,
                      rng: np.random.Generator) -> ScoredGenome:
    if not population:
        raise ValueError("empty population")
    n = len(population)
    replace = n < tournament_size
    picks = rng.choice(n, size=tournament_size, replace=replace)
    return best_of(population[int(i)] for i in picks)


def evolve_generation(population: Sequence[ScoredGenome], module: ModuleKind, problem: SearchProblem,
                      config: SearchConfig, evaluator: Evaluator, swap: int, generation: int,
                      tally: Counter | None = None) -> list[ScoredGenome]:
    """Keep the top parents, refill the rest with feasible offspring, score them."""
    parents = rank(population)[: config.num_parents]
    children = []
    for slot in range(config.population_size - len(parents)):
        rng = slot_rng(config.seed, swap, generation, slot)
        a = tournament_select(parents, config.tournament_size, rng)
        b = tournament_select(parents, config.tournament_size, rng)
        children.append(make_feasible_offspring([a.genome, b.genome], module, problem, config, rng, tally))
    scored = evaluator.score(children, module, swap, generation)
    return list(parents) + scored
