"""Fitness oracles, evaluation caching and the JSON-lines evaluation log.

Fitness is always "higher is better".  A loss-style oracle should return the
negated loss.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import shlex
import subprocess
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .cost_model import CostReport, CostVector, HardwareProfile, genome_cost
from .search_space import (
    Genome,
    ModuleKind,
    SearchSpace,
    context_hash,
    encode,
    genome_from_canonical_text,
    genome_to_canonical_text,
)

logger = logging.getLogger(__name__)

ORACLE = "oracle"
PREDICTOR = "predictor"


class OracleError(RuntimeError):
    pass


class RecordSchemaError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ScoredGenome:
    genome: Genome
    fitness: float
    cost: CostReport
    fitness_source: str = ORACLE
    context_hash: str = ""
    text: str = ""

    def __post_init__(self):
        if not math.isfinite(self.fitness):
            raise ValueError(f"fitness must be finite, got {self.fitness}")
        if not self.text:
            object.__setattr__(self, "text", genome_to_canonical_text(self.genome, compact=True))

    def rank_key(self) -> tuple:
        """Ascending key: best first.  Ties go to fewer params, then canonical text."""
        return (-self.fitness, self.cost.total.params, self.text)

    def to_dict(self) -> dict:
        return {
            "genome": self.text,
            "fitness": self.fitness,
            "source": self.fitness_source,
            "ctx": self.context_hash,
            "cost": self.cost.total.to_dict(),
        }


def best_of(candidates: Iterable[ScoredGenome]) -> ScoredGenome:
    return min(candidates, key=ScoredGenome.rank_key)


def rank(candidates: Iterable[ScoredGenome]) -> list[ScoredGenome]:
    return sorted(candidates, key=ScoredGenome.rank_key)


# --- records and the log ------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    canonical_genome: str
    fitness: float
    cost: CostVector
    fitness_source: str
    context_hash: str
    swap_index: int
    generation: int
    seed: int

    def to_json(self) -> dict:
        return {
            "genome": self.canonical_genome,
            "fitness": self.fitness,
            "source": self.fitness_source,
            "cost": self.cost.to_dict(),
            "ctx": self.context_hash,
            "swap": self.swap_index,
            "gen": self.generation,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalRecord":
        fitness = float(data["fitness"])
        if not math.isfinite(fitness):
            raise ValueError("fitness must be finite")
        source = data["source"]
        if source not in (ORACLE, PREDICTOR):
            raise ValueError(f"unknown source {source!r}")
        return cls(
            canonical_genome=str(data["genome"]),
            fitness=fitness,
            cost=CostVector.from_dict(data["cost"]),
            fitness_source=source,
            context_hash=str(data["ctx"]),
            swap_index=int(data["swap"]),
            generation=int(data["gen"]),
            seed=int(data["seed"]),
        )


def _dumps(record: EvalRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False) + "\n"


def append_record(path: str | Path, record: EvalRecord) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(_dumps(record))


class EvalLog:
    """Append-only JSON-lines writer; one process owns it."""

    def __init__(self, path: str | Path, truncate: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w" if truncate else "a", encoding="utf-8")

    def write(self, records: Sequence[EvalRecord]) -> None:
        for record in records:
            self._fh.write(_dumps(record))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_records(path: str | Path) -> list[EvalRecord]:
    """Read a log.  A truncated final line (crashed writer) is dropped with a warning."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    ends_clean = lines[-1] == ""
    if ends_clean:
        lines.pop()
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        is_tail = lineno == len(lines) and not ends_clean
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            if is_tail:
                warnings.warn(f"{path}: discarding truncated final line {lineno}", stacklevel=2)
                break
            raise RecordSchemaError(f"invalid JSON: {exc.msg}", lineno) from None
        try:
            records.append(EvalRecord.from_json(data))
        except (KeyError, TypeError, ValueError) as exc:
            if is_tail:
                warnings.warn(f"{path}: discarding truncated final line {lineno}", stacklevel=2)
                break
            raise RecordSchemaError(f"schema violation: {exc!r}", lineno) from None
    return records


# --- oracles ------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "synthetic_rugged"
    parameters: dict = field(default_factory=dict)
    noise_std: float = 0.0
    noise_seed: int = 0

    KINDS = ("synthetic_linear", "synthetic_rugged", "external_command")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}; expected one of {self.KINDS}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def keyed_noise(noise_seed: int, canonical: str, std: float) -> float:
    if std == 0:
        return 0.0
    key = hashlib.sha256(f"{noise_seed}:{canonical}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(key[:8], "little"))
    return float(rng.normal(0.0, std))


class SyntheticLinearOracle:
    """``w . encode(g) - param_penalty * params / params_scale`` plus keyed noise."""

    def __init__(self, space: SearchSpace, hw: HardwareProfile | None = None, seed: int = 0,
                 weights: Sequence[float] | None = None, weight_mean: float = 1.0,
                 weight_std: float = 1.0, param_penalty: float = 0.1, params_scale: float = 1e6,
                 noise_std: float = 0.0, noise_seed: int = 0):
        self.space = space
        self.hw = hw or HardwareProfile()
        if weights is None:
            rng = np.random.default_rng([seed, 0x11])
            weights = rng.normal(weight_mean, weight_std, size=space.feature_length)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (space.feature_length,):
            raise ValueError(f"expected {space.feature_length} weights, got {self.weights.shape}")
        self.param_penalty = float(param_penalty)
        self.params_scale = float(params_scale)
        self.noise_std = float(noise_std)
        self.noise_seed = int(noise_seed)

    def linear_part(self, genome: Genome) -> float:
        value = float(encode(genome, self.space) @ self.weights)
        if self.param_penalty:
            params = genome_cost(genome, self.space, self.hw).total.params
            value -= self.param_penalty * params / self.params_scale
        return value

    def _noise(self, genome: Genome) -> float:
        return keyed_noise(self.noise_seed, genome_to_canonical_text(genome, compact=True), self.noise_std)

    def __call__(self, genome: Genome) -> float:
        return self.linear_part(genome) + self._noise(genome)


class SyntheticRuggedOracle(SyntheticLinearOracle):
    """Linear landscape plus pairwise interactions between gene groups.

    Groups are backbone stages and head slots.  Each pair ``(i, j)`` adds a
    width-by-width table entry and a product of the groups' mean expansion
    ratios; pairs inside one module are scaled by ``interaction_scale``,
    backbone/head pairs by ``coupling_scale``.
    """

    def __init__(self, space: SearchSpace, hw: HardwareProfile | None = None, seed: int = 0,
                 interaction_scale: float = 0.3, coupling_scale: float = 0.3,
                 interaction_seed: int | None = None, **linear_kwargs):
        super().__init__(space, hw, seed=seed, **linear_kwargs)
        self.interaction_scale = float(interaction_scale)
        self.coupling_scale = float(coupling_scale)
        n_groups = space.num_stages + space.num_head_slots
        n_w = len(space.width_multipliers)
        rng = np.random.default_rng([seed if interaction_seed is None else interaction_seed, 0x22])
        self.pairs = list(itertools.combinations(range(n_groups), 2))
        self.width_tables = rng.normal(size=(len(self.pairs), n_w, n_w))
        self.exp_coef = rng.normal(size=len(self.pairs))
        self.pair_scale = np.array(
            [
                self.coupling_scale
                if (i < space.num_stages) != (j < space.num_stages)
                else self.interaction_scale
                for i, j in self.pairs
            ]
        )

    def _groups(self, genome: Genome) -> list[tuple[int, float]]:
        e = self.space.expansion_ratios
        groups = [
            (st.width_index, sum(e[i] for i in st.expansion_indices) / st.depth) for st in genome.backbone
        ]
        groups += [(g.width_index, e[g.expansion_index]) for g in genome.head]
        return groups

    def interaction_part(self, genome: Genome) -> float:
        groups = self._groups(genome)
        total = 0.0
        for k, (i, j) in enumerate(self.pairs):
            scale = self.pair_scale[k]
            if scale == 0:
                continue
            (wi, ei), (wj, ej) = groups[i], groups[j]
            total += scale * (self.width_tables[k, wi, wj] + self.exp_coef[k] * ei * ej)
        return float(total)

    def __call__(self, genome: Genome) -> float:
        return self.linear_part(genome) + self.interaction_part(genome) + self._noise(genome)


class ExternalCommandOracle:
    """Runs a command with the canonical genome on stdin; stdout is the fitness."""

    def __init__(self, command: str | Sequence[str], timeout: float = 60.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValueError("external oracle needs a command")
        self.timeout = float(timeout)
        self.launches = 0

    def __call__(self, genome: Genome) -> float:
        text = genome_to_canonical_text(genome)
        gid = hashlib.sha256(text.encode()).hexdigest()[:12]
        self.launches += 1
        try:
            proc = subprocess.run(
                self.argv, input=text, capture_output=True, text=True, timeout=self.timeout
            )
        except subprocess.TimeoutExpired:
            raise OracleError(f"genome {gid}: oracle timed out after {self.timeout}s") from None
        except OSError as exc:
            raise OracleError(f"genome {gid}: cannot launch oracle: {exc}") from None
        if proc.returncode != 0:
            raise OracleError(
                f"genome {gid}: oracle exited with status {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        out = proc.stdout.strip()
        try:
            value = float(out)
        except ValueError:
            raise OracleError(f"genome {gid}: cannot parse fitness from {out[:80]!r}") from None
        if not math.isfinite(value):
            raise OracleError(f"genome {gid}: non-finite fitness {out!r}")
        return value


def make_oracle(spec: OracleSpec, space: SearchSpace, hw: HardwareProfile | None = None) -> Callable[[Genome], float]:
    params = dict(spec.parameters)
    if spec.kind == "external_command":
        return ExternalCommandOracle(params["command"], params.get("timeout", 60.0))
    params.setdefault("noise_std", spec.noise_std)
    params.setdefault("noise_seed", spec.noise_seed)
    if spec.kind == "synthetic_linear":
        return SyntheticLinearOracle(space, hw, **params)
    return SyntheticRuggedOracle(space, hw, **params)


# --- scoring -------------------------------------------------------------------


class Evaluator:
    """Scores candidate batches with the oracle, caching and logging every call.

    Cache keys are ``(canonical genome, context hash)``.  Unique cache misses of
    a batch may be evaluated concurrently; log order always follows slot order.
    """

    def __init__(self, oracle: Callable[[Genome], float], space: SearchSpace, seed: int = 0,
                 log: EvalLog | None = None, jobs: int = 1):
        self.oracle = oracle
        self.space = space
        self.seed = seed
        self.log = log
        self.jobs = max(1, int(jobs))
        self.cache: dict[tuple[str, str], float] = {}
        self.records: list[EvalRecord] = []
        self.oracle_calls = 0
        self.evaluations = 0

    def _map(self, fn, items):
        if self.jobs == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))

    def oracle_scores(self, candidates: Sequence[tuple[Genome, CostReport]], module: ModuleKind,
                      swap: int, generation: int) -> list[ScoredGenome]:
        keyed = []
        for genome, report in candidates:
            text = genome_to_canonical_text(genome, compact=True)
            keyed.append((genome, report, text, context_hash(genome, module)))
        todo: dict[tuple[str, str], Genome] = {}
        for genome, _, text, ctx in keyed:
            if (text, ctx) not in self.cache and (text, ctx) not in todo:
                todo[(text, ctx)] = genome
        values = self._map(self.oracle, list(todo.values()))
        fresh = []
        for key, value in zip(todo, values):
            value = float(value)
            self.cache[key] = value
        self.oracle_calls += len(todo)
        logged = set()
        out = []
        for genome, report, text, ctx in keyed:
            fitness = self.cache[(text, ctx)]
            if (text, ctx) in todo and (text, ctx) not in logged:
                logged.add((text, ctx))
                fresh.append(EvalRecord(text, fitness, report.total, ORACLE, ctx, swap, generation, self.seed))
            out.append(ScoredGenome(genome, fitness, report, ORACLE, ctx, text))
        self._emit(fresh)
        self.evaluations += len(candidates)
        return out

    def _emit(self, records: list[EvalRecord]) -> None:
        self.records.extend(r for r in records if r.fitness_source == ORACLE)
        if self.log is not None and records:
            self.log.write(records)

    def score(self, candidates: Sequence[tuple[Genome, CostReport]], module: ModuleKind,
              swap: int, generation: int) -> list[ScoredGenome]:
        return self.oracle_scores(candidates, module, swap, generation)

    def verify(self, scored: Sequence[ScoredGenome], module: ModuleKind, swap: int,
               generation: int) -> list[ScoredGenome]:
        """Replace predictor-sourced fitness with oracle values."""
        pending = [(i, s) for i, s in enumerate(scored) if s.fitness_source != ORACLE]
        if not pending:
            return list(scored)
        checked = self.oracle_scores([(s.genome, s.cost) for _, s in pending], module, swap, generation)
        out = list(scored)
        for (i, _), new in zip(pending, checked):
            out[i] = new
        return out

    def end_generation(self) -> None:
        """Hook called between generations; the plain oracle evaluator has nothing to do."""


def audit_record(record: EvalRecord, space: SearchSpace, hw: HardwareProfile) -> CostReport:
    """Recompute the cost of a logged genome (used by tests and the report command)."""
    genome = genome_from_canonical_text(record.canonical_genome, space)
    return genome_cost(genome, space, hw)
