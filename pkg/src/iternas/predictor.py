"""Ridge-regression accuracy predictor and the hybrid oracle/predictor evaluator."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cost_model import CostReport
from .evaluator import ORACLE, PREDICTOR, EvalLog, EvalRecord, Evaluator, ScoredGenome
from .search_space import (
    Genome,
    ModuleKind,
    SearchSpace,
    context_hash,
    encode,
    genome_from_canonical_text,
    genome_to_canonical_text,
)


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorPolicy:
    min_training_records: int = 200
    oracle_fraction: float = 0.25
    refresh_interval: int = 1
    ridge_lambda: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.oracle_fraction <= 1.0:
            raise ValueError("oracle_fraction must lie in (0, 1]")
        if self.min_training_records < 1 or self.refresh_interval < 1:
            raise ValueError("min_training_records and refresh_interval must be >= 1")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")


@dataclass(frozen=True)
class PredictorModel:
    weights: np.ndarray  # intercept first
    ridge_lambda: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    training_count: int

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(X) - self.feature_means) / self.feature_scales
        return self.weights[0] + Z @ self.weights[1:]


def fit_arrays(X: np.ndarray, y: np.ndarray, ridge_lambda: float = 1e-3) -> PredictorModel:
    """Closed-form ridge on standardized features; the intercept is not penalized.

    Solved as the least-squares problem on ``[Z; sqrt(lambda) I]``, which has
    the same minimizer as the normal equations without squaring the condition
    number.  With ``lambda == 0`` and collinear features the minimum-norm
    solution is returned.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales == 0] = 1.0
    Z = (X - means) / scales
    y_mean = float(y.mean())
    d = Z.shape[1]
    A = np.vstack([Z, math.sqrt(ridge_lambda) * np.eye(d)])
    b = np.concatenate([y - y_mean, np.zeros(d)])
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    weights = np.concatenate([[y_mean], w])
    if not np.all(np.isfinite(weights)):
        raise FloatingPointError("ridge solution is not finite")
    return PredictorModel(weights, float(ridge_lambda), means, scales, len(y))


def fit(records: Sequence[EvalRecord], space: SearchSpace, ridge_lambda: float = 1e-3,
        min_records: int | None = None) -> PredictorModel:
    needed = math.ceil(space.feature_length / 4)
    if min_records is not None:
        needed = min(needed, min_records)
    if len(records) < max(needed, 2):
        raise InsufficientDataError(f"need at least {max(needed, 2)} records to fit, got {len(records)}")
    X = np.array([encode(genome_from_canonical_text(r.canonical_genome, space), space) for r in records])
    y = np.array([r.fitness for r in records])
    return fit_arrays(X, y, ridge_lambda)


def predict(model: PredictorModel, genome: Genome, space: SearchSpace) -> float:
    return float(model.predict_features(encode(genome, space))[0])


class HybridEvaluator(Evaluator):
    """Oracle for a random ``oracle_fraction`` of candidates, predictor for the rest.

    Until ``min_training_records`` oracle records exist every candidate goes to
    the oracle; the model is fitted as soon as the threshold is reached, even
    in the middle of a batch.  The route of a candidate is a seeded coin keyed by its
    canonical text and context, so it is stable across generations.  The model is refit between generations every
    ``refresh_interval`` generations.  Cached oracle values are always used
    when available.  ``calibration`` collects ``(predicted, true, swap,
    generation)`` whenever the oracle scores a genome the current model could
    have predicted.
    """

    def __init__(self, oracle: Callable[[Genome], float], space: SearchSpace, policy: PredictorPolicy,
                 seed: int = 0, log: EvalLog | None = None, jobs: int = 1):
        super().__init__(oracle, space, seed=seed, log=log, jobs=jobs)
        self.policy = policy
        self.model: PredictorModel | None = None
        self.generations_since_fit = 0
        self.calibration: list[tuple[float, float, int, int]] = []
        self.predictor_scored = 0
        self._features: list[np.ndarray] = []

    def routes_to_oracle(self, text: str, ctx: str) -> bool:
        # keyed by the architecture, so a candidate proposed again keeps its route
        key = hashlib.sha256(f"{self.seed}:{ctx}:{text}".encode()).digest()
        return bool(np.random.default_rng(int.from_bytes(key[:8], "little")).random() < self.policy.oracle_fraction)

    def _calibrate(self, scored: Sequence[ScoredGenome], swap: int, generation: int) -> None:
        if self.model is None or not scored:
            return
        X = np.array([encode(s.genome, self.space) for s in scored])
        for s, p in zip(scored, self.model.predict_features(X)):
            self.calibration.append((float(p), s.fitness, swap, generation))

    def score(self, candidates: Sequence[tuple[Genome, CostReport]], module: ModuleKind,
              swap: int, generation: int) -> list[ScoredGenome]:
        if self.model is None:
            return self._warm_up(candidates, module, swap, generation)
        to_oracle, to_model = [], []
        for slot, (genome, report) in enumerate(candidates):
            text = genome_to_canonical_text(genome, compact=True)
            ctx = context_hash(genome, module)
            if (text, ctx) in self.cache or self.routes_to_oracle(text, ctx):
                to_oracle.append(slot)
            else:
                to_model.append((slot, text, ctx))
        out: list[ScoredGenome | None] = [None] * len(candidates)
        if to_oracle:
            fresh = [
                slot for slot in to_oracle
                if (genome_to_canonical_text(candidates[slot][0], compact=True),
                    context_hash(candidates[slot][0], module)) not in self.cache
            ]
            scored = self.oracle_scores([candidates[s] for s in to_oracle], module, swap, generation)
            for slot, s in zip(to_oracle, scored):
                out[slot] = s
            self._calibrate([out[s] for s in fresh], swap, generation)
        if to_model:
            X = np.array([encode(candidates[slot][0], self.space) for slot, _, _ in to_model])
            preds = self.model.predict_features(X)
            records = []
            for (slot, text, ctx), p in zip(to_model, preds):
                genome, report = candidates[slot]
                out[slot] = ScoredGenome(genome, float(p), report, PREDICTOR, ctx, text)
                records.append(EvalRecord(text, float(p), report.total, PREDICTOR, ctx, swap, generation, self.seed))
            self._emit(records)
            self.predictor_scored += len(to_model)
            self.evaluations += len(to_model)
        return out

    def _warm_up(self, candidates: Sequence[tuple[Genome, CostReport]], module: ModuleKind,
                 swap: int, generation: int) -> list[ScoredGenome]:
        # oracle until the record threshold is met, then fit and route the rest of the batch
        need = max(0, self.policy.min_training_records - len(self.records))
        seen: set[tuple[str, str]] = set()
        cut = len(candidates)
        for i, (genome, _) in enumerate(candidates):
            key = (genome_to_canonical_text(genome, compact=True), context_hash(genome, module))
            if key not in self.cache and key not in seen:
                if len(seen) == need:
                    cut = i
                    break
                seen.add(key)
        out = self.oracle_scores(candidates[:cut], module, swap, generation)
        if cut == len(candidates):
            return out
        self._refit()
        return out + self.score(candidates[cut:], module, swap, generation)

    def _refit(self) -> None:
        for r in self.records[len(self._features):]:
            self._features.append(encode(genome_from_canonical_text(r.canonical_genome, self.space), self.space))
        y = np.array([r.fitness for r in self.records])
        self.model = fit_arrays(np.array(self._features), y, self.policy.ridge_lambda)
        self.generations_since_fit = 0

    def verify(self, scored: Sequence[ScoredGenome], module: ModuleKind, swap: int,
               generation: int) -> list[ScoredGenome]:
        out = super().verify(scored, module, swap, generation)
        for before, after in zip(scored, out):
            if before.fitness_source == PREDICTOR:
                self.calibration.append((before.fitness, after.fitness, swap, generation))
        return out

    def end_generation(self) -> None:
        self.generations_since_fit += 1
        if len(self.records) < self.policy.min_training_records:
            return
        if self.model is None or self.generations_since_fit >= self.policy.refresh_interval:
            self._refit()


__all__ = [
    "HybridEvaluator",
    "InsufficientDataError",
    "ORACLE",
    "PREDICTOR",
    "PredictorModel",
    "PredictorPolicy",
    "fit",
    "fit_arrays",
    "predict",
]
