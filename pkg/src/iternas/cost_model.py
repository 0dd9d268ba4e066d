"""Analytic resource costs and MAX78002-class feasibility checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .search_space import Genome, ModuleKind, SearchSpace


class BudgetInconsistencyError(ValueError):
    """Module budgets do not fit inside the total budget."""


def round_half_up(x: float) -> int:
    # the epsilon absorbs float products such as 0.35 * 30 landing just under .5
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True)
class CostVector:
    """Resource usage.

    ``params`` and ``primal_layers`` accumulate when two parts are combined;
    ``activation_bytes`` is a peak, so combining takes the maximum.
    """

    params: int = 0
    activation_bytes: int = 0
    primal_layers: int = 0

    def __post_init__(self):
        if min(self.params, self.activation_bytes, self.primal_layers) < 0:
            raise ValueError("cost components must be non-negative")

    def __add__(self, other: "CostVector") -> "CostVector":
        return CostVector(
            self.params + other.params,
            max(self.activation_bytes, other.activation_bytes),
            self.primal_layers + other.primal_layers,
        )

    def __le__(self, other: "CostVector") -> bool:
        return (
            self.params <= other.params
            and self.activation_bytes <= other.activation_bytes
            and self.primal_layers <= other.primal_layers
        )

    def exceeded(self, limit: "CostVector") -> list[tuple[str, int, int]]:
        return [
            (name, getattr(limit, name), getattr(self, name))
            for name in ("params", "activation_bytes", "primal_layers")
            if getattr(self, name) > getattr(limit, name)
        ]

    def to_dict(self) -> dict:
        return {"params": self.params, "act_bytes": self.activation_bytes, "layers": self.primal_layers}

    @classmethod
    def from_dict(cls, data: dict) -> "CostVector":
        return cls(
            int(data["params"]),
            int(data.get("act_bytes", data.get("activation_bytes", 0))),
            int(data.get("layers", data.get("primal_layers", 0))),
        )


@dataclass(frozen=True)
class HardwareProfile:
    max_channels: int = 2048
    max_primal_layers: int = 128
    max_activation_bytes: int = 80 * 1024
    activation_bytes_per_element: int = 1
    streaming_mode: bool = True

    def __post_init__(self):
        limits = (
            self.max_channels,
            self.max_primal_layers,
            self.max_activation_bytes,
            self.activation_bytes_per_element,
        )
        if min(limits) <= 0:
            raise ValueError("hardware limits must be positive")


HARDWARE_PRESETS = {
    "max78002": HardwareProfile(2048, 128, 81_920, 1, True),
}


def hardware_preset(name: str) -> HardwareProfile:
    try:
        return HARDWARE_PRESETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown hardware preset {name!r}; known: {sorted(HARDWARE_PRESETS)}") from None


@dataclass(frozen=True)
class CostProfile:
    tau_total: CostVector
    tau_backbone: CostVector
    tau_head: CostVector

    def __post_init__(self):
        combined = self.tau_backbone + self.tau_head
        if not combined <= self.tau_total:
            over = ", ".join(f"{n} {m} > {lim}" for n, lim, m in combined.exceeded(self.tau_total))
            raise BudgetInconsistencyError(f"backbone + head budgets exceed the total budget: {over}")

    def for_module(self, module: ModuleKind | None) -> CostVector:
        if module is None:
            return self.tau_total
        return self.tau_backbone if module is ModuleKind.BACKBONE else self.tau_head


@dataclass(frozen=True)
class CostReport:
    backbone: CostVector
    head: CostVector
    total: CostVector
    violations: tuple[tuple[str, int, int], ...] = field(default_factory=tuple)
    checks: tuple[tuple[str, int, int], ...] = field(default_factory=tuple)  # (name, limit, measured), all limits

    def module(self, module: ModuleKind | None) -> CostVector:
        if module is None:
            return self.total
        return self.backbone if module is ModuleKind.BACKBONE else self.head

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "head": self.head.to_dict(),
            "total": self.total.to_dict(),
            "violations": [{"name": n, "limit": lim, "measured": m} for n, lim, m in self.violations],
        }

    def constraint_table(self, profile: "CostProfile | None" = None) -> dict:
        table = {n: {"limit": lim, "measured": m, "pass": m <= lim} for n, lim, m in self.checks}
        if profile is not None:
            for module in (ModuleKind.BACKBONE, ModuleKind.HEAD, None):
                name = f"budget_{module.value if module else 'total'}"
                used, limit = self.module(module), profile.for_module(module)
                table[name] = {"limit": limit.to_dict(), "measured": used.to_dict(), "pass": used <= limit}
        return table


def block_params(in_channels: int, expansion: float) -> int:
    """Weights of a bias-free bottleneck: 1x1 reduce, 3x3, 1x1 expand."""
    mid = max(1, round_half_up(in_channels * expansion))
    return in_channels * mid + 9 * mid * mid + mid * in_channels


def stage_channels(space: SearchSpace, stage: int, width_index: int) -> int:
    return round_half_up(space.stage_base_widths[stage] * space.width_multipliers[width_index])


def head_channels(space: SearchSpace, slot: int, width_index: int) -> int:
    return round_half_up(space.head_blocks[slot].base_width * space.width_multipliers[width_index])


def stage_resolution(space: SearchSpace, stage: int) -> int:
    return max(1, space.input_resolution >> stage)


def num_detection_outputs(space: SearchSpace) -> int:
    return sum(1 for slot in space.head_blocks if slot.role_tag == "yolo_head")


def genome_cost(genome: Genome, space: SearchSpace, hw: HardwareProfile) -> CostReport:
    """Parameters, peak activation and primal-layer count per module.

    Backbone stage ``s`` runs at ``input_resolution / 2**s``; head blocks run
    at the resolution of the last backbone stage.  The stem counts as one
    backbone layer and each ``yolo_head`` slot adds one output layer to the
    head.  With streaming enabled the first stage is exempt from the
    activation limit.
    """
    bpe = hw.activation_bytes_per_element
    params = layers = 0
    peak = checked_peak = 0
    max_ch = 0
    for s, stage in enumerate(genome.backbone):
        ch = stage_channels(space, s, stage.width_index)
        max_ch = max(max_ch, ch)
        for i in stage.expansion_indices:
            params += block_params(ch, space.expansion_ratios[i])
        layers += 3 * stage.depth
        res = stage_resolution(space, s)
        act = ch * res * res * bpe
        peak = max(peak, act)
        if not (hw.streaming_mode and s == 0):
            checked_peak = max(checked_peak, act)
    backbone = CostVector(params, peak, layers + 1)

    head_res = stage_resolution(space, space.num_stages - 1)
    params = layers = peak = 0
    for h, gene in enumerate(genome.head):
        ch = head_channels(space, h, gene.width_index)
        max_ch = max(max_ch, ch)
        params += block_params(ch, space.expansion_ratios[gene.expansion_index])
        layers += 3
        peak = max(peak, ch * head_res * head_res * bpe)
    checked_peak = max(checked_peak, peak)
    head = CostVector(params, peak, layers + num_detection_outputs(space))

    total = backbone + head
    checks = (
        ("max_channels", hw.max_channels, max_ch),
        ("max_primal_layers", hw.max_primal_layers, total.primal_layers),
        ("max_activation_bytes", hw.max_activation_bytes, checked_peak),
    )
    violations = tuple(c for c in checks if c[2] > c[1])
    return CostReport(backbone, head, total, violations, checks)


def is_feasible(report: CostReport, profile: CostProfile, module: ModuleKind | None = None) -> bool:
    """Hardware limits hold and the addressed module fits its budget.

    ``module=None`` checks the whole network against the total budget.
    """
    return not report.violations and report.module(module) <= profile.for_module(module)
