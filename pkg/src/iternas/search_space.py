"""Architecture genome, legal value sets, canonical text and uniform sampling.

A genome ``f = (backbone, head)`` stores, for every backbone stage, the number
of active residual blocks, one width index shared by the stage and one
expansion index per active block.  Head blocks have fixed depth and only carry
a width index and an expansion index.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ModuleKind(str, enum.Enum):
    BACKBONE = "backbone"
    HEAD = "head"

    @property
    def other(self) -> "ModuleKind":
        return ModuleKind.HEAD if self is ModuleKind.BACKBONE else ModuleKind.BACKBONE


class GenomeError(ValueError):
    """A genome does not fit the search space it is checked against."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class GenomeParseError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


HEAD_ROLES = ("fpn", "pan", "yolo_head")


@dataclass(frozen=True)
class HeadBlockSlot:
    slot_id: int
    role_tag: str
    base_width: int

    def __post_init__(self):
        if self.role_tag not in HEAD_ROLES:
            raise ValueError(f"unknown head role {self.role_tag!r}, expected one of {HEAD_ROLES}")
        if self.base_width <= 0:
            raise ValueError("head base_width must be positive")


@dataclass(frozen=True)
class SearchSpace:
    num_stages: int
    depth_min: int
    depth_max: int
    width_multipliers: tuple[float, ...]
    expansion_ratios: tuple[float, ...]
    stage_base_widths: tuple[int, ...]
    head_blocks: tuple[HeadBlockSlot, ...]
    input_resolution: int = 32

    def __post_init__(self):
        object.__setattr__(self, "width_multipliers", tuple(float(w) for w in self.width_multipliers))
        object.__setattr__(self, "expansion_ratios", tuple(float(e) for e in self.expansion_ratios))
        object.__setattr__(self, "stage_base_widths", tuple(int(c) for c in self.stage_base_widths))
        object.__setattr__(self, "head_blocks", tuple(self.head_blocks))
        if self.num_stages < 1:
            raise ValueError("num_stages must be >= 1")
        if not 1 <= self.depth_min <= self.depth_max:
            raise ValueError("need 1 <= depth_min <= depth_max")
        for name in ("width_multipliers", "expansion_ratios"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            if values[0] <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.stage_base_widths) != self.num_stages:
            raise ValueError("stage_base_widths needs exactly one entry per stage")
        if any(c <= 0 for c in self.stage_base_widths):
            raise ValueError("stage_base_widths must be positive")
        ids = [slot.slot_id for slot in self.head_blocks]
        if len(set(ids)) != len(ids):
            raise ValueError("head slot ids must be unique")
        if self.input_resolution < 1:
            raise ValueError("input_resolution must be positive")

    @property
    def num_head_slots(self) -> int:
        return len(self.head_blocks)

    @property
    def depth_choices(self) -> range:
        return range(self.depth_min, self.depth_max + 1)

    @property
    def feature_length(self) -> int:
        return self.num_stages * (3 + len(self.width_multipliers)) + 2 * self.num_head_slots

    def size(self) -> int:
        """Number of distinct genomes in the space."""
        n_w, n_e = len(self.width_multipliers), len(self.expansion_ratios)
        per_stage = sum(n_w * n_e**d for d in self.depth_choices)
        return per_stage**self.num_stages * (n_w * n_e) ** self.num_head_slots


def default_head_blocks() -> tuple[HeadBlockSlot, ...]:
    return (
        HeadBlockSlot(0, "fpn", 256),
        HeadBlockSlot(1, "pan", 256),
        HeadBlockSlot(2, "yolo_head", 128),
        HeadBlockSlot(3, "yolo_head", 256),
        HeadBlockSlot(4, "yolo_head", 512),
    )


def default_space(
    num_stages: int = 4,
    stage_base_widths: Sequence[int] = (64, 128, 256, 512),
    head_blocks: Sequence[HeadBlockSlot] | None = None,
    input_resolution: int = 32,
) -> SearchSpace:
    """The ResDets-style space: 2-8 blocks per stage, W and E as published.

    Stage count, base widths and head layout are conventions and can be
    overridden.
    """
    return SearchSpace(
        num_stages=num_stages,
        depth_min=2,
        depth_max=8,
        width_multipliers=(0.8, 1.0, 1.25, 1.5),
        expansion_ratios=(0.20, 0.25, 0.35, 0.45, 0.55),
        stage_base_widths=tuple(stage_base_widths),
        head_blocks=tuple(default_head_blocks() if head_blocks is None else head_blocks),
        input_resolution=input_resolution,
    )


@dataclass(frozen=True)
class StageGene:
    depth: int
    width_index: int
    expansion_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "expansion_indices", tuple(int(i) for i in self.expansion_indices))


@dataclass(frozen=True)
class HeadGene:
    width_index: int
    expansion_index: int


@dataclass(frozen=True)
class Genome:
    backbone: tuple[StageGene, ...]
    head: tuple[HeadGene, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "backbone", tuple(self.backbone))
        object.__setattr__(self, "head", tuple(self.head))

    def module_genes(self, module: ModuleKind) -> tuple:
        return self.backbone if module is ModuleKind.BACKBONE else self.head

    def with_module(self, module: ModuleKind, genes: Sequence) -> "Genome":
        if module is ModuleKind.BACKBONE:
            return Genome(tuple(genes), self.head)
        return Genome(self.backbone, tuple(genes))

    def validate(self, space: SearchSpace) -> "Genome":
        if len(self.backbone) != space.num_stages:
            raise GenomeError(
                f"genome has {len(self.backbone)} stages, space has {space.num_stages}", "stage"
            )
        if len(self.head) != space.num_head_slots:
            raise GenomeError(
                f"genome has {len(self.head)} head genes, space has {space.num_head_slots}", "head"
            )
        n_w, n_e = len(space.width_multipliers), len(space.expansion_ratios)
        for s, stage in enumerate(self.backbone):
            if not space.depth_min <= stage.depth <= space.depth_max:
                raise GenomeError(
                    f"stage.{s}.depth={stage.depth} outside [{space.depth_min}, {space.depth_max}]",
                    f"stage.{s}.depth",
                )
            _check_index(stage.width_index, n_w, f"stage.{s}.width")
            if len(stage.expansion_indices) != stage.depth:
                raise GenomeError(
                    f"stage.{s}.exp has {len(stage.expansion_indices)} entries for depth {stage.depth}",
                    f"stage.{s}.exp",
                )
            for i in stage.expansion_indices:
                _check_index(i, n_e, f"stage.{s}.exp")
        for h, gene in enumerate(self.head):
            _check_index(gene.width_index, n_w, f"head.{h}.width")
            _check_index(gene.expansion_index, n_e, f"head.{h}.exp")
        return self


def _check_index(value: int, length: int, name: str) -> None:
    if not 0 <= value < length:
        raise GenomeError(f"{name}={value} out of range for {length} choices", name)


# --- sampling ---------------------------------------------------------------


def sample_stage(space: SearchSpace, rng: np.random.Generator) -> StageGene:
    depth = int(rng.integers(space.depth_min, space.depth_max + 1))
    width = int(rng.integers(len(space.width_multipliers)))
    exps = tuple(int(i) for i in rng.integers(len(space.expansion_ratios), size=depth))
    return StageGene(depth, width, exps)


def sample_head_gene(space: SearchSpace, rng: np.random.Generator) -> HeadGene:
    return HeadGene(
        int(rng.integers(len(space.width_multipliers))),
        int(rng.integers(len(space.expansion_ratios))),
    )


def sample_module(space: SearchSpace, module: ModuleKind, rng: np.random.Generator) -> tuple:
    if module is ModuleKind.BACKBONE:
        return tuple(sample_stage(space, rng) for _ in range(space.num_stages))
    return tuple(sample_head_gene(space, rng) for _ in range(space.num_head_slots))


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> Genome:
    """Draw every gene independently and uniformly from its legal set."""
    backbone = sample_module(space, ModuleKind.BACKBONE, rng)
    head = sample_module(space, ModuleKind.HEAD, rng)
    return Genome(backbone, head)


def enumerate_module(space: SearchSpace, module: ModuleKind) -> list[tuple]:
    """All legal gene tuples for one module. Only sensible on small spaces."""
    n_w, n_e = len(space.width_multipliers), len(space.expansion_ratios)
    if module is ModuleKind.BACKBONE:
        stages = [
            StageGene(d, w, exps)
            for d in space.depth_choices
            for w in range(n_w)
            for exps in itertools.product(range(n_e), repeat=d)
        ]
        return list(itertools.product(stages, repeat=space.num_stages))
    heads = [HeadGene(w, e) for w in range(n_w) for e in range(n_e)]
    return list(itertools.product(heads, repeat=space.num_head_slots))


def enumerate_genomes(space: SearchSpace) -> list[Genome]:
    backbones = enumerate_module(space, ModuleKind.BACKBONE)
    heads = enumerate_module(space, ModuleKind.HEAD)
    return [Genome(b, h) for b in backbones for h in heads]


# --- feature encoding ---------------------------------------------------------


def encode(genome: Genome, space: SearchSpace) -> np.ndarray:
    """Fixed-length feature vector.

    Per stage: normalized depth, width multiplier, mean expansion ratio of the
    active blocks, one-hot width index.  Per head slot: width multiplier,
    expansion ratio.
    """
    genome.validate(space)
    n_w = len(space.width_multipliers)
    span = space.depth_max - space.depth_min
    out = np.zeros(space.feature_length)
    pos = 0
    for stage in genome.backbone:
        out[pos] = (stage.depth - space.depth_min) / span if span else 0.0
        out[pos + 1] = space.width_multipliers[stage.width_index]
        out[pos + 2] = sum(space.expansion_ratios[i] for i in stage.expansion_indices) / stage.depth
        out[pos + 3 + stage.width_index] = 1.0
        pos += 3 + n_w
    for gene in genome.head:
        out[pos] = space.width_multipliers[gene.width_index]
        out[pos + 1] = space.expansion_ratios[gene.expansion_index]
        pos += 2
    return out


# --- canonical text -----------------------------------------------------------


def _module_items(genome: Genome, module: ModuleKind) -> list[tuple[str, str]]:
    items = []
    if module is ModuleKind.BACKBONE:
        for s, stage in enumerate(genome.backbone):
            items.append((f"stage.{s}.depth", str(stage.depth)))
            items.append((f"stage.{s}.width", str(stage.width_index)))
            items.append((f"stage.{s}.exp", ",".join(str(i) for i in stage.expansion_indices)))
    else:
        for h, gene in enumerate(genome.head):
            items.append((f"head.{h}.width", str(gene.width_index)))
            items.append((f"head.{h}.exp", str(gene.expansion_index)))
    return items


def genome_to_canonical_text(genome: Genome, compact: bool = False) -> str:
    """``key=value`` lines sorted by key.

    ``compact=True`` joins the same lines with ``;`` for single-line contexts
    (JSON logs, CSV cells); the parser accepts both separators.
    """
    items = _module_items(genome, ModuleKind.BACKBONE) + _module_items(genome, ModuleKind.HEAD)
    lines = [f"{k}={v}" for k, v in sorted(items)]
    if compact:
        return ";".join(lines)
    return "\n".join(lines) + "\n"


def module_canonical_text(genome: Genome, module: ModuleKind) -> str:
    return ";".join(f"{k}={v}" for k, v in sorted(_module_items(genome, module)))


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def context_hash(genome: Genome, active: ModuleKind) -> str:
    """Digest of the genes of the module that is held fixed while ``active`` is searched."""
    return digest(module_canonical_text(genome, active.other))


_KEY = re.compile(r"^(stage|head)\.(\d+)\.(depth|width|exp)$")


def genome_from_canonical_text(text: str, space: SearchSpace) -> Genome:
    stages: dict[int, dict[str, object]] = {}
    heads: dict[int, dict[str, object]] = {}
    seen: set[str] = set()
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        col = 1
        for chunk in raw.split(";"):
            if chunk.strip():
                entries.append((lineno, col + len(chunk) - len(chunk.lstrip()), chunk.strip()))
            col += len(chunk) + 1
    for lineno, col, entry in entries:
        if "=" not in entry:
            raise GenomeParseError(f"expected key=value, got {entry!r}", lineno, col)
        key, value = (part.strip() for part in entry.split("=", 1))
        key = re.sub(r"\s+", "", key)
        m = _KEY.match(key)
        if not m:
            raise GenomeParseError(f"unknown key {key!r}", lineno, col)
        if key in seen:
            raise GenomeParseError(f"duplicate key {key!r}", lineno, col)
        seen.add(key)
        kind, idx, attr = m.group(1), int(m.group(2)), m.group(3)
        if kind == "head" and attr == "depth":
            raise GenomeParseError("head blocks have no depth", lineno, col)
        try:
            if attr == "exp" and kind == "stage":
                parsed: object = tuple(int(v) for v in value.replace(" ", "").split(",") if v != "")
            else:
                parsed = int(value)
        except ValueError:
            raise GenomeParseError(f"non-integer value for {key}: {value!r}", lineno, col) from None
        (stages if kind == "stage" else heads).setdefault(idx, {})[attr] = parsed

    if sorted(stages) != list(range(space.num_stages)):
        raise GenomeError(f"expected stages 0..{space.num_stages - 1}, got {sorted(stages)}", "stage")
    if sorted(heads) != list(range(space.num_head_slots)):
        raise GenomeError(
            f"expected head slots 0..{space.num_head_slots - 1}, got {sorted(heads)}", "head"
        )
    backbone = []
    for s in range(space.num_stages):
        fields = stages[s]
        for attr in ("depth", "width", "exp"):
            if attr not in fields:
                raise GenomeError(f"missing stage.{s}.{attr}", f"stage.{s}.{attr}")
        backbone.append(StageGene(fields["depth"], fields["width"], fields["exp"]))
    head = []
    for h in range(space.num_head_slots):
        fields = heads[h]
        for attr in ("width", "exp"):
            if attr not in fields:
                raise GenomeError(f"missing head.{h}.{attr}", f"head.{h}.{attr}")
        head.append(HeadGene(fields["width"], fields["exp"]))
    return Genome(tuple(backbone), tuple(head)).validate(space)


def space_to_dict(space: SearchSpace) -> dict:
    return {
        "num_stages": space.num_stages,
        "depth_min": space.depth_min,
        "depth_max": space.depth_max,
        "width_multipliers": list(space.width_multipliers),
        "expansion_ratios": list(space.expansion_ratios),
        "stage_base_widths": list(space.stage_base_widths),
        "head_blocks": [
            {"slot_id": s.slot_id, "role_tag": s.role_tag, "base_width": s.base_width}
            for s in space.head_blocks
        ],
        "input_resolution": space.input_resolution,
    }


def space_from_dict(data: dict) -> SearchSpace:
    base = default_space()
    heads = data.get("head_blocks")
    head_blocks = (
        base.head_blocks
        if heads is None
        else tuple(HeadBlockSlot(int(h["slot_id"]), str(h["role_tag"]), int(h["base_width"])) for h in heads)
    )
    num_stages = int(data.get("num_stages", base.num_stages))
    return SearchSpace(
        num_stages=num_stages,
        depth_min=int(data.get("depth_min", base.depth_min)),
        depth_max=int(data.get("depth_max", base.depth_max)),
        width_multipliers=tuple(data.get("width_multipliers", base.width_multipliers)),
        expansion_ratios=tuple(data.get("expansion_ratios", base.expansion_ratios)),
        stage_base_widths=tuple(data.get("stage_base_widths", base.stage_base_widths)),
        head_blocks=head_blocks,
        input_resolution=int(data.get("input_resolution", base.input_resolution)),
    )
