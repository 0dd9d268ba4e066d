"""Run configuration: a YAML document with one section per component."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .cost_model import CostProfile, CostVector, HardwareProfile, hardware_preset
from .evaluator import OracleSpec
from .evolution import SearchConfig
from .predictor import PredictorPolicy
from .search_space import SearchSpace, space_from_dict, space_to_dict

OUTPUT_DIR_ENV = "ITERNAS_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


DEFAULT_BUDGETS = {
    "total": {"params": 8_000_000, "primal_layers": 128},
    "backbone": {"params": 6_000_000, "primal_layers": 100},
    "head": {"params": 2_000_000, "primal_layers": 28},
}

_TOP_KEYS = {"output_dir", "hardware", "space", "budgets", "search", "oracle", "predictor"}


@dataclass(frozen=True)
class RunConfig:
    space: SearchSpace
    hardware: HardwareProfile
    budgets: CostProfile
    search: SearchConfig
    oracle: OracleSpec
    predictor_policy: PredictorPolicy | None
    output_dir: Path

    def header(self) -> dict:
        return {
            "search": self.search.to_dict(),
            "space": space_to_dict(self.space),
            "hardware": vars(self.hardware).copy(),
            "budgets": {
                "total": self.budgets.tau_total.to_dict(),
                "backbone": self.budgets.tau_backbone.to_dict(),
                "head": self.budgets.tau_head.to_dict(),
            },
            "oracle": {"kind": self.oracle.kind, "noise_std": self.oracle.noise_std},
            "predictor": None if self.predictor_policy is None else vars(self.predictor_policy).copy(),
        }


def _section(data: dict, name: str) -> dict:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


def _dataclass_from(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section}: {exc}") from None


def _hardware(value) -> HardwareProfile:
    if value is None:
        return hardware_preset("max78002")
    if isinstance(value, str):
        try:
            return hardware_preset(value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if isinstance(value, dict):
        values = dict(value)
        preset = values.pop("preset", None)
        base = vars(hardware_preset(preset)).copy() if preset else {}
        base.update(values)
        return _dataclass_from(HardwareProfile, base, "hardware")
    raise ConfigError("hardware must be a preset name or a mapping")


def _budgets(data: dict, hw: HardwareProfile) -> CostProfile:
    """Missing activation budgets default to the hardware limit."""
    section = {**DEFAULT_BUDGETS, **data} if data else DEFAULT_BUDGETS
    vectors = {}
    for name in ("total", "backbone", "head"):
        entry = section.get(name)
        if not isinstance(entry, dict):
            raise ConfigError(f"budgets.{name} must be a mapping")
        unknown = set(entry) - {"params", "activation_bytes", "primal_layers"}
        if unknown:
            raise ConfigError(f"unknown keys in budgets.{name}: {sorted(unknown)}")
        try:
            vectors[name] = CostVector(
                int(entry["params"]),
                int(entry.get("activation_bytes", hw.max_activation_bytes)),
                int(entry.get("primal_layers", hw.max_primal_layers)),
            )
        except KeyError as exc:
            raise ConfigError(f"budgets.{name} is missing {exc}") from None
    # BudgetInconsistencyError propagates: callers map it to its own exit code
    return CostProfile(vectors["total"], vectors["backbone"], vectors["head"])


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        space = space_from_dict(_section(data, "space"))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid space: {exc}") from None
    hw = _hardware(data.get("hardware"))
    budgets = _budgets(_section(data, "budgets"), hw)
    search = _dataclass_from(SearchConfig, _section(data, "search"), "search")
    oracle = _dataclass_from(OracleSpec, _section(data, "oracle"), "oracle")
    pred = data.get("predictor")
    policy = None if pred is None else _dataclass_from(PredictorPolicy, pred, "predictor")
    out = Path(os.environ.get(OUTPUT_DIR_ENV) or data.get("output_dir") or "runs/latest")
    return RunConfig(space, hw, budgets, search, oracle, policy, out)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data or {})
