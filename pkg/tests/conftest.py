import numpy as np
import pytest

from iternas.cost_model import CostProfile, CostVector, hardware_preset
from iternas.search_space import HeadBlockSlot, SearchSpace, default_space

BIG = 10**12


def toy_space() -> SearchSpace:
    """2 stages x depth {1,2} x 2 widths x 2 expansions, 2 head slots: 2,304 genomes."""
    return SearchSpace(
        num_stages=2,
        depth_min=1,
        depth_max=2,
        width_multipliers=(1.0, 1.5),
        expansion_ratios=(0.25, 0.55),
        stage_base_widths=(32, 64),
        head_blocks=(HeadBlockSlot(0, "fpn", 64), HeadBlockSlot(1, "yolo_head", 64)),
        input_resolution=16,
    )


def tiny_space() -> SearchSpace:
    """Two depth-1 stages and two head slots, 2 widths x 2 expansions each: 256 genomes."""
    return SearchSpace(
        num_stages=2,
        depth_min=1,
        depth_max=1,
        width_multipliers=(1.0, 1.5),
        expansion_ratios=(0.25, 0.55),
        stage_base_widths=(16, 32),
        head_blocks=(HeadBlockSlot(0, "pan", 32), HeadBlockSlot(1, "yolo_head", 32)),
        input_resolution=8,
    )


def generous_profile() -> CostProfile:
    return CostProfile(
        CostVector(BIG, BIG, 10**6),
        CostVector(BIG // 2, BIG, 10**6 // 2),
        CostVector(BIG // 2, BIG, 10**6 // 2),
    )


def default_profile() -> CostProfile:
    return CostProfile(
        CostVector(8_000_000, 81_920, 128),
        CostVector(6_000_000, 81_920, 100),
        CostVector(2_000_000, 81_920, 28),
    )


@pytest.fixture
def space():
    return default_space()


@pytest.fixture
def hw():
    return hardware_preset("max78002")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
