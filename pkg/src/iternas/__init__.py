"""Iterative hardware-aware evolutionary architecture search over an abstract genome."""

from .controller import MemoryBuffer, SwapRecord, passthrough_init, run_inner_search, run_iterative_search
from .cost_model import (
    CostProfile,
    CostReport,
    CostVector,
    HardwareProfile,
    block_params,
    genome_cost,
    hardware_preset,
    is_feasible,
)
from .evaluator import EvalRecord, Evaluator, OracleSpec, ScoredGenome, load_records, make_oracle
from .evolution import InfeasibleSpaceError, SearchConfig, SearchProblem
from .predictor import HybridEvaluator, PredictorPolicy, fit, predict
from .search_space import (
    Genome,
    HeadGene,
    ModuleKind,
    SearchSpace,
    StageGene,
    default_space,
    encode,
    genome_from_canonical_text,
    genome_to_canonical_text,
    sample_uniform,
)

__version__ = "0.1.0"
