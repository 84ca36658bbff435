"""Zero-shot cost estimation over generated relational databases."""
from .baseline import ScaledCostBaseline, fit_scaled_cost_baseline
from .encoding import PlanGraphEncoder, QueryGraph, encode
from .executor import CostWeights, ExecResult, brute_force_oracle, execute
from .experiment import ExperimentSpec, run_experiment, run_index_experiment
from .metrics import Metrics, evaluate, qerror
from .model import ModelConfig, ZeroShotCostModel
from .planner import hypothetical_plan, plan

__version__ = "0.1.0"

__all__ = [
    "CostWeights", "ExecResult", "ExperimentSpec", "Metrics", "ModelConfig", "PlanGraphEncoder",
    "QueryGraph", "ScaledCostBaseline", "ZeroShotCostModel", "brute_force_oracle", "encode",
    "evaluate", "execute", "fit_scaled_cost_baseline", "hypothetical_plan", "plan", "qerror",
    "run_experiment", "run_index_experiment",
]
