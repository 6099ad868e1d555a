"""Local epsilon-coresets by layered sampling, and a sequential coreset solver."""
from .core import ContractError, Coreset, Dataset, LossModel, NumericError, ParameterError, full_risk, weighted_gradient, weighted_risk
from .coreset import (
    DegenerateAnchorError,
    InfeasibleBudgetError,
    LayerPartition,
    SizePlan,
    budget_plan,
    build_local_coreset,
    importance_baseline,
    local_coreset,
    pilot_solution,
    partition_layers,
    theoretical_layer_size,
    theoretical_plan,
    uniform_baseline,
)
from .data import IngestionError, gen_gmm, gen_linear, load_csv, write_csv
from .diagnostics import AuditReport, audit_coreset_loss, audit_gradient, check_claim1, error_beta, purity
from .models import GmmModel, LassoModel, LogisticModel, RidgeModel, smoothness_constants
from .optimizers import HostConfig, StepOutcome, em_step, gd_step, prox_step, run_host, subgradient_step
from .sequential import SequentialConfig, SolveResult, boundary_reached, one_shot_solve, run_sequential, solve_on_coreset

__version__ = "0.1.0"
