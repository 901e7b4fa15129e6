"""Treatment-effect estimation for randomized trials with missing binary outcomes."""
from .data import (
    AdjustmentSpec,
    StratifiedCounts,
    TrialDataset,
    TrialRecord,
    build_counts,
    counts_from_cells,
    prob,
)
from .dag import Dag, ScenarioDagId, builtin_dag, d_separated, validate_adjustment
from .estimators import (
    EstimateReport,
    aclor,
    delta_ate,
    mar_estimate,
    naive_estimate,
    phi,
    rho,
    rho0,
    theta_stratum,
)
from .robustify import GapPolicy, ate_bounds, positivity_check, rho_bounds, smoothed_rho

__version__ = "0.1.0"
