"""Energy balancing weights for causal inference."""

from .balancing import BalancingWeights, energy_balancing_weights
from .data import DataError, Sample, load_table, standardize
from .diagnostics import BalanceReport, balance_report
from .energy import distance_matrix, energy_distance, weighted_energy_distance
from .estimation import EstimateResult, bootstrap_estimate, logistic_ipw_weights, weighted_ate, weighted_att
from .itr import LinearRule, evaluate_value, fit_itr
from .qp import QuadraticProgram, solve_qp

__version__ = "0.1.0"

__all__ = [
    "BalanceReport", "BalancingWeights", "DataError", "EstimateResult", "LinearRule",
    "QuadraticProgram", "Sample", "balance_report", "bootstrap_estimate", "distance_matrix",
    "energy_balancing_weights", "energy_distance", "evaluate_value", "fit_itr", "load_table",
    "logistic_ipw_weights", "solve_qp", "standardize", "weighted_ate", "weighted_att",
    "weighted_energy_distance",
]
