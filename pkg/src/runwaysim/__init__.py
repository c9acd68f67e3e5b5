"""Stochastic runway sequencing: scenario model, sample paths, event engine,
sequencing policies, delay calibration and the experiment harness."""

from . import kernels
from .calibration import (FittedParams, FlightRecord, filter_days, fit_all, fit_gamma_params,
                          gamma_params_from_moments, sample_pretactical_delay)
from .engine import (SequenceEvaluator, Simulation, SystemState, landing_recursion,
                     objective_from_outcome, static_order_landings)
from .harness import (ExperimentPlan, MetricsTable, RunResult, VirtualCosts, compare_policies,
                      desk_schedule, emit_reports, generate_scenarios, run_experiment,
                      run_policy)
from .model import (CostConfig, FlightSpec, ScenarioConfig, SeparationMatrix, WeatherConfig,
                    flight_cost, required_separation, total_objective)
from .paths import (PredictedPath, TrueSamplePath, expected_value_path, pregenerate_true_path,
                    sample_erlang_quantile, sample_first_hitting_time, sample_predicted_path,
                    stream)
from .policies import (DetHeurController, PolicyConfig, SimHeurController, dstat_optimize,
                       fcfs_policy, rank_and_select)

__version__ = "0.1.0"

__all__ = [
    "kernels",
    "FittedParams", "FlightRecord", "filter_days", "fit_all", "fit_gamma_params",
    "gamma_params_from_moments", "sample_pretactical_delay",
    "SequenceEvaluator", "Simulation", "SystemState", "landing_recursion",
    "objective_from_outcome", "static_order_landings",
    "ExperimentPlan", "MetricsTable", "RunResult", "VirtualCosts", "compare_policies",
    "desk_schedule", "emit_reports", "generate_scenarios", "run_experiment", "run_policy",
    "CostConfig", "FlightSpec", "ScenarioConfig", "SeparationMatrix", "WeatherConfig",
    "flight_cost", "required_separation", "total_objective",
    "PredictedPath", "TrueSamplePath", "expected_value_path", "pregenerate_true_path",
    "sample_erlang_quantile", "sample_first_hitting_time", "sample_predicted_path", "stream",
    "DetHeurController", "PolicyConfig", "SimHeurController", "dstat_optimize", "fcfs_policy",
    "rank_and_select",
]
