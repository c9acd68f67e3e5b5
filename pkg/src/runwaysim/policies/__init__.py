"""Sequencing policies."""

from .baselines import DStatResult, ExpectedValueModel, dstat_optimize, dstat_policy, fcfs_policy
from .heuristics import DetHeurController, OpCounts, PolicyConfig, SimHeurController
from .search import (
    SequenceStats,
    move_operator_H,
    mutate,
    mutation_window,
    rank_and_select,
    shift,
    triangular_index,
    update_stats,
)

__all__ = [
    "DStatResult", "ExpectedValueModel", "dstat_optimize", "dstat_policy", "fcfs_policy",
    "DetHeurController", "OpCounts", "PolicyConfig", "SimHeurController",
    "SequenceStats", "move_operator_H", "mutate", "mutation_window", "rank_and_select",
    "shift", "triangular_index", "update_stats",
]
