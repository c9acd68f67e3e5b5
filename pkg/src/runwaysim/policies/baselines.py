"""Static baselines: first-come-first-served and the DStat local search."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..engine import fcfs_order, static_order_landings
from ..model import ScenarioConfig
from ..paths import TrueSamplePath


def fcfs_policy(config: ScenarioConfig, path: TrueSamplePath):
    """Release every flight the moment it reaches the pool.

    Returns ``(L, A, rho, Q, R)`` arrays indexed by flight id.
    """
    return static_order_landings(config, path, fcfs_order(path))


class ExpectedValueModel:
    """Deterministic horizon-start view used by DStat.

    Pool entry is ``a + pre_delay - tau``, travel after release is exactly
    ``tau``, separations are their weather-adjusted means and the bad-weather
    window is the initial forecast.
    """

    def __init__(self, config: ScenarioConfig):
        F = config.n_flights
        c = config.costs
        self.q = config.expected_arrivals() - c.tau
        self.travel = np.full(F, c.tau)
        self.z = np.ones(F)
        self.a = np.array([f.a for f in config.flights], dtype=float)
        self.g = np.array([f.g for f in config.flights], dtype=float)
        self.cls = np.array([f.cls for f in config.flights], dtype=np.int32)
        self.sep = np.ascontiguousarray(config.separations.minutes())
        self.phi = float(config.separations.phi)
        w = config.weather
        self.w0, self.w1 = (float(w.t0), float(w.t1)) if w.present else (math.inf, -math.inf)
        self.cost_args = (c.theta_s, c.theta_w, c.gamma_s, c.gamma_w)

    def cost(self, seq) -> float:
        seq = np.ascontiguousarray(seq, dtype=np.int32)
        return kernels.order_cost(seq, -math.inf, self.q, self.travel, self.z, self.a, self.g,
                                  self.cls, self.sep, self.phi, self.w0, self.w1,
                                  *self.cost_args)


@dataclass
class DStatResult:
    sequence: list
    cost: float
    trace: np.ndarray       # best cost after every iteration (index 0 = start)
    iterations: int
    final_streak: int


def dstat_optimize(config: ScenarioConfig, rng: np.random.Generator, c_max: int = 10_000,
                   window: int = 6) -> DStatResult:
    """Window-shuffle local search on the expected-value problem.

    Starts from the order of ``a + pre_delay`` (ties by id), repeatedly
    shuffles a random block of ``window`` consecutive flights and keeps the
    result only if it is strictly cheaper. Stops after ``c_max`` consecutive
    failures. With fewer than ``window`` flights the block is the whole
    sequence.
    """
    model = ExpectedValueModel(config)
    F = config.n_flights
    eta = config.expected_arrivals()
    best = np.array(sorted(range(F), key=lambda i: (eta[i], i)), dtype=np.int32)
    best_cost = model.cost(best) if F else 0.0
    if F <= 1:
        return DStatResult(best.tolist(), best_cost, np.array([best_cost]), 0, 0)
    w = min(window, F)
    n_starts = F - w + 1
    trace = [best_cost]
    c = 0
    it = 0
    cur = best.copy()
    while c < c_max:
        st = int(rng.integers(n_starts))
        cur[:] = best
        cur[st:st + w] = best[st:st + w][rng.permutation(w)]
        cost = model.cost(cur)
        it += 1
        if cost < best_cost:
            best, cur = cur, best
            best_cost = cost
            c = 0
        else:
            c += 1
        trace.append(best_cost)
    return DStatResult(best.tolist(), best_cost, np.asarray(trace), it, c)


def dstat_policy(config: ScenarioConfig, path: TrueSamplePath, rng: np.random.Generator,
                 c_max: int = 10_000):
    """Optimize once at the horizon start, then replay the fixed order on the
    true path (each flight released as early as the order allows)."""
    res = dstat_optimize(config, rng, c_max=c_max)
    return static_order_landings(config, path, res.sequence), res
