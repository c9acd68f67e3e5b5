"""Benchmarks for the compiled and pure-Python kernels, and calibration of
the per-operation virtual costs used by the virtual-budget clock."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict
from typing import Dict, List

import numpy as np
from scipy.optimize import nnls

from . import kernels
from .engine import Simulation
from .harness import ExperimentPlan, VirtualCosts, desk_schedule, generate_scenarios
from .paths import pregenerate_true_path, stream
from .policies import DetHeurController, PolicyConfig, SimHeurController

OP_FIELDS = ("passes", "ig_draws", "sep_draws", "flight_evals", "rs_pairs", "moves")
COST_FIELDS = ("pass_overhead", "ig_draw", "sep_draw", "flight_eval", "rs_pair", "move")


@contextmanager
def backend(name: str):
    prev = kernels.use_backend(name)
    try:
        yield
    finally:
        kernels.use_backend(prev)


def available_backends() -> List[str]:
    out = ["python"]
    try:
        kernels.load_backend("compiled")
        out.insert(0, "compiled")
    except ImportError:
        pass
    return out


def _timeit(fn, min_time=0.2):
    """Seconds per call, repeating until ``min_time`` has elapsed."""
    n = 0
    t0 = time.perf_counter()
    while True:
        fn()
        n += 1
        el = time.perf_counter() - t0
        if el >= min_time:
            return el / n


def kernel_benchmarks(min_time: float = 0.2, seed: int = 0) -> List[dict]:
    """Per-call time of each hot kernel for every available backend."""
    rng = np.random.default_rng(seed)
    S, l, F = 20, 15, 60
    seqs = np.array([rng.permutation(F)[:l] for _ in range(S)], dtype=np.int32)
    q = rng.uniform(0, 100, F)
    travel = rng.uniform(20, 40, F)
    z = rng.gamma(25, 1 / 25, F)
    a = q + 40
    g = rng.uniform(0.4, 1.0, F)
    cls = rng.integers(0, 4, F).astype(np.int32)
    sep = np.ascontiguousarray(rng.uniform(1, 3, (4, 4)))
    J = np.zeros(S)
    xi = np.zeros(S)
    order = np.ascontiguousarray(rng.permutation(F).astype(np.int32))
    us = rng.random(100)
    gaps = rng.uniform(1, 100, 100)
    sig = np.full(100, 0.5)
    out = np.zeros(100)
    grid = np.cumsum(np.full((F, 2000), -0.01), axis=1) + 15.0
    hits = np.zeros(F)
    cases = {
        "ig_quantile x100": lambda m: m.ig_quantiles(gaps, sig, us, out),
        "erlang_quantile x100": lambda m: m.erlang_unit_quantiles(25.0, us, out),
        "sequence_costs 20x15": lambda m: m.sequence_costs(
            seqs, 0.0, q, travel, z, a, g, cls, sep, 1.5, 50.0, 80.0, True, 0, -1.0, True,
            0.5, 0.5, 15.0, 0.0, J, xi),
        "order_cost 60": lambda m: m.order_cost(order, -np.inf, q, travel, z, a, g, cls, sep,
                                                1.5, 50.0, 80.0, 0.5, 0.5, 15.0, 0.0),
        "first_hits 60x2000": lambda m: m.first_hits(grid, 0.01, 0.0, np.zeros(F), hits),
    }
    rows = []
    mods = {b: kernels.load_backend(b) for b in available_backends()}
    for name, fn in cases.items():
        row = {"kernel": name}
        for b, m in mods.items():
            row[b] = _timeit(lambda: fn(m), min_time)
        if "compiled" in row:
            row["speedup"] = row["python"] / row["compiled"]
        rows.append(row)
    return rows


def _profile_controller(policy: str, scenario, path, pcfg: PolicyConfig,
                        compression: float = 60.0):
    """Per-pass CPU seconds and op counts of one full process-clock run.

    Each pass (state snapshot, controller step, engine step) advances the
    simulation clock by its own measured CPU time, exactly as a
    ``clock_mode="process"`` run does.
    """
    sim = Simulation(scenario, path, log=False)
    if policy == "simheur":
        ctrl = SimHeurController(pcfg, stream(scenario.seed, "simheur-search"),
                                 stream(scenario.seed, "simheur-predict"))
    else:
        ctrl = DetHeurController(pcfg, stream(scenario.seed, "detheur-search"))
    scale = compression / 60.0
    X, y = [], []
    last = time.process_time()
    while sim.n_unreleased > 0:
        action = ctrl.step(sim.state())
        if action:
            sim.mark(action)
        now = time.process_time()
        el = max(now - last, 1e-9)
        last = now
        y.append(el)
        X.append([getattr(ctrl.last_ops, f) for f in OP_FIELDS])
        sim.advance(el * scale)
    return np.array(X, dtype=float), np.array(y)


def calibrate_virtual_costs(backend_name: str = "python", n_scenarios: int = 1, seed: int = 0,
                            sigma: float = 0.5) -> Dict[str, object]:
    """Fit non-negative per-operation CPU costs by least squares on the
    per-pass timings of full process-clock runs of both dynamic controllers
    on desk scenarios."""
    sched, _ = desk_schedule()
    plan = ExperimentPlan(strata=(sigma,), scenarios_per_stratum=n_scenarios, base_seed=seed)
    Xs, ys = [], []
    with backend(backend_name):
        for sc in generate_scenarios(plan, sched):
            path = pregenerate_true_path(sc)
            for pol in ("simheur", "detheur"):
                X, y = _profile_controller(pol, sc, path, PolicyConfig())
                Xs.append(X)
                ys.append(y)
    X = np.vstack(Xs)
    y = np.concatenate(ys)
    coef, _ = nnls(X, y)
    pred = X @ coef
    r2 = 1.0 - float(np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2))
    costs = VirtualCosts(**{f: float(c) for f, c in zip(COST_FIELDS, coef)})
    return {"backend": backend_name, "costs": asdict(costs), "r2": r2, "n_passes": int(y.size),
            "mean_pass_seconds": float(y.mean()),
            "total_seconds": float(y.sum())}


def policy_benchmark(n_scenarios: int = 1, seed: int = 0, policies=("simheur", "detheur")):
    """Wall time of full virtual-clock runs under each available backend."""
    from .harness import run_policy

    sched, _ = desk_schedule()
    plan = ExperimentPlan(strata=(0.5,), scenarios_per_stratum=n_scenarios, base_seed=seed)
    rows = []
    for sc in generate_scenarios(plan, sched):
        path = pregenerate_true_path(sc)
        for pol in policies:
            row = {"policy": pol, "scenario": sc.meta_dict()["scenario"]}
            objs = {}
            for b in available_backends():
                with backend(b):
                    t0 = time.perf_counter()
                    r = run_policy(sc, pol, path=path)
                    row[b] = time.perf_counter() - t0
                    objs[b] = r.objective
            row["objective"] = objs
            rows.append(row)
    return rows


def format_rows(rows: List[dict]) -> str:
    lines = []
    for r in rows:
        parts = []
        for k, v in r.items():
            if isinstance(v, float):
                parts.append(f"{k}={v:.4g}")
            else:
                parts.append(f"{k}={v}")
        lines.append("  ".join(parts))
    return "\n".join(lines)
