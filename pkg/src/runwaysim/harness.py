"""Experiment harness: scenario generation, policy runs, metrics and reports.

The default problem is a desk-sized schedule (60 flights scheduled over a
two-hour window, simulation starting one hour earlier) whose pre-tactical
delay distributions are calibrated from a synthetic landing history.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import calibration as cal
from .engine import Simulation, objective_from_outcome
from .model import (CLASSES, CostConfig, FlightSpec, ScenarioConfig, SeparationMatrix,
                    WeatherConfig)
from .paths import pregenerate_true_path, stream
from .policies import (DetHeurController, PolicyConfig, SimHeurController, dstat_policy,
                       fcfs_policy)

POLICIES = ("simheur", "detheur", "fcfs", "dstat")
K_CHOICES = (16, 25, 44, 100, 400)
THETA_CHOICES = (0.1, 0.3, 0.5, 0.7, 0.9)
GAMMA_S_CHOICES = (0.0, 15.0)
G_RANGES = {"H": (0.8, 1.0), "UM": (0.6, 0.8), "LM": (0.6, 0.8), "S": (0.4, 0.6)}
# forecast windows for an eight-hour day counted from one hour before the
# window start (t = 60 .. 540)
DAY_WEATHER_WINDOWS = ((285.0, 315.0), (270.0, 330.0), (240.0, 360.0))
# the same half-widths centred on the desk window [60, 180]
DESK_WEATHER_WINDOWS = ((105.0, 135.0), (90.0, 150.0), (60.0, 180.0))


class ComparisonError(ValueError):
    pass


# --- desk schedule ------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Static schedule plus per-flight landing-time moments from history."""

    a: Tuple[float, ...]
    d: Tuple[float, ...]
    w: Tuple[str, ...]
    xbar: Tuple[float, ...]
    s2: Tuple[float, ...]
    q: float = 15.0

    @property
    def n(self) -> int:
        return len(self.a)

    def h(self, i: int) -> float:
        return self.d[i] - self.q

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "Schedule":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


CLASS_MIX = (0.40, 0.10, 0.45, 0.05)
# scheduled flight durations by class (minutes)
DURATIONS = {"H": (300.0, 660.0), "UM": (90.0, 240.0), "LM": (60.0, 180.0), "S": (45.0, 120.0)}


def desk_schedule(seed: int = 7, n_flights: int = 60, window=(60.0, 180.0), history_days: int = 200,
                  contaminated_share: float = 0.2, outlier_rate: float = 0.01
                  ) -> Tuple[Schedule, cal.FilterResult]:
    """Random schedule and calibrated landing-time moments.

    A synthetic history (some days with delay propagation, a few gross
    outliers) goes through the day filter and the outlier rule before the
    per-flight mean and variance of the landing time are computed.
    """
    rng = stream(seed, "desk-schedule")
    a = np.sort(rng.uniform(window[0], window[1], n_flights))
    w = [CLASSES[k] for k in rng.choice(4, size=n_flights, p=CLASS_MIX)]
    dur = np.array([rng.uniform(*DURATIONS[c]) for c in w])
    d = a - dur
    late_mean = rng.uniform(-5.0, 10.0, n_flights)
    late_sd = rng.uniform(12.0, 25.0, n_flights)
    bad_days = np.flatnonzero(rng.random(history_days) < contaminated_share)
    recs = cal.synthetic_history(a, late_mean, late_sd, history_days, rng,
                                 propagating_days=bad_days, outlier_rate=outlier_rate)
    filt = cal.filter_days(recs)
    keep = set(filt.retained)
    xbar, s2 = [], []
    for i in range(n_flights):
        x = np.array([r.actual_arr_min for r in recs
                      if r.flight_id == i and r.day in keep and abs(r.lateness) <= 120.0])
        xbar.append(float(x.mean()))
        s2.append(float(x.var(ddof=1)))
    sched = Schedule(tuple(map(float, a)), tuple(map(float, d)), tuple(w), tuple(xbar), tuple(s2))
    return sched, filt


# --- experiment plan ----------------------------------------------------------

@dataclass(frozen=True)
class VirtualCosts:
    """CPU seconds charged per controller operation in virtual-budget mode.

    The defaults are a non-negative least-squares fit of per-pass CPU time
    against per-pass operation counts, from full process-clock runs of both
    dynamic controllers on the pure-Python kernels (two desk scenarios,
    about 2.6 million passes, averaged over the two fits).  They are frozen
    here so results do not depend on the machine or the backend.  Refit
    with ``runwaysim bench --calibrate``.
    """

    pass_overhead: float = 7.70e-5
    ig_draw: float = 2.04e-6
    sep_draw: float = 9.31e-6
    flight_eval: float = 7.64e-7
    rs_pair: float = 2.80e-7
    move: float = 1.61e-6

    def seconds(self, ops) -> float:
        return (self.pass_overhead * ops.passes + self.ig_draw * ops.ig_draws
                + self.sep_draw * ops.sep_draws + self.flight_eval * ops.flight_evals
                + self.rs_pair * ops.rs_pairs + self.move * ops.moves)


@dataclass(frozen=True)
class ExperimentPlan:
    strata: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    scenarios_per_stratum: int = 100
    base_seed: int = 0
    compression: float = 60.0
    clock_mode: str = "virtual"
    policies: Tuple[str, ...] = POLICIES
    schedule_seed: int = 7
    horizon: float = 420.0
    grid_step: float = 0.01
    tau: float = 30.0
    phi: float = 1.5
    weather_windows: Tuple[Tuple[float, float], ...] = DESK_WEATHER_WINDOWS
    weather_prob: float = 0.75
    lead_time: float = 60.0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    virtual_costs: VirtualCosts = field(default_factory=VirtualCosts)

    def __post_init__(self):
        if self.scenarios_per_stratum < 1:
            raise ValueError("scenarios_per_stratum must be >= 1")
        if not self.compression > 0:
            raise ValueError("compression must be positive")
        if self.clock_mode not in ("virtual", "wall", "process"):
            raise ValueError("clock_mode must be virtual, wall or process")
        bad = set(self.policies) - set(POLICIES)
        if bad:
            raise ValueError(f"unknown policies {sorted(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        if "policy" in d:
            d["policy"] = PolicyConfig.from_dict(d["policy"])
        if "virtual_costs" in d:
            d["virtual_costs"] = VirtualCosts(**d["virtual_costs"])
        for k in ("strata", "policies"):
            if k in d:
                d[k] = tuple(d[k])
        if "weather_windows" in d:
            d["weather_windows"] = tuple(tuple(x) for x in d["weather_windows"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def scenario_seed(base_seed: int, n: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(n)]).generate_state(1)[0])


@dataclass(frozen=True)
class ScenarioDraws:
    """Everything drawn for scenario index ``n`` that does not depend on sigma."""

    k: int
    weather: Optional[Tuple[float, float]]
    gamma_s: float
    theta_s: float
    g: Tuple[float, ...]
    pre_u: Tuple[float, ...]
    seed: int


def scenario_draws(plan: ExperimentPlan, schedule: Schedule, n: int) -> ScenarioDraws:
    rng = stream(plan.base_seed, "scenario-params", n)
    k = int(rng.choice(K_CHOICES))
    weather = None
    if rng.random() < plan.weather_prob:
        weather = tuple(plan.weather_windows[int(rng.integers(len(plan.weather_windows)))])
    gamma_s = float(rng.choice(GAMMA_S_CHOICES))
    theta_s = float(rng.choice(THETA_CHOICES))
    g = tuple(float(rng.uniform(*G_RANGES[c])) for c in schedule.w)
    pre_u = tuple(map(float, stream(plan.base_seed, "pre-delay", n).random(schedule.n)))
    return ScenarioDraws(k, weather, gamma_s, theta_s, g, pre_u, scenario_seed(plan.base_seed, n))


def build_scenario(plan: ExperimentPlan, schedule: Schedule, draws: ScenarioDraws, sigma: float,
                   n: int = 0) -> ScenarioConfig:
    """Scenario for one stratum: pre-tactical delays come from the gamma fit
    at this ``sigma`` evaluated at the shared uniforms."""
    T = plan.horizon
    flights = []
    delays = []
    for i in range(schedule.n):
        a, h = schedule.a[i], schedule.h(i)
        prm = cal.gamma_params_from_moments(schedule.xbar[i], schedule.s2[i], sigma, h)
        dpre = cal.sample_pretactical_delay(prm, a, h, u=draws.pre_u[i])
        # keep the realized expected landing strictly inside the horizon
        dpre = float(np.clip(dpre, 1.0 - a, T - 1.0 - a))
        delays.append(dpre)
        flights.append(FlightSpec(id=i, a=a, d=schedule.d[i], w=schedule.w[i], g=draws.g[i],
                                  sigma=sigma, q=schedule.q))
    weather = WeatherConfig.none()
    if draws.weather is not None:
        weather = WeatherConfig(t0=draws.weather[0], t1=draws.weather[1], nu=sigma, present=True)
    return ScenarioConfig(
        flights=tuple(flights),
        separations=SeparationMatrix(k=draws.k, phi=plan.phi),
        weather=weather,
        costs=CostConfig(gamma_s=draws.gamma_s, gamma_w=0.0, theta_s=draws.theta_s,
                         theta_w=1.0 - draws.theta_s, tau=plan.tau),
        horizon=T, grid_step=plan.grid_step, seed=draws.seed, pre_delays=tuple(delays),
        meta={"scenario": n, "sigma": sigma},
    )


def generate_scenarios(plan: ExperimentPlan, schedule: Optional[Schedule] = None
                       ) -> List[ScenarioConfig]:
    """Scenarios for every stratum; index ``n`` shares all draws across strata."""
    if schedule is None:
        schedule, _ = desk_schedule(plan.schedule_seed)
    out = []
    for sigma in plan.strata:
        for n in range(plan.scenarios_per_stratum):
            out.append(build_scenario(plan, schedule, scenario_draws(plan, schedule, n), sigma, n))
    return out


# --- running policies ---------------------------------------------------------

@dataclass
class RunResult:
    policy: str
    scenario: int
    sigma: float
    L: List[float]
    A: List[float]
    rho: List[float]
    Q: List[float]
    R: List[float]
    a: List[float]
    w: List[str]
    objective: float
    passes: int = 0
    end_time: float = 0.0
    cpu_seconds: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def landing_order(self) -> List[int]:
        return sorted(range(len(self.L)), key=lambda i: (self.L[i], self.R[i], i))

    def recompute_objective(self, config: ScenarioConfig) -> float:
        return objective_from_outcome(config, np.array(self.L), np.array(self.A),
                                      np.array(self.rho))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "RunResult":
        return cls(**d)


def _make_controller(policy: str, cfg: PolicyConfig, seed: int):
    if policy == "simheur":
        return SimHeurController(cfg, stream(seed, "simheur-search"),
                                 stream(seed, "simheur-predict"))
    return DetHeurController(cfg, stream(seed, "detheur-search"))


def run_policy(scenario: ScenarioConfig, policy: str, clock_mode: str = "virtual", path=None,
               policy_config: PolicyConfig = PolicyConfig(), compression: float = 60.0,
               virtual_costs: VirtualCosts = VirtualCosts(), max_passes: int = 10_000_000
               ) -> RunResult:
    """Run ``policy`` on ``scenario`` and return per-flight outcomes.

    Dynamic policies alternate a controller pass with a clock advance equal
    to the pass's cost times ``compression / 60`` minutes. In ``virtual``
    mode the cost comes from :class:`VirtualCosts`; ``wall`` and ``process``
    use the measured elapsed time since the previous advance (engine
    bookkeeping included).
    """
    if path is None:
        path = pregenerate_true_path(scenario)
    meta = scenario.meta_dict()
    t_start = time.process_time()
    passes = 0
    info = {}
    if policy == "fcfs":
        L, A, rho, Q, R = fcfs_policy(scenario, path)
        end = float(np.max(L)) if len(L) else 0.0
    elif policy == "dstat":
        (L, A, rho, Q, R), res = dstat_policy(scenario, path, stream(scenario.seed, "dstat"))
        end = float(np.max(L)) if len(L) else 0.0
        info = {"dstat_iterations": res.iterations, "dstat_expected_cost": res.cost}
    elif policy in ("simheur", "detheur"):
        sim = Simulation(scenario, path, log=False)
        ctrl = _make_controller(policy, policy_config, scenario.seed)
        scale = compression / 60.0
        clock = time.perf_counter if clock_mode == "wall" else time.process_time
        last = clock()
        limit = scenario.horizon * 20
        while sim.n_unreleased > 0:
            action = ctrl.step(sim.state())
            if action:
                sim.mark(action)
            if clock_mode == "virtual":
                dt = virtual_costs.seconds(ctrl.last_ops) * scale
            else:
                now = clock()
                dt = max(now - last, 1e-9) * scale
                last = now
            sim.advance(dt)
            passes += 1
            if passes >= max_passes or sim.t > limit:
                raise RuntimeError(f"{policy} did not release every flight "
                                   f"(t={sim.t:.2f}, passes={passes})")
        sim.run_out()
        L, A, rho, Q, R = sim.results()
        end = sim.t
        info = dict(ctrl.history)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    costs = objective_from_outcome(scenario, L, A, rho)
    return RunResult(
        policy=policy, scenario=int(meta.get("scenario", 0)),
        sigma=float(meta.get("sigma", math.nan)),
        L=list(map(float, L)), A=list(map(float, A)), rho=list(map(float, rho)),
        Q=list(map(float, Q)), R=list(map(float, R)),
        a=[f.a for f in scenario.flights], w=[f.w for f in scenario.flights],
        objective=costs, passes=passes, end_time=float(end),
        cpu_seconds=time.process_time() - t_start, info=info,
    )


@dataclass
class RunFailure:
    """Diagnostic record for a scenario/policy run that raised."""

    policy: str
    scenario: int
    sigma: float
    error: str

    def to_dict(self) -> dict:
        return asdict(self)


def _run_scenario(args) -> List[object]:
    scenario, policies, plan = args
    path = pregenerate_true_path(scenario)
    out = []
    for pol in policies:
        try:
            out.append(run_policy(scenario, pol, plan.clock_mode, path=path,
                                  policy_config=plan.policy, compression=plan.compression,
                                  virtual_costs=plan.virtual_costs))
        except Exception as exc:  # a failing controller must not sink the whole batch
            m = scenario.meta_dict()
            out.append(RunFailure(pol, int(m.get("scenario", 0)), float(m.get("sigma", math.nan)),
                                  f"{type(exc).__name__}: {exc}"))
    return out


def run_experiment(plan: ExperimentPlan, scenarios: Sequence[ScenarioConfig],
                   workers: int = 1, on_result=None
                   ) -> Tuple[List[RunResult], List[RunFailure]]:
    """Run every policy of ``plan`` on every scenario.

    Scenarios are independent, so with ``workers > 1`` they are spread over
    a process pool. ``on_result`` (if given) is called with each
    :class:`RunResult` or :class:`RunFailure` as it completes.
    """
    tasks = [(sc, plan.policies, plan) for sc in scenarios]
    results: List[RunResult] = []
    failures: List[RunFailure] = []

    def collect(batch):
        for r in batch:
            (failures if isinstance(r, RunFailure) else results).append(r)
            if on_result is not None:
                on_result(r)

    if workers <= 1:
        for t in tasks:
            collect(_run_scenario(t))
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_run_scenario, tasks):
                collect(batch)
    return results, failures


# --- metrics ------------------------------------------------------------------

IMPROVEMENT_COLUMNS = ("stratum", "policy", "baseline", "n", "n_undefined",
                       "mean_improvement_pct", "ci_low", "ci_high")
POLICY_COLUMNS = ("stratum", "policy", "n", "mean_objective", "wins", "mean_schedule_delay",
                  "mean_airborne_holding", "same_class_follow_pct", "mean_pool_holding")


def improvement_pct(phi_ref: float, phi_other: float) -> float:
    """100 (phi_other - phi_ref) / phi_other: how much better ``ref`` is than ``other``."""
    if phi_other == 0:
        return 0.0 if phi_ref == 0 else math.nan
    return 100.0 * (phi_other - phi_ref) / phi_other


def same_class_follow_pct(order: Sequence[int], classes: Sequence[str]) -> float:
    """Share of flights (all flights in the denominator) landing directly
    behind a flight of the same weight class."""
    if not order:
        return 0.0
    hits = sum(1 for p, c in zip(order[:-1], order[1:]) if classes[p] == classes[c])
    return 100.0 * hits / len(order)


def mean_ci(x) -> Tuple[float, float, float]:
    x = np.asarray([v for v in x if not math.isnan(v)], dtype=float)
    if x.size == 0:
        return math.nan, math.nan, math.nan
    m = float(x.mean())
    if x.size < 2:
        return m, m, m
    half = 1.959963984540054 * float(x.std(ddof=1)) / math.sqrt(x.size)
    return m, m - half, m + half


def paired_bootstrap_ci(x, y, n_boot: int = 10_000, level: float = 0.95, seed: int = 12345):
    """Percentile bootstrap CI of mean(x - y) resampling scenarios in pairs."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(diff.size, size=(n_boot, diff.size))
    means = diff[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(diff.mean()), float(lo), float(hi)


@dataclass
class MetricsTable:
    improvements: List[dict] = field(default_factory=list)
    policies: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"improvements": self.improvements, "policies": self.policies}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsTable":
        d = json.loads(text)
        return cls(d["improvements"], d["policies"])

    def row(self, stratum, policy, baseline=None) -> dict:
        rows = self.improvements if baseline is not None else self.policies
        for r in rows:
            if r["stratum"] == stratum and r["policy"] == policy and (
                    baseline is None or r["baseline"] == baseline):
                return r
        raise KeyError((stratum, policy, baseline))


def _stratum_label(sigma: float) -> str:
    return f"{sigma:g}"


def compare_policies(results: Sequence[RunResult], reference: str = "simheur") -> MetricsTable:
    """Stratum-level and pooled comparison tables.

    Improvement rows compare ``reference`` against each other policy; policy
    rows carry wins (ties split), delays, grouping and pool holding.
    """
    table = MetricsTable()
    if not results:
        return table
    by = {}
    for r in results:
        key = (_stratum_label(r.sigma), r.policy, r.scenario)
        if key in by:
            raise ComparisonError(f"duplicate result {key}")
        by[key] = r
    strata = sorted({k[0] for k in by}, key=float)
    policies = [p for p in POLICIES if any(k[1] == p for k in by)]
    policies += sorted({k[1] for k in by} - set(policies))
    groups = [(s, [s]) for s in strata] + ([("all", strata)] if len(strata) > 1 else [])
    for s in strata:
        sets = {p: {k[2] for k in by if k[0] == s and k[1] == p} for p in policies}
        ref_set = next(iter(sets.values()))
        if any(v != ref_set for v in sets.values()):
            raise ComparisonError(f"stratum {s}: policies cover different scenarios")
    for label, members in groups:
        keys = [(s, n) for s in members for n in sorted({k[2] for k in by if k[0] == s})]
        phis = {p: np.array([by[(s, p, n)].objective for s, n in keys]) for p in policies}
        # wins with ties split equally
        wins = {p: 0.0 for p in policies}
        for i in range(len(keys)):
            vals = np.array([phis[p][i] for p in policies])
            best = np.flatnonzero(vals == vals.min())
            for b in best:
                wins[policies[b]] += 1.0 / len(best)
        if reference in policies:
            for p in policies:
                if p == reference:
                    continue
                imp = [improvement_pct(x, y) for x, y in zip(phis[reference], phis[p])]
                m, lo, hi = mean_ci(imp)
                table.improvements.append({
                    "stratum": label, "policy": reference, "baseline": p, "n": len(imp),
                    "n_undefined": int(sum(math.isnan(v) for v in imp)),
                    "mean_improvement_pct": m, "ci_low": lo, "ci_high": hi})
        for p in policies:
            rs = [by[(s, p, n)] for s, n in keys]
            sched = np.concatenate([np.array(r.L) - np.array(r.a) for r in rs])
            air = np.concatenate([np.array(r.L) - (np.array(r.A) - np.array(r.rho)) for r in rs])
            pool = np.concatenate([np.array(r.rho) for r in rs])
            follow = [same_class_follow_pct(r.landing_order, r.w) for r in rs]
            table.policies.append({
                "stratum": label, "policy": p, "n": len(rs),
                "mean_objective": float(phis[p].mean()), "wins": wins[p],
                "mean_schedule_delay": float(sched.mean()),
                "mean_airborne_holding": float(air.mean()),
                "same_class_follow_pct": float(np.mean(follow)),
                "mean_pool_holding": float(pool.mean())})
    return table


def emit_reports(table: MetricsTable, out_dir, formats=("csv", "json"),
                 results: Optional[Sequence[RunResult]] = None) -> List[Path]:
    """Write ``improvements.csv``, ``policies.csv`` and/or ``metrics.json``;
    with ``results`` also a per-scenario ``scenarios.csv``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    written = []

    def _csv(name, cols, rows):
        p = out / name
        try:
            with open(p, "w", newline="") as fh:
                wr = csv.DictWriter(fh, fieldnames=cols)
                wr.writeheader()
                for r in rows:
                    wr.writerow({c: r[c] for c in cols})
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        written.append(p)

    if "csv" in formats:
        _csv("improvements.csv", IMPROVEMENT_COLUMNS, table.improvements)
        _csv("policies.csv", POLICY_COLUMNS, table.policies)
    if "json" in formats:
        p = out / "metrics.json"
        try:
            p.write_text(table.to_json())
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        written.append(p)
    if results is not None:
        cols = ("sigma", "scenario", "policy", "objective", "passes", "end_time", "cpu_seconds")
        _csv("scenarios.csv", cols, [r.to_dict() for r in results])
    return written


# --- persistence ----------------------------------------------------------------

def save_results(results: Iterable[RunResult], path):
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict()) + "\n")


def load_results(path) -> List[RunResult]:
    with open(path) as fh:
        return [RunResult.from_dict(json.loads(line)) for line in fh if line.strip()]


def save_scenarios(scenarios: Sequence[ScenarioConfig], out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for sc in scenarios:
        m = sc.meta_dict()
        p = out / f"scenario_s{m.get('sigma', 0):g}_n{m.get('scenario', 0):04d}.json"
        p.write_text(sc.to_json())
        paths.append(p)
    return paths


def load_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_json(Path(path).read_text())
