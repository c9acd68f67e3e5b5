"""Event-driven single-runway simulation against a hidden true path.

Flights move through four statuses: unpooled -> pooled -> queued -> landed.
A flight's landing time is fixed at release (its predecessor in the queue and
its realized separation are known then), so the engine schedules arrival and
landing events as soon as a flight is released and simply replays them as the
clock passes.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .model import CostConfig, ScenarioConfig, SeparationMatrix, flight_cost, total_objective
from .paths import PredictedPath, TrueSamplePath

UNPOOLED, POOLED, QUEUED, LANDED = 0, 1, 2, 3

# tie-break order for simultaneous events
EV_POOL, EV_WEATHER, EV_ARRIVE, EV_LAND = 0, 1, 2, 3
_EV_NAMES = {EV_POOL: "pool_entry", EV_WEATHER: "weather", EV_ARRIVE: "arrival", EV_LAND: "landing"}


class ContractError(RuntimeError):
    """Raised when a caller violates an engine precondition."""


@dataclass
class EventLog:
    """Time-ordered engine records.

    Each record is a dict with at least ``t`` (minutes) and ``event``; flight
    events carry ``flight``, releases carry ``rho``, landings carry ``L``, ``A``
    and ``rho``, weather records carry ``what`` ("start" or "end").
    """

    records: List[dict] = field(default_factory=list)

    def add(self, t: float, event: str, **kw):
        if self.records and t < self.records[-1]["t"]:
            raise ContractError(f"log time went backwards: {t} < {self.records[-1]['t']}")
        rec = {"t": float(t), "event": event}
        rec.update(kw)
        self.records.append(rec)

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")

    @staticmethod
    def read_jsonl(path) -> "EventLog":
        with open(path) as fh:
            return EventLog([json.loads(line) for line in fh if line.strip()])

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class SystemState:
    """What the decision maker can see at time ``t``.

    ``etas`` is NaN for landed flights. ``weather_view`` is ``(T0, T1)`` before
    bad weather starts, ``(None, T1)`` while it lasts and ``None`` once nothing
    further is expected. ``in_service`` is ``(flight, service start, elapsed)``.
    """

    t: float
    flights: tuple
    costs: CostConfig
    separations: SeparationMatrix
    sep_minutes: np.ndarray
    etas: np.ndarray
    status: np.ndarray
    pool_times: np.ndarray
    release_times: np.ndarray
    holding: np.ndarray
    arrival_times: np.ndarray   # revealed only once a flight has arrived
    arrived: np.ndarray
    release_bad_weather: np.ndarray
    queue: Tuple[int, ...]
    in_service: Optional[tuple]
    weather_view: Optional[tuple]
    weather_started: Optional[float]
    weather_nu: float
    last_landed: Optional[tuple]  # (class, L)
    landed: Dict[int, tuple]
    marked: Tuple[int, ...] = ()
    unqueued_count: Optional[int] = None

    def unreleased(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.status <= POOLED)]

    def pooled(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.status == POOLED)]

    def queue_sep_mean(self, j: int, prev_cls) -> float:
        """Expected separation (minutes) of queued flight ``j`` behind ``prev_cls``."""
        if prev_cls is None:
            return 0.0
        m = self.sep_minutes[prev_cls, self.flights[j].cls]
        if self.release_bad_weather[j]:
            m = m * self.separations.phi
        return float(m)

    @property
    def n_unqueued(self) -> int:
        if self.unqueued_count is not None:
            return self.unqueued_count
        return int(np.count_nonzero(self.status <= POOLED))


class Simulation:
    """Owns the clock, the queue and the event heap for one scenario run.

    ``auto_release`` may be ``"fcfs"`` (release on pool entry) or a full
    flight order (release each flight as soon as it is pooled and everything
    before it has been released). With ``None`` releases come from
    :meth:`mark` / :meth:`release`.
    """

    def __init__(self, config: ScenarioConfig, path: TrueSamplePath, auto_release=None,
                 log: bool = True):
        self.config = config
        self.path = path
        F = config.n_flights
        self.flights = config.flights
        self.cls = np.array([f.cls for f in config.flights], dtype=np.int32)
        self.sep_minutes = config.separations.minutes()
        self.phi = config.separations.phi
        self.tau = config.costs.tau
        self.t = 0.0
        self.status = np.zeros(F, dtype=np.int8)
        self.Q = np.full(F, np.nan)
        self.R = np.full(F, np.nan)
        self.rho = np.full(F, np.nan)
        self.A = np.full(F, np.nan)
        self.L = np.full(F, np.nan)
        self.M = np.full(F, np.nan)
        self.arrived = np.zeros(F, dtype=bool)
        self.bad = np.zeros(F, dtype=bool)
        self.queue: List[int] = []
        self.last_released: Optional[int] = None
        self.last_landed: Optional[int] = None
        self.marked: Tuple[int, ...] = ()
        self.n_released = 0
        self._landed: Dict[int, tuple] = {}
        self._version = 0           # bumped whenever an event or release changes the state
        self._snap = None           # event-dependent parts of the last state() snapshot
        self._eta_key = None
        self._eta_cache = None
        self.log = EventLog() if log else None
        self._heap: list = []
        for i in range(F):
            heapq.heappush(self._heap, (float(path.pool_hit[i]), EV_POOL, i, i))
        if path.weather_hits is not None:
            u0, u1 = path.weather_hits
            heapq.heappush(self._heap, (u0, EV_WEATHER, 0, -1))
            heapq.heappush(self._heap, (u1, EV_WEATHER, 1, -1))
        if auto_release is None:
            self._auto = None
        elif isinstance(auto_release, str) and auto_release == "fcfs":
            self._auto = "fcfs"
        else:
            self._auto = [int(i) for i in auto_release]
            if sorted(self._auto) != list(range(F)):
                raise ContractError("auto-release order must be a permutation of all flights")
            self._auto_pos = 0
        self._process(0.0)

    # --- events --------------------------------------------------------
    def _process(self, until: float):
        heap = self._heap
        while heap and heap[0][0] <= until:
            time, kind, key, i = heapq.heappop(heap)
            self._version += 1
            if kind == EV_POOL:
                self.status[i] = POOLED
                self.Q[i] = time
                if self.log is not None:
                    self.log.add(time, "pool_entry", flight=i)
                if self._auto == "fcfs":
                    self._release_one(i, time)
                elif self._auto is not None:
                    self._auto_advance(time)
            elif kind == EV_ARRIVE:
                self.arrived[i] = True
                if self.log is not None:
                    self.log.add(time, "arrival", flight=i)
            elif kind == EV_LAND:
                head = self.queue.pop(0)
                if head != i:
                    raise ContractError("landing out of queue order")
                self.status[i] = LANDED
                self.last_landed = i
                self._landed[i] = (float(self.L[i]), float(self.A[i]), float(self.rho[i]))
                if self.log is not None:
                    self.log.add(time, "landing", flight=i, L=float(self.L[i]),
                                 A=float(self.A[i]), rho=float(self.rho[i]))
            else:
                if self.log is not None:
                    self.log.add(time, "weather", what="start" if key == 0 else "end")

    def _auto_advance(self, time: float):
        order = self._auto
        while self._auto_pos < len(order) and self.status[order[self._auto_pos]] == POOLED:
            self._release_one(order[self._auto_pos], time)
            self._auto_pos += 1

    def _release_one(self, j: int, R: float):
        if self.status[j] != POOLED:
            raise ContractError(f"flight {j} is not in the pool")
        Q = self.Q[j]
        rho = R - Q
        A = self.path.arrival_hit[j] + rho
        wi = self.path.weather_interval
        bad = wi is not None and wi[0] <= R <= wi[1]
        p = self.last_released
        if p is None:
            L = A
        else:
            M = self.sep_minutes[self.cls[p], self.cls[j]] * self.path.sep_factors[j]
            if bad:
                M = M * self.phi
            self.M[j] = M
            L = self.L[p] + M
            if A > L:
                L = A
        self._version += 1
        self.status[j] = QUEUED
        self.R[j] = R
        self.rho[j] = rho
        self.A[j] = A
        self.L[j] = L
        self.bad[j] = bad
        self.queue.append(j)
        self.last_released = j
        self.n_released += 1
        if self.log is not None:
            self.log.add(R, "release", flight=j, rho=float(rho))
        heapq.heappush(self._heap, (float(A), EV_ARRIVE, j, j))
        heapq.heappush(self._heap, (float(L), EV_LAND, self.n_released, j))

    # --- public API ------------------------------------------------------
    def advance(self, dt: float) -> list:
        """Move the clock forward by ``dt`` and then release marked flights.

        Returns the log records produced by this step.
        """
        if not dt > 0:
            raise ContractError("dt must be positive")
        start = len(self.log) if self.log is not None else 0
        target = self.t + dt
        self._process(target)
        self.t = target
        if self.marked:
            ids, self.marked = self.marked, ()
            self.release(ids)
        return self.log.records[start:] if self.log is not None else []

    def advance_to(self, t: float) -> list:
        return self.advance(t - self.t) if t > self.t else []

    def release(self, ids: Sequence[int]):
        """Release pooled flights now, in the given order."""
        for j in ids:
            self._release_one(int(j), self.t)
        self._process(self.t)

    def mark(self, ids: Sequence[int]):
        """Mark pooled flights for release at the next clock update."""
        for j in ids:
            if self.status[j] != POOLED:
                raise ContractError(f"cannot mark flight {j}: not in the pool")
        self.marked = tuple(int(j) for j in ids)

    @property
    def done(self) -> bool:
        return bool(np.all(self.status == LANDED))

    @property
    def n_unreleased(self) -> int:
        return len(self.flights) - self.n_released

    def next_event_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def run_out(self):
        """Process every remaining event (useful once all flights are released)."""
        if self.n_unreleased and self._auto is None:
            raise ContractError("unreleased flights remain")
        while self._heap:
            self._process(self._heap[0][0])
        if self.L.size and np.isfinite(self.L).all():
            self.t = max(self.t, float(np.max(self.L)))

    def weather_view(self, t: float):
        hits = self.path.weather_hits
        if hits is None:
            return None, None
        u0, u1 = hits
        if t < u0 and t < u1:
            return (self.path.forecast(0, t), self.path.forecast(1, t)), None
        if u0 <= t < u1:
            return (None, self.path.forecast(1, t)), u0
        return None, None

    def _snapshot(self):
        """Read-only copies of everything that changes only at events."""
        if self._snap is None or self._snap[0] != self._version:
            def frozen(x):
                x = x.copy()
                x.flags.writeable = False
                return x
            last = None
            if self.last_landed is not None:
                last = (int(self.cls[self.last_landed]), float(self.L[self.last_landed]))
            arrival_times = np.where(self.arrived, self.A, np.nan)
            arrival_times.flags.writeable = False
            self._snap = (self._version, dict(
                status=frozen(self.status), pool_times=frozen(self.Q),
                release_times=frozen(self.R), holding=frozen(self.rho),
                arrival_times=arrival_times, arrived=frozen(self.arrived),
                release_bad_weather=frozen(self.bad), queue=tuple(self.queue),
                last_landed=last, landed=dict(self._landed)))
        return self._snap[1]

    def _base_etas(self, idx: int):
        """ETAs of unpooled and arrived flights, the pooled ids and the weather
        view; all depend on the clock only through the grid index."""
        key = (self._version, idx)
        if self._eta_key != key:
            t = self.t
            etas = np.full(len(self.flights), np.nan)
            st = self.status
            unp = st == UNPOOLED
            etas[unp] = self.path.eta_grid[unp, idx]
            if self.queue:
                qd = np.asarray(self.queue, dtype=np.intp)
                arr = qd[self.arrived[qd]]
                etas[arr] = self.A[arr]
            etas.flags.writeable = False
            self._eta_key = key
            self._eta_cache = (etas, np.flatnonzero(st == POOLED), self.weather_view(t))
        return self._eta_cache

    def state(self) -> SystemState:
        t = self.t
        path = self.path
        idx = path.index(t)
        snap = self._snapshot()
        base, pooled, (view, started) = self._base_etas(idx)
        etas = base.copy()
        # pooled flights' ETA is t + tau, which moves within a grid cell
        etas[pooled] = t + self.tau
        if self.queue:
            grid, step = path.eta_grid, path.grid_step
            last_col = grid.shape[1] - 1
            for j in self.queue:
                if not self.arrived[j]:
                    # holding pauses the path, so read it rho minutes in the past
                    rho = float(self.rho[j])
                    c = int(math.floor((t - rho) / step + 1e-9))
                    c = 0 if c < 0 else (last_col if c > last_col else c)
                    etas[j] = grid[j, c] + rho
        in_service = None
        if self.queue and self.last_landed is not None:
            h = self.queue[0]
            if self.arrived[h]:
                start = float(self.L[self.last_landed])
                in_service = (h, start, t - start)
        return SystemState(
            t=t, flights=self.flights, costs=self.config.costs,
            separations=self.config.separations, sep_minutes=self.sep_minutes,
            etas=etas, in_service=in_service, weather_view=view, weather_started=started,
            weather_nu=self.config.weather.nu, marked=self.marked,
            unqueued_count=len(self.flights) - self.n_released, **snap,
        )

    def results(self):
        """Per-flight arrays (L, A, rho, Q, R) once everything has landed."""
        if not self.done:
            raise ContractError("simulation has not finished")
        return self.L.copy(), self.A.copy(), self.rho.copy(), self.Q.copy(), self.R.copy()


def release_flights(sim: Simulation, ordered_ids: Sequence[int]) -> Simulation:
    """Release ``ordered_ids`` from the pool at the current time (empty = no-op)."""
    sim.release(ordered_ids)
    return sim


def advance_clock(sim: Simulation, dt: float):
    """Advance ``sim`` by ``dt``; returns ``(state, events)``."""
    events = sim.advance(dt)
    return sim.state(), events


# --- closed-form helpers ------------------------------------------------

def landing_recursion(order: Sequence[int], unconstrained, separations) -> List[float]:
    """Landing times along ``order``.

    ``unconstrained`` maps flight -> A; ``separations[k]`` is the separation
    between ``order[k]`` and ``order[k+1]``.
    """
    out = []
    L = None
    for pos, j in enumerate(order):
        A = unconstrained[j]
        if L is None:
            L = A
        else:
            L = L + separations[pos - 1]
            if A > L:
                L = A
        out.append(L)
    return out


def static_order_landings(config: ScenarioConfig, path: TrueSamplePath, order: Sequence[int]):
    """Landing outcome when flights are released in ``order`` as early as possible.

    Returns arrays (L, A, rho, Q, R) indexed by flight id.
    """
    F = config.n_flights
    cls = [f.cls for f in config.flights]
    sep = config.separations.minutes()
    phi = config.separations.phi
    wi = path.weather_interval
    Q = path.pool_hit.copy()
    R = np.full(F, np.nan)
    rho = np.full(F, np.nan)
    A = np.full(F, np.nan)
    rel = -math.inf
    for j in order:
        r = Q[j] if Q[j] > rel else rel
        rel = r
        R[j] = r
        rho[j] = r - Q[j]
        A[j] = path.arrival_hit[j] + rho[j]
    seps = []
    for prev, j in zip(order[:-1], order[1:]):
        M = sep[cls[prev], cls[j]] * path.sep_factors[j]
        if wi is not None and wi[0] <= R[j] <= wi[1]:
            M = M * phi
        seps.append(M)
    L = np.full(F, np.nan)
    for j, lj in zip(order, landing_recursion(list(order), A, seps)):
        L[j] = lj
    return L, A, rho, Q, R


def fcfs_order(path: TrueSamplePath) -> List[int]:
    return sorted(range(len(path.pool_hit)), key=lambda i: (path.pool_hit[i], i))


def outcome_costs(config: ScenarioConfig, L, A, rho) -> np.ndarray:
    return np.array([flight_cost(float(L[i]), float(A[i]), float(rho[i]), f, config.costs)
                     for i, f in enumerate(config.flights)])


# --- sequence evaluation against a predicted path -------------------------

class SequenceEvaluator:
    """Batched cost evaluation of candidate sequences on predicted paths.

    Static per-flight arrays are built once; each call to :meth:`evaluate`
    takes one predicted path and a 2-D array of sequences (one per row).
    """

    def __init__(self, flights, costs: CostConfig, separations: SeparationMatrix):
        self.a = np.array([f.a for f in flights], dtype=float)
        self.g = np.array([f.g for f in flights], dtype=float)
        self.cls = np.array([f.cls for f in flights], dtype=np.int32)
        self.sep = np.ascontiguousarray(separations.minutes(), dtype=float)
        self.cost_args = (costs.theta_s, costs.theta_w, costs.gamma_s, costs.gamma_w)
        self.phi = separations.phi

    @classmethod
    def from_state(cls, state: SystemState) -> "SequenceEvaluator":
        return cls(state.flights, state.costs, state.separations)

    def evaluate(self, path: PredictedPath, seqs: np.ndarray):
        seqs = np.ascontiguousarray(seqs, dtype=np.int32)
        n = seqs.shape[0]
        J = np.empty(n)
        xi = np.empty(n)
        if n == 0:
            return J, xi
        wi = path.weather_interval
        w0, w1 = (wi if wi is not None else (math.inf, -math.inf))
        tail = path.tail
        has_prev = tail is not None
        prev_cls, prev_L = (tail if has_prev else (0, 0.0))
        if np.isnan(path.pool_arrivals[seqs]).any():
            raise ContractError("sequence contains a flight that is released or not sampled")
        kernels.sequence_costs(
            seqs, float(path.t), path.pool_arrivals, path.remaining_travel, path.sep_factors,
            self.a, self.g, self.cls, self.sep, float(self.phi), float(w0), float(w1),
            bool(has_prev), int(prev_cls), float(prev_L), bool(path.queue_nonempty),
            *self.cost_args, J, xi)
        return J, xi


def evaluate_sequence(state: SystemState, s: Sequence[int], path: PredictedPath) -> float:
    """Cost of following ``s`` from ``state`` under ``path`` (flights in ``s`` only)."""
    for j in s:
        if state.status[j] > POOLED:
            raise ContractError(f"flight {j} has already been released")
    J, _ = SequenceEvaluator.from_state(state).evaluate(path, np.asarray([list(s)]))
    return float(J[0])


def idle_indicator(state: SystemState, s: Sequence[int], path: PredictedPath) -> int:
    """1 if the first flight of ``s`` would reach the runway after its earliest
    slot behind the queue tail (or if the queue is empty)."""
    if len(s) == 0:
        raise ContractError("empty sequence")
    _, xi = SequenceEvaluator.from_state(state).evaluate(path, np.asarray([list(s)]))
    return int(xi[0])


def objective_from_outcome(config: ScenarioConfig, L, A, rho) -> float:
    return total_objective(outcome_costs(config, L, A, rho))
