"""Population-based sequencing controllers.

:class:`SimHeurController` scores candidate sequences on randomly sampled
futures and keeps running means; :class:`DetHeurController` shares the same
skeleton but scores every candidate on a single expected-value future.

A controller is driven one pass at a time: ``step(state)`` returns the tuple
of flights to mark for release (possibly empty) and records how much work the
pass did in ``last_ops`` so a clock can charge for it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .. import kernels
from ..engine import POOLED, SequenceEvaluator, SystemState
from .search import mutate, psi_schedule, rank_and_select


@dataclass(frozen=True)
class PolicyConfig:
    """Controller parameters (defaults are the published tuning)."""

    S: int = 20
    S_min: int = 10
    l: int = 15
    m_mut: int = 25
    r: int = 50
    n_rel: int = 50
    n_repop: int = 500
    lam: float = 0.0
    eta: float = 0.05
    psi_rule: str = "1/n"
    max_retries: int = 1000

    def __post_init__(self):
        if not 1 <= self.S_min <= self.S:
            raise ValueError("need 1 <= S_min <= S")
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if min(self.m_mut, self.r, self.n_rel, self.n_repop) < 0:
            raise ValueError("thresholds must be >= 0")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must lie in [0, 1)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        psi_schedule(self.psi_rule)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class OpCounts:
    """Work done in one controller pass, used by the virtual clock."""

    passes: int = 0
    ig_draws: int = 0
    sep_draws: int = 0
    flight_evals: int = 0
    rs_pairs: int = 0
    moves: int = 0

    def add(self, other: "OpCounts"):
        self.passes += other.passes
        self.ig_draws += other.ig_draws
        self.sep_draws += other.sep_draws
        self.flight_evals += other.flight_evals
        self.rs_pairs += other.rs_pairs
        self.moves += other.moves


def _eta_order(state: SystemState, candidates) -> List[int]:
    return sorted(candidates, key=lambda i: (state.etas[i], i))


_NO_UNIFORMS = np.zeros(0)


def _row_in(row: np.ndarray, arr: Optional[np.ndarray]) -> bool:
    if arr is None or arr.shape[0] == 0 or arr.shape[1] != row.shape[0]:
        return False
    return kernels.row_in(row, arr)


class _PopulationController:
    """Shared skeleton; subclasses choose how a pass evaluates sequences.

    The population is held as an int32 array with one sequence per row
    (``_arr``); :attr:`seqs` gives the same population as tuples.
    """

    name = "base"
    uses_ranking = True

    def __init__(self, config: PolicyConfig = PolicyConfig(),
                 search_rng: Optional[np.random.Generator] = None):
        self.cfg = config
        self.rng = search_rng if search_rng is not None else np.random.default_rng(0)
        self.S, self.S_min, self.l = config.S, config.S_min, config.l
        self._arr = np.zeros((0, self.l), dtype=np.int32)
        self._union = np.zeros(0, dtype=np.int32)
        self.V = np.zeros(0)
        self.W = np.zeros(0)
        self.U = np.zeros(0)
        self.n = 0
        self.m = 0
        self._snapshot: Optional[np.ndarray] = None
        self.pending: Tuple[int, ...] = ()
        self.best_at_mark: Tuple[int, ...] = ()
        self.need_repop = False
        self.initialized = False
        self.evaluator: Optional[SequenceEvaluator] = None
        self._ctx = None
        self.last_ops = OpCounts()
        self.total_ops = OpCounts()
        self.history = {"type1": 0, "type2": 0, "mutations": 0, "rs_removed": 0, "marks": 0}
        self._psi = psi_schedule(config.psi_rule)

    @property
    def seqs(self) -> List[Tuple[int, ...]]:
        return [tuple(r) for r in self._arr.tolist()]

    @property
    def best(self) -> Optional[Tuple[int, ...]]:
        if self._arr.shape[0] == 0:
            return None
        return tuple(self._arr[int(np.argmin(self.V))].tolist())

    # --- population bookkeeping -------------------------------------------
    def _reset_stats(self):
        k = self._arr.shape[0]
        self.V, self.W, self.U = np.zeros((3, k))
        self.n = 0
        self._union = kernels.row_union(self._arr, self._n_flights)

    def _keep(self, idx):
        self._arr = self._arr[idx]
        self.V, self.W, self.U = self.V[idx], self.W[idx], self.U[idx]

    def _set_single(self, b: Sequence[int]):
        self._arr = np.array([list(b)], dtype=np.int32)

    def _fill_from(self, b: Sequence[int], ops: OpCounts):
        """Add distinct H-neighbours of ``b`` until the population has S
        members or ``max_retries`` moves were tried. Moves are drawn in small
        batches of uniforms; unused draws of the last batch are discarded."""
        have = self._arr.shape[0]
        if have >= self.S:
            return
        base = np.asarray(b, dtype=np.int32)
        l = base.shape[0]
        pop = np.empty((self.S, l), dtype=np.int32)
        pop[:have] = self._arr
        tries = 0
        while have < self.S and tries < self.cfg.max_retries:
            n = min(2 * (self.S - have) + 2, self.cfg.max_retries - tries)
            have, used = kernels.fill_population(base, pop, have, self.S, self.rng.random(n))
            tries += used
        self._arr = pop[:have]
        ops.moves += tries

    def _shrink(self, n_unreleased: int):
        c = self.cfg
        self.l = min(c.l, n_unreleased)
        self.S = min(c.S, math.factorial(self.l)) if self.l < c.l else c.S
        self.S_min = min(c.S_min, self.S)

    def _initialize(self, state: SystemState, ops: OpCounts):
        base = tuple(_eta_order(state, state.unreleased())[: self.l])
        self._set_single(base)
        self._fill_from(base, ops)
        self._reset_stats()
        self.m = 0
        self._snapshot = None

    def _repopulate_type1(self, state: SystemState, ops: OpCounts):
        u = len(self.pending)
        b = list(self.best_at_mark[u:])[: self.l]
        have = set(b)
        for i in _eta_order(state, [j for j in state.unreleased() if j not in have]):
            if len(b) >= self.l:
                break
            b.append(i)
        self._set_single(b)
        self._fill_from(b, ops)
        self._reset_stats()
        self.m = 0
        self._snapshot = None
        self.history["type1"] += 1

    def _filter(self):
        """Keep the S_min best members; returns the best one's row. Statistics
        are not carried over because repopulation follows immediately."""
        kept, best = kernels.keep_best(self._arr, self.V, self.S_min)
        best_row = self._arr[best]
        self._arr = kept
        return best_row

    def _repopulate_type2(self, state: SystemState, ops: OpCounts, best=None):
        if best is None:
            best = self._arr[int(np.argmin(self.V))]
        self.m = self.m + 1 if _row_in(best, self._snapshot) else 0
        # populations are never modified in place, so no copy is needed
        self._snapshot = self._arr
        b = best
        if self.m >= self.cfg.m_mut:
            b = list(mutate(best.tolist(), state.n_unqueued, self.rng))
            ops.moves += 1
            self.m = 0
            self.history["mutations"] += 1
        self._fill_from(b, ops)
        self._reset_stats()
        self.need_repop = False
        self.history["type2"] += 1

    # --- evaluation hooks ------------------------------------------------
    def _predict_and_cost(self, state: SystemState, us: np.ndarray, expected: bool):
        """Predict a future from ``state`` (sampled from ``us`` or at its
        mean) and cost every population member on it; returns (J, xi).

        Equivalent to ``SequenceEvaluator.evaluate`` on
        ``sample_predicted_path`` / ``expected_value_path`` restricted to the
        population's flights, fused into one kernel call.
        """
        if self._ctx is None:
            f = state.flights
            c = state.costs
            self._ctx = kernels.PassContext(
                [x.a for x in f], [x.g for x in f], [x.sigma for x in f], [x.h for x in f],
                [x.cls for x in f], state.sep_minutes, float(state.separations.phi),
                float(c.tau), float(state.separations.k), c.theta_s, c.theta_w, c.gamma_s,
                c.gamma_w)
        view = state.weather_view
        if view is None:
            mode, f0, f1 = 0, 0.0, 0.0
        elif view[0] is None:
            mode, f0, f1 = 2, 0.0, view[1]
        else:
            mode, f0, f1 = 1, view[0], view[1]
        started = state.weather_started if state.weather_started is not None else 0.0
        tail = state.last_landed
        svc = state.in_service
        k = self._arr.shape[0]
        J = np.empty(k)
        xi = np.empty(k)
        self._ctx.evaluate(
            float(state.t), mode, float(f0), float(f1), float(started), float(state.weather_nu),
            np.asarray(state.queue, dtype=np.int32), state.arrived.view(np.uint8),
            state.arrival_times, state.etas, state.release_bad_weather.view(np.uint8),
            tail is not None, tail[0] if tail is not None else 0,
            tail[1] if tail is not None else 0.0, svc[0] if svc is not None else -1,
            svc[2] if svc is not None else 0.0, self._union, state.status, state.pool_times,
            us, expected, self._arr, J, xi)
        return J, xi

    def _evaluate(self, state: SystemState, ops: OpCounts):
        raise NotImplementedError

    def _n_repop(self) -> int:
        raise NotImplementedError

    def _release_ok(self, best: int) -> bool:
        raise NotImplementedError

    # --- one pass --------------------------------------------------------
    def step(self, state: SystemState) -> Tuple[int, ...]:
        ops = OpCounts(passes=1)
        self.last_ops = ops
        n_unrel = state.n_unqueued
        if n_unrel == 0:
            self._arr = np.zeros((0, self.l), dtype=np.int32)
            self.pending = ()
            self.total_ops.add(ops)
            return ()
        if self.evaluator is None:
            self.evaluator = SequenceEvaluator.from_state(state)
            self._n_flights = len(state.flights)
        if not self.initialized:
            self._shrink(n_unrel)
            self._initialize(state, ops)
            self.initialized = True
        elif self.pending and any(state.status[j] > POOLED for j in self.pending):
            self._shrink(n_unrel)
            self._repopulate_type1(state, ops)
            self.pending = ()
        elif self.n >= self._n_repop():
            self._repopulate_type2(state, ops, self._filter())
        elif self.need_repop:
            self._repopulate_type2(state, ops)

        self._evaluate(state, ops)

        if self.uses_ranking and self.n >= 2 and self.n % self.cfg.r == 0:
            k = self._arr.shape[0]
            keep = rank_and_select(self.V, self.W, self.n, self.cfg.eta)
            ops.rs_pairs += k * k
            if keep is not None and not keep.all():
                idx = np.flatnonzero(keep)
                self.history["rs_removed"] += k - len(idx)
                self._keep(idx)
                if len(idx) <= self.S_min:
                    self.need_repop = True

        action: Tuple[int, ...] = ()
        best = int(np.argmin(self.V))
        if self._release_ok(best):
            s = self._arr[best].tolist()
            u = 0
            while u < len(s) and state.status[s[u]] == POOLED:
                u += 1
            if u >= 1:
                action = tuple(s[:u])
                self.pending = action
                self.best_at_mark = tuple(s)
                self.history["marks"] += 1
        self.total_ops.add(ops)
        return action


class SimHeurController(_PopulationController):
    """Sampled-future controller with running means and ranking-and-selection."""

    name = "simheur"
    uses_ranking = True

    def __init__(self, config: PolicyConfig = PolicyConfig(),
                 search_rng: Optional[np.random.Generator] = None,
                 predict_rng: Optional[np.random.Generator] = None):
        super().__init__(config, search_rng)
        self.prng = predict_rng if predict_rng is not None else np.random.default_rng(1)

    def _n_repop(self):
        return self.cfg.n_repop

    def _evaluate(self, state, ops):
        # same uniform layout as sample_predicted_path(state, prng, union)
        n_u = 2 + 3 * len(state.queue) + 3 * self._union.size
        J, xi = self._predict_and_cost(state, self.prng.random(n_u), False)
        self.n += 1
        kernels.running_update(self.V, self.W, self.U, J, xi, self._psi(self.n))
        st = state.status[self._union]
        n_transit = sum(1 for j in state.queue if not state.arrived[j])
        n_weather = 0 if state.weather_view is None else (2 if state.weather_view[0] is not None
                                                          else 1)
        ops.ig_draws += n_weather + int(np.count_nonzero(st == 0)) + st.size + n_transit
        ops.sep_draws += st.size + len(state.queue)
        ops.flight_evals += self._arr.size

    def _release_ok(self, best):
        return self.n >= self.cfg.n_rel and self.U[best] > self.cfg.lam


class DetHeurController(_PopulationController):
    """Expected-value controller: one deterministic evaluation per pass, no
    ranking-and-selection, filtering and repopulation on every pass, and
    release as soon as the best sequence's leading flights are pooled."""

    name = "detheur"
    uses_ranking = False

    def _n_repop(self):
        return 1

    def _evaluate(self, state, ops):
        J, _ = self._predict_and_cost(state, _NO_UNIFORMS, True)
        self.n += 1
        self.V = J
        ops.flight_evals += self._arr.size

    def _release_ok(self, best):
        return self.n >= 1
