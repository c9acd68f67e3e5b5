"""Hidden true sample paths and sampled/expected predictions.

The true path stores ETA trajectories on a fixed time grid together with the
weather forecast trajectories and one separation quantile per flight. From
these the engine reads everything it needs by lookup.

Random numbers come from named streams (see :func:`stream`) so that each
purpose (true path, one prediction stream per policy, ...) is isolated.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import kernels
from .model import ConfigError, ScenarioConfig

WEATHER_CHANNELS = ("T0", "T1")


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``purpose`` under ``seed`` (and optional keys)."""
    tag = zlib.crc32(purpose.encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, *map(int, keys)]))


# --- scalar samplers ------------------------------------------------------

def sample_first_hitting_time(target_gap: float, sigma: float, u: float) -> float:
    """u-quantile of the first time drifted Brownian motion closes ``target_gap``.

    The distribution is inverse Gaussian with mean ``target_gap`` and variance
    ``sigma**2 * target_gap``. A non-positive gap means the event is already
    due and 0 is returned.
    """
    return kernels.ig_quantile(float(target_gap), float(sigma), float(u))


def ig_cdf_simpson(x: float, gap: float, sigma: float, n: int = 2000) -> float:
    """Inverse Gaussian CDF by composite Simpson integration of the density.

    Slow reference used to cross-check the closed-form CDF in the kernels.
    """
    if x <= 0:
        return 0.0
    n += n % 2
    # the density vanishes faster than any power at 0; start a hair above it
    grid = np.linspace(1e-12, x, n + 1)
    dens = gap / (sigma * np.sqrt(2 * np.pi * grid ** 3)) * np.exp(
        -((grid - gap) ** 2) / (2 * sigma ** 2 * grid))
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return float(np.dot(w, dens) * (grid[1] - grid[0]) / 3)


def sample_erlang_quantile(mean: float, k: float, u: float) -> float:
    """u-quantile of Erlang(k, rate k/mean); mean ``mean``, CV 1/sqrt(k)."""
    return mean * kernels.erlang_unit_quantile(float(k), float(u))


def sample_conditional_remaining_service(mean: float, k: float, elapsed: float, u: float) -> float:
    """u-quantile of the residual ``M - elapsed`` given ``M > elapsed``."""
    if elapsed < 0:
        raise ValueError("elapsed service time must be >= 0")
    return kernels.erlang_residual_quantile(float(mean), float(k), float(elapsed), float(u))


# --- true path ------------------------------------------------------------

@dataclass(frozen=True)
class TrueSamplePath:
    """Pre-generated hidden realization for one scenario.

    ``pool_hit`` and ``arrival_hit`` are derived from ``eta_grid``: the first
    time the ETA comes within ``tau`` of the clock, and the first time it
    reaches the clock, both for a flight that is never held. Holding a flight
    for ``rho`` minutes pauses its trajectory, which delays its arrival by
    exactly ``rho``.
    """

    grid_step: float
    horizon: float
    eta_grid: np.ndarray            # (F, N)
    weather_grid: Optional[np.ndarray]  # (2, N) or None
    sep_quantiles: np.ndarray       # (F,)
    sep_factors: np.ndarray         # (F,) Erlang unit-mean quantiles for p_sep
    pre_delays: np.ndarray          # (F,)
    pool_hit: np.ndarray            # (F,)
    arrival_hit: np.ndarray         # (F,)
    weather_interval: Optional[tuple]  # realized (U0, U1) or None when no bad weather
    weather_hits: Optional[tuple]   # raw (U0, U1) hitting times (may be U0 >= U1)
    seed: int
    config_hash: str

    @property
    def n_grid(self) -> int:
        return self.eta_grid.shape[1]

    def indices(self, t) -> np.ndarray:
        """Vectorized :meth:`index`."""
        k = np.floor(np.asarray(t, dtype=float) / self.grid_step + 1e-9).astype(np.intp)
        np.minimum(k, self.eta_grid.shape[1] - 1, out=k)
        return np.maximum(k, 0, out=k)

    def index(self, t: float) -> int:
        """Grid index of the largest grid point <= t, clamped to the grid."""
        k = int(math.floor(t / self.grid_step + 1e-9))
        if k < 0:
            return 0
        last = self.eta_grid.shape[1] - 1
        return last if k > last else k

    def eta(self, i: int, t: float) -> float:
        return float(self.eta_grid[i, self.index(t)])

    def forecast(self, which: int, t: float) -> float:
        return float(self.weather_grid[which, self.index(t)])

    def save(self, path) -> Path:
        path = Path(path)
        wi = self.weather_interval if self.weather_interval is not None else (np.nan, np.nan)
        wh = self.weather_hits if self.weather_hits is not None else (np.nan, np.nan)
        np.savez_compressed(
            path,
            grid_step=self.grid_step, horizon=self.horizon, eta_grid=self.eta_grid,
            weather_grid=self.weather_grid if self.weather_grid is not None else np.empty((0, 0)),
            sep_quantiles=self.sep_quantiles, sep_factors=self.sep_factors,
            pre_delays=self.pre_delays, pool_hit=self.pool_hit, arrival_hit=self.arrival_hit,
            weather_interval=np.asarray(wi, dtype=float), weather_hits=np.asarray(wh, dtype=float),
            seed=self.seed, config_hash=self.config_hash,
        )
        return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")

    @classmethod
    def load(cls, path, expect_seed=None, expect_hash=None) -> "TrueSamplePath":
        with np.load(path) as z:
            seed = int(z["seed"])
            chash = str(z["config_hash"])
            if expect_seed is not None and seed != expect_seed:
                raise ConfigError(f"{path}: stored seed {seed} != {expect_seed}")
            if expect_hash is not None and chash != expect_hash:
                raise ConfigError(f"{path}: stored config hash does not match")
            wg = z["weather_grid"]
            wi = tuple(float(x) for x in z["weather_interval"])
            wh = tuple(float(x) for x in z["weather_hits"])
            return cls(
                grid_step=float(z["grid_step"]), horizon=float(z["horizon"]),
                eta_grid=z["eta_grid"], weather_grid=wg if wg.size else None,
                sep_quantiles=z["sep_quantiles"], sep_factors=z["sep_factors"],
                pre_delays=z["pre_delays"], pool_hit=z["pool_hit"],
                arrival_hit=z["arrival_hit"],
                weather_interval=None if math.isnan(wi[0]) else wi,
                weather_hits=None if math.isnan(wh[0]) else wh,
                seed=seed, config_hash=chash,
            )


def _bm_grid(x0: np.ndarray, sigma: np.ndarray, onset: np.ndarray, normals: np.ndarray,
             dt: float) -> np.ndarray:
    """Piecewise-constant Brownian trajectories; no variance accrues before ``onset``."""
    n = normals.shape[1] + 1
    t = np.arange(n) * dt
    lo = np.maximum(t[:-1][None, :], onset[:, None])
    active = np.clip(t[1:][None, :] - lo, 0.0, dt)
    steps = normals * (sigma[:, None] * np.sqrt(active))
    out = np.empty((x0.shape[0], n))
    out[:, 0] = x0
    np.cumsum(steps, axis=1, out=out[:, 1:])
    out[:, 1:] += x0[:, None]
    return out


def pregenerate_true_path(config: ScenarioConfig, rng: Optional[np.random.Generator] = None
                          ) -> TrueSamplePath:
    """Draw the hidden path for ``config``.

    With ``rng=None`` the generator is ``stream(config.seed, "true-path")``.
    Draw order is fixed (initial-ETA normals, increments, weather, separation
    quantiles), so flights' ``sigma`` values can change without altering any of
    the underlying standard normals or uniforms.
    """
    if rng is None:
        rng = stream(config.seed, "true-path")
    dt = config.grid_step
    n = config.n_grid
    if abs((n - 1) * dt - config.horizon) > 1e-6:
        raise ConfigError("horizon is not aligned with the grid step")
    F = config.n_flights
    sigma = np.array([f.sigma for f in config.flights], dtype=float)
    h = np.array([f.h for f in config.flights], dtype=float)
    delays = config.delays()
    base = np.array([f.a for f in config.flights]) + delays

    z0 = rng.standard_normal(F)
    x0 = base + np.where(h < 0, sigma * np.sqrt(np.abs(h)) * z0, 0.0)
    normals = rng.standard_normal((F, n - 1))
    eta = _bm_grid(x0, sigma, h, normals, dt)
    del normals

    weather_normals = rng.standard_normal((2, n - 1))
    sep_q = rng.random(F)
    wgrid = None
    interval = None
    hits = None
    w = config.weather
    if w.present:
        wgrid = _bm_grid(np.array([w.t0, w.t1]), np.array([w.nu, w.nu]),
                         np.array([-np.inf, -np.inf]), weather_normals, dt)
        wh = np.empty(2)
        kernels.first_hits(wgrid, dt, 0.0, np.zeros(2), wh)
        hits = (float(wh[0]), float(wh[1]))
        if wh[0] < wh[1]:
            interval = hits

    factors = np.empty(F)
    kernels.erlang_unit_quantiles(float(config.separations.k), sep_q, factors)
    tau = config.costs.tau
    pool_hit = np.empty(F)
    kernels.first_hits(eta, dt, tau, np.zeros(F), pool_hit)
    arrival_hit = np.empty(F)
    kernels.first_hits(eta, dt, 0.0, pool_hit.copy(), arrival_hit)
    return TrueSamplePath(
        grid_step=dt, horizon=config.horizon, eta_grid=eta, weather_grid=wgrid,
        sep_quantiles=sep_q, sep_factors=factors, pre_delays=delays,
        pool_hit=pool_hit, arrival_hit=arrival_hit, weather_interval=interval,
        weather_hits=hits, seed=config.seed, config_hash=config.config_hash(),
    )


def trajectory_lookup(path: TrueSamplePath, channel, t: float) -> float:
    """Value of a flight's ETA (int channel) or a weather forecast ("T0"/"T1")
    at the largest grid point not after ``t``."""
    if not 0.0 <= t <= path.horizon + 1e-9:
        raise ValueError(f"time {t} outside [0, {path.horizon}]")
    if isinstance(channel, str):
        if path.weather_grid is None:
            raise KeyError("scenario has no weather trajectories")
        return path.forecast(WEATHER_CHANNELS.index(channel), t)
    return path.eta(int(channel), t)


# --- predicted paths ------------------------------------------------------

@dataclass
class PredictedPath:
    """One sampled (or expected-value) future, as seen from time ``t``.

    Arrays are indexed by flight id; entries for flights that the prediction
    does not cover are NaN.

    ``pool_arrivals``: pool-entry time used by the release rule (observed entry
    time for flights already pooled, predicted for the rest).
    ``remaining_travel``: time from release to unconstrained arrival for
    unreleased flights.
    ``sep_factors``: unit-mean separation multipliers, one per follower.
    ``queue_landings``: predicted landing times of flights already queued.
    ``tail``: (class, landing time) of the flight the next release follows, or None.
    """

    t: float
    pool_arrivals: np.ndarray
    remaining_travel: np.ndarray
    sep_factors: np.ndarray
    queue_arrivals: np.ndarray
    queue_landings: np.ndarray
    weather: Optional[tuple]
    in_service_remaining: Optional[float]
    tail: Optional[tuple]
    queue_nonempty: bool

    @property
    def weather_interval(self):
        if self.weather is None:
            return None
        u0, u1 = self.weather
        return (u0, u1) if u0 < u1 else None

    def is_empty(self) -> bool:
        return not (np.isfinite(self.pool_arrivals).any() or np.isfinite(self.queue_landings).any())


class _Sampler:
    """Supplies uniform blocks from a generator."""

    expected = False

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def uniforms(self, n: int) -> np.ndarray:
        return self.rng.random(n)


class _Expected:
    """Stand-in that makes every draw take its mean."""

    expected = True
    _empty = np.zeros(0)

    def uniforms(self, n):
        return self._empty


def _weather_end(t, f, nu, us, slot, expected):
    if expected:
        gap = f - t
        return t + (gap if gap > 0.0 else 0.0)
    return t + kernels.ig_quantile(float(f - t), float(nu), float(us[slot]))


_FLIGHT_CACHE: dict = {}


def _flight_arrays(flights):
    """(sigma, h, class index) arrays for a flight tuple, cached by identity."""
    hit = _FLIGHT_CACHE.get(id(flights))
    if hit is not None and hit[0] is flights:
        return hit[1]
    arrs = (np.array([f.sigma for f in flights], dtype=float),
            np.array([f.h for f in flights], dtype=float),
            np.array([f.cls for f in flights], dtype=np.int32))
    if len(_FLIGHT_CACHE) > 64:
        _FLIGHT_CACHE.clear()
    _FLIGHT_CACHE[id(flights)] = (flights, arrs)
    return arrs


def _build_path(state, draw, flights: Optional[Sequence[int]]) -> PredictedPath:
    """Shared builder for sampled and expected-value predictions.

    All randomness comes from one uniform block: two weather slots (start,
    end), three per queued flight in release order (separation factor,
    arrival if still in transit, residual service if being served) and three
    per unreleased flight (pool entry, travel, separation factor). Unused
    slots are simply skipped, so the layout depends only on the counts.
    """
    t = float(state.t)
    F = len(state.flights)
    tau = float(state.costs.tau)
    k = float(state.separations.k)
    sig, hh, cls = _flight_arrays(state.flights)
    q, travel, z, qa, ql = np.full((5, F), np.nan)

    if flights is None:
        flights = state.unreleased()
    idx = np.asarray(flights, dtype=np.int32)
    nq = len(state.queue)
    us = draw.uniforms(2 + 3 * nq + 3 * idx.size)

    # weather
    weather = None
    view = state.weather_view
    if view is not None:
        f0, f1 = view
        nu = state.weather_nu
        if f0 is None:
            u0 = state.weather_started
        else:
            u0 = _weather_end(t, f0, nu, us, 0, draw.expected)
        weather = (u0, _weather_end(t, f1, nu, us, 1, draw.expected))

    # queued flights, in release order
    tail = state.last_landed  # (cls, L) or None
    if nq:
        queue = np.asarray(state.queue, dtype=np.int32)
        svc = state.in_service
        has, c, L = kernels.predict_queue(
            t, k, queue, state.arrived.view(np.uint8), state.arrival_times, state.etas, sig,
            cls, state.sep_minutes, float(state.separations.phi),
            state.release_bad_weather.view(np.uint8), tail is not None,
            tail[0] if tail is not None else 0, tail[1] if tail is not None else 0.0,
            svc[0] if svc is not None else -1, svc[2] if svc is not None else 0.0,
            us[2: 2 + 3 * nq], draw.expected, z, qa, ql)
        tail = (int(c), float(L))

    # unreleased flights
    kernels.predict_unreleased(
        t, tau, k, idx, state.status, state.etas, hh, sig, state.pool_times,
        us[2 + 3 * nq:], draw.expected, q, travel, z)

    svc = None
    if state.in_service is not None:
        svc = float(ql[state.in_service[0]] - t)
    return PredictedPath(
        t=t, pool_arrivals=q, remaining_travel=travel, sep_factors=z,
        queue_arrivals=qa, queue_landings=ql, weather=weather,
        in_service_remaining=svc, tail=tail, queue_nonempty=len(state.queue) > 0,
    )


def sample_predicted_path(state, rng: np.random.Generator,
                          flights: Optional[Sequence[int]] = None) -> PredictedPath:
    """Draw one predicted future from ``state``.

    ``flights`` limits sampling of unreleased flights to those a policy will
    actually evaluate; queued flights and weather are always sampled.
    """
    return _build_path(state, _Sampler(rng), flights)


def expected_value_path(state, flights: Optional[Sequence[int]] = None) -> PredictedPath:
    """Deterministic prediction with every random quantity at its mean.

    An in-service residual is the mean separation minus the time already
    elapsed, floored at zero.
    """
    return _build_path(state, _Expected(), flights)


def gamma_inverse_cdf(u, alpha, beta):
    """Quantile of Gamma(shape alpha, rate beta); vectorized."""
    return special.gammaincinv(alpha, u) / beta
