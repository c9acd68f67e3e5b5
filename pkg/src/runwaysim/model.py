"""Domain types and cost/separation arithmetic.

All times are minutes except separation entries, which are kept in seconds
(the unit they are usually published in) and converted when the engine needs
them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

SCHEMA_VERSION = 1

CLASSES = ("H", "UM", "LM", "S")
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}

# leader (rows) x follower (columns), seconds
DEFAULT_SEPARATIONS = (
    (97.0, 121.0, 121.0, 145.0),
    (72.0, 72.0, 97.0, 97.0),
    (72.0, 72.0, 72.0, 72.0),
    (72.0, 72.0, 72.0, 72.0),
)


class ConfigError(ValueError):
    """Raised when a configuration violates a documented invariant."""


def class_index(w) -> int:
    if isinstance(w, (int, np.integer)):
        if not 0 <= int(w) < len(CLASSES):
            raise ConfigError(f"unknown weight class index {w}")
        return int(w)
    try:
        return CLASS_INDEX[w]
    except KeyError:
        raise ConfigError(f"unknown weight class {w!r}") from None


@dataclass(frozen=True)
class FlightSpec:
    """Static attributes of one flight.

    ``q`` is the lead time between the onset of tactical uncertainty and the
    scheduled departure, so ``h = d - q``.
    """

    id: int
    a: float
    d: float
    w: str
    g: float = 1.0
    sigma: float = 0.5
    q: float = 15.0

    def __post_init__(self):
        class_index(self.w)
        if not self.d < self.a:
            raise ConfigError(f"flight {self.id}: departure {self.d} not before arrival {self.a}")
        if not 0.0 <= self.g <= 1.0:
            raise ConfigError(f"flight {self.id}: cost weight {self.g} outside [0, 1]")
        if self.sigma < 0:
            raise ConfigError(f"flight {self.id}: negative sigma")
        if self.q < 0:
            raise ConfigError(f"flight {self.id}: negative lead time q")

    @property
    def h(self) -> float:
        return self.d - self.q

    @property
    def cls(self) -> int:
        return CLASS_INDEX[self.w]


@dataclass(frozen=True)
class SeparationMatrix:
    """Fine-weather separations (seconds), Erlang shape ``k`` and bad-weather factor ``phi``.

    ``k = inf`` gives deterministic separations, which is handy for tests.
    """

    e: Tuple[Tuple[float, ...], ...] = DEFAULT_SEPARATIONS
    k: float = 25
    phi: float = 1.5

    def __post_init__(self):
        arr = np.asarray(self.e, dtype=float)
        if arr.shape != (4, 4):
            raise ConfigError("separation matrix must be 4x4")
        if np.any(arr <= 0):
            raise ConfigError("separations must be positive")
        if not self.k >= 1:
            raise ConfigError("Erlang shape k must be >= 1")
        if math.isfinite(self.k) and float(self.k) != int(self.k):
            raise ConfigError("Erlang shape k must be an integer")
        if not self.phi >= 1.0:
            raise ConfigError("weather multiplier phi must be >= 1")
        object.__setattr__(self, "e", tuple(tuple(float(x) for x in row) for row in arr))

    def seconds(self) -> np.ndarray:
        return np.array(self.e, dtype=float)

    def minutes(self) -> np.ndarray:
        return self.seconds() / 60.0

    @property
    def cv(self) -> float:
        return 1.0 / math.sqrt(self.k)


@dataclass(frozen=True)
class WeatherConfig:
    """Initial forecast [t0, t1] of a single bad-weather period."""

    t0: float = 0.0
    t1: float = 0.0
    nu: float = 0.0
    present: bool = False

    def __post_init__(self):
        if self.present and not self.t0 < self.t1:
            raise ConfigError("weather forecast needs t0 < t1")
        if self.nu < 0:
            raise ConfigError("weather nu must be >= 0")

    @classmethod
    def none(cls) -> "WeatherConfig":
        return cls()


@dataclass(frozen=True)
class CostConfig:
    gamma_s: float = 15.0
    gamma_w: float = 0.0
    theta_s: float = 0.5
    theta_w: float = 0.5
    tau: float = 30.0

    def __post_init__(self):
        for name in ("gamma_s", "gamma_w", "theta_s", "theta_w"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if abs(self.theta_s + self.theta_w - 1.0) > 1e-12:
            raise ConfigError("theta_s + theta_w must equal 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to pre-generate one scenario's hidden sample path.

    ``pre_delays`` holds the realized pre-tactical delays (one per flight);
    ``None`` means zero delays. ``meta`` carries free-form labels (stratum,
    scenario index) that do not affect simulation.
    """

    flights: Tuple[FlightSpec, ...]
    separations: SeparationMatrix = field(default_factory=SeparationMatrix)
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    costs: CostConfig = field(default_factory=CostConfig)
    horizon: float = 420.0
    grid_step: float = 0.01
    seed: int = 0
    pre_delays: Optional[Tuple[float, ...]] = None
    meta: Tuple[Tuple[str, object], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flights", tuple(self.flights))
        if self.pre_delays is not None:
            object.__setattr__(self, "pre_delays", tuple(float(x) for x in self.pre_delays))
            if len(self.pre_delays) != len(self.flights):
                raise ConfigError("pre_delays must have one entry per flight")
        if isinstance(self.meta, dict):
            object.__setattr__(self, "meta", tuple(sorted(self.meta.items())))
        if not self.horizon > 0 or not self.grid_step > 0:
            raise ConfigError("horizon and grid_step must be positive")
        steps = self.horizon / self.grid_step
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigError("horizon must be a whole number of grid steps")
        ids = [f.id for f in self.flights]
        if ids != list(range(len(ids))):
            raise ConfigError("flight ids must be 0..F-1 in order")

    @property
    def n_flights(self) -> int:
        return len(self.flights)

    @property
    def n_grid(self) -> int:
        return int(round(self.horizon / self.grid_step)) + 1

    def delays(self) -> np.ndarray:
        if self.pre_delays is None:
            return np.zeros(self.n_flights)
        return np.asarray(self.pre_delays, dtype=float)

    def expected_arrivals(self) -> np.ndarray:
        """a + pre-tactical delay per flight."""
        return np.array([f.a for f in self.flights]) + self.delays()

    def meta_dict(self) -> dict:
        return dict(self.meta)

    def with_sigma(self, sigma: float, nu: Optional[float] = None) -> "ScenarioConfig":
        import dataclasses

        flights = tuple(dataclasses.replace(f, sigma=sigma) for f in self.flights)
        weather = self.weather
        if nu is not None:
            weather = dataclasses.replace(weather, nu=nu)
        return dataclasses.replace(self, flights=flights, weather=weather)

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "units": {"time": "min", "separations": "s", "sigma": "min/sqrt(min)"},
            "flights": [asdict(f) for f in self.flights],
            "separations": {"e": [list(r) for r in self.separations.e],
                            "k": _num_out(self.separations.k), "phi": self.separations.phi},
            "weather": asdict(self.weather),
            "costs": asdict(self.costs),
            "horizon": self.horizon,
            "grid_step": self.grid_step,
            "seed": self.seed,
            "pre_delays": None if self.pre_delays is None else list(self.pre_delays),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported scenario schema version {version!r}")
        sep = doc["separations"]
        return cls(
            flights=tuple(FlightSpec(**f) for f in doc["flights"]),
            separations=SeparationMatrix(e=tuple(tuple(r) for r in sep["e"]),
                                         k=_num_in(sep["k"]), phi=sep["phi"]),
            weather=WeatherConfig(**doc["weather"]),
            costs=CostConfig(**doc["costs"]),
            horizon=doc["horizon"],
            grid_step=doc["grid_step"],
            seed=doc["seed"],
            pre_delays=doc.get("pre_delays"),
            meta=tuple(sorted(doc.get("meta", {}).items())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; labels in ``meta`` are excluded."""
        doc = self.to_dict()
        doc.pop("meta")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _num_out(x):
    return "inf" if x == math.inf else x


def _num_in(x):
    return math.inf if x == "inf" else x


# --- separations ---------------------------------------------------------

def in_interval(t: float, interval) -> bool:
    """True if ``t`` lies in the closed interval; ``None`` is the empty set."""
    if interval is None:
        return False
    u0, u1 = interval
    return u0 <= t <= u1


def required_separation(leader_class, follower_class, release_time: float,
                        weather_interval, matrix: SeparationMatrix) -> float:
    """Expected separation in seconds, scaled by ``phi`` when the follower is
    released inside the bad-weather interval."""
    e = matrix.e[class_index(leader_class)][class_index(follower_class)]
    if in_interval(release_time, weather_interval):
        return matrix.phi * e
    return e


# --- costs ---------------------------------------------------------------

CostFn = Callable[[float, float, float, FlightSpec, CostConfig], float]
_COSTS: Dict[str, CostFn] = {}


def register_cost(name: str):
    """Decorator adding a per-flight cost function under ``name``."""

    def deco(fn: CostFn) -> CostFn:
        _COSTS[name] = fn
        return fn

    return deco


@register_cost("quadratic")
def quadratic_cost(L, A, rho, flight, costs):
    late = L - flight.a - costs.gamma_s
    air = L - (A - rho) - costs.gamma_w
    cs = late * late if late > 0 else 0.0
    cw = air * air if air > 0 else 0.0
    return flight.g * (costs.theta_s * cs + costs.theta_w * cw)


def flight_cost(L: float, A: float, rho: float, flight: FlightSpec, costs: CostConfig,
                kind: str = "quadratic") -> float:
    """Weighted cost of one landing.

    Landing before the no-holding unconstrained time ``A - rho`` would mean the
    engine produced an impossible schedule, so it raises.
    """
    if rho < 0:
        raise AssertionError(f"flight {flight.id}: negative holding {rho}")
    if L < A - rho - 1e-9:
        raise AssertionError(f"flight {flight.id}: lands at {L} before {A - rho}")
    return _COSTS[kind](L, A, rho, flight, costs)


def total_objective(per_flight_costs: Sequence[float]) -> float:
    return float(math.fsum(per_flight_costs))
