"""Shared builders for small hand-made scenarios."""

import math

import numpy as np
import pytest

from runwaysim import kernels
from runwaysim.model import (CostConfig, FlightSpec, ScenarioConfig, SeparationMatrix,
                             WeatherConfig)


def uniform_separations(minutes: float, k=math.inf, phi: float = 1.5) -> SeparationMatrix:
    """Every class pair separated by ``minutes`` (deterministic by default)."""
    s = minutes * 60.0
    return SeparationMatrix(e=tuple((s,) * 4 for _ in range(4)), k=k, phi=phi)


def make_scenario(a, w=None, sigma=0.0, pre_delays=None, k=math.inf, sep=None, weather=None,
                  costs=None, horizon=200.0, seed=0, g=None, lead=100.0):
    """Scenario with flights scheduled at ``a`` and departing ``lead`` minutes earlier."""
    a = list(map(float, a))
    n = len(a)
    w = w or ["LM"] * n
    g = g or [1.0] * n
    flights = tuple(FlightSpec(id=i, a=a[i], d=a[i] - lead, w=w[i], g=g[i], sigma=sigma)
                    for i in range(n))
    return ScenarioConfig(
        flights=flights,
        separations=sep if sep is not None else SeparationMatrix(k=k),
        weather=weather if weather is not None else WeatherConfig.none(),
        costs=costs if costs is not None else CostConfig(),
        horizon=horizon, seed=seed,
        pre_delays=tuple(pre_delays) if pre_delays is not None else None,
    )


@pytest.fixture(params=["python", "compiled"])
def any_backend(request):
    """Run a test under each available kernel backend."""
    try:
        prev = kernels.use_backend(request.param)
    except ImportError:
        pytest.skip(f"{request.param} backend not built")
    yield request.param
    kernels.use_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = []


def record_acceptance(name: str, ok: bool, detail: str):
    """Queue one acceptance line for the terminal summary."""
    _ACCEPTANCE.append(f"[PRIMARY] {'PASS' if ok else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
