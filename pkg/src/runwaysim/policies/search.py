"""Neighbourhood moves, running estimators and ranking-and-selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence, Tuple

import numpy as np


def _triangular_from_int(m: int, x: int) -> int:
    """Map x in 0..m(m+1)/2-1 to the position p whose block contains it;
    position p owns the (m + 1 - p) integers after the first
    C(p-1) = (p-1) m - (p-1)(p-2)/2."""
    # invert the quadratic, then correct for floating-point error
    b = 2 * m + 1
    p = int((b - math.sqrt(b * b - 8 * x)) / 2) + 1
    while p > 1 and (p - 1) * m - (p - 1) * (p - 2) // 2 > x:
        p -= 1
    while p * m - p * (p - 1) // 2 <= x:
        p += 1
    return p


def triangular_index(m: int, rng: np.random.Generator) -> int:
    """Draw p in 1..m with P(p) = (m + 1 - p) / (m (m + 1) / 2)."""
    total = m * (m + 1) // 2
    return _triangular_from_int(m, int(rng.integers(total)))


def shift(s: Tuple[int, ...], j: int, forwards: bool, P: int) -> Tuple[int, ...]:
    """Move the flight at 1-based position ``j`` by ``P`` places (clamped)."""
    l = len(s)
    f = s[j - 1]
    if forwards:
        t = max(j - P, 1)
        return s[: t - 1] + (f,) + s[t - 1: j - 1] + s[j:]
    t = min(j + P, l)
    return s[: j - 1] + s[j:t] + (f,) + s[t:]


def move_operator_H(s: Sequence[int], rng: np.random.Generator) -> Tuple[int, ...]:
    """Random shift move: early positions are picked more often, the flight
    moves 1-3 places forwards or backwards.

    A single integer draw encodes position, direction and distance (each of
    the 6 direction/distance pairs is equally likely at every position).
    """
    s = tuple(s)
    l = len(s)
    if l <= 1:
        return s
    x = int(rng.integers(3 * l * (l + 1)))
    x, rem = divmod(x, 6)
    j = _triangular_from_int(l, x)
    return shift(s, j, rem % 2 == 0, rem // 2 + 1)


def mutation_window(l: int, n_unqueued: int) -> Tuple[int, int]:
    """(block length, number of possible start positions) for :func:`mutate`."""
    Q = min(l, n_unqueued)
    P = min(4, Q)
    return P, Q - P + 1


def mutate(s: Sequence[int], n_unqueued: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """Shuffle a short contiguous block of ``s``; blocks near the front are
    chosen more often."""
    s = list(s)
    P, R = mutation_window(len(s), n_unqueued)
    if P <= 1 or R < 1:
        return tuple(s)
    j = triangular_index(R, rng)
    block = s[j - 1: j - 1 + P]
    perm = rng.permutation(P)
    s[j - 1: j - 1 + P] = [block[k] for k in perm]
    return tuple(s)


def psi_schedule(rule):
    """Step-size function n -> psi_n. ``"1/n"`` or a constant in (0, 1]."""
    if rule == "1/n":
        return lambda n: 1.0 / n
    c = float(rule)
    if not 0 < c <= 1:
        raise ValueError("constant step size must lie in (0, 1]")
    # the first update must still replace the zero initial value
    return lambda n: 1.0 if n == 1 else c


@dataclass
class SequenceStats:
    """Running estimates for one candidate sequence."""

    V: float = 0.0
    W: float = 0.0
    Upsilon: float = 0.0
    n: int = 0


def update_stats(stats: SequenceStats, J: float, xi: float, psi_rule="1/n") -> SequenceStats:
    n = stats.n + 1
    psi = psi_schedule(psi_rule)(n)
    return SequenceStats(
        V=(1 - psi) * stats.V + psi * J,
        W=(1 - psi) * stats.W + psi * J * J,
        Upsilon=(1 - psi) * stats.Upsilon + psi * xi,
        n=n,
    )


def z_quantile(eta: float) -> float:
    return NormalDist().inv_cdf(1.0 - eta / 2.0)


def rank_and_select(V, W, n: int, eta: float = 0.05) -> Optional[np.ndarray]:
    """Boolean keep-mask; ``None`` when ``n < 2`` (threshold undefined).

    Member s survives iff V_s <= V_s' + Z_ss' for every other s'. A negative
    variance term (round-off) is clamped to zero.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if n < 2:
        return None
    z = z_quantile(eta)
    var = W[:, None] + W[None, :] - V[:, None] ** 2 - V[None, :] ** 2
    np.maximum(var, 0.0, out=var)
    Z = np.sqrt(z * z / (n - 1) * var)
    ok = V[:, None] <= V[None, :] + Z
    np.fill_diagonal(ok, True)
    return ok.all(axis=1)
