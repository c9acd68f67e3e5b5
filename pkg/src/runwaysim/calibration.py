"""Fitting pre-tactical delay distributions from historical landing records.

Workflow: read records, drop days on which delays visibly propagated from one
landing to the next (congestion contaminates the per-flight statistics), then
fit a gamma distribution per flight so that pre-tactical plus tactical
variability reproduces the observed mean and variance of the landing time.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import special

CSV_FIELDS = ("flight_id", "day", "sched_arr_min", "actual_arr_min")


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FlightRecord:
    flight_id: int
    day: int
    sched_arr_min: float
    actual_arr_min: float

    @property
    def lateness(self) -> float:
        return self.actual_arr_min - self.sched_arr_min

    @property
    def early(self) -> bool:
        return self.actual_arr_min < self.sched_arr_min


def read_records_csv(path) -> List[FlightRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [FlightRecord(int(r["flight_id"]), int(r["day"]), float(r["sched_arr_min"]),
                             float(r["actual_arr_min"])) for r in reader]


def write_records_csv(records: Iterable[FlightRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow([r.flight_id, r.day, repr(r.sched_arr_min), repr(r.actual_arr_min)])


# --- day filter -------------------------------------------------------------

@dataclass
class DayTest:
    day: int
    n1: int
    n2: int
    p1: float
    p2: float
    z: float
    p_value: float
    flagged: bool


@dataclass
class FilterResult:
    retained: List[int]
    discarded: List[int]
    tests: Dict[int, DayTest] = field(default_factory=dict)

    @property
    def flagged(self) -> List[int]:
        return sorted(d for d, t in self.tests.items() if t.flagged)


def two_proportion_z(x1: int, n1: int, x2: int, n2: int):
    """Pooled two-proportion z statistic and two-sided p-value."""
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (p1 - p2) / se
    return z, math.erfc(abs(z) / math.sqrt(2))


def day_test(day: int, records: Sequence[FlightRecord]) -> DayTest:
    """Compare the early-landing rate of flights whose predecessor was early
    (S1) against those whose predecessor was not (S2). The day's first landing
    has no predecessor and is left out."""
    order = sorted(records, key=lambda r: (r.actual_arr_min, r.flight_id))
    x1 = n1 = x2 = n2 = 0
    for prev, cur in zip(order[:-1], order[1:]):
        if prev.early:
            n1 += 1
            x1 += cur.early
        else:
            n2 += 1
            x2 += cur.early
    if n1 == 0 or n2 == 0:
        return DayTest(day, n1, n2, math.nan, math.nan, math.nan, math.nan, True)
    z, p = two_proportion_z(x1, n1, x2, n2)
    return DayTest(day, n1, n2, x1 / n1, x2 / n2, z, p, False)


def filter_days(records: Sequence[FlightRecord], alpha: float = 0.05) -> FilterResult:
    """Split days into retained and discarded by the propagation test.

    Days where the test is undefined (no early or no non-early predecessors)
    are retained and flagged.
    """
    by_day = defaultdict(list)
    for r in records:
        by_day[r.day].append(r)
    res = FilterResult([], [])
    for day in sorted(by_day):
        t = day_test(day, by_day[day])
        res.tests[day] = t
        if not t.flagged and t.p_value < alpha:
            res.discarded.append(day)
        else:
            res.retained.append(day)
    return res


# --- gamma fit --------------------------------------------------------------

@dataclass(frozen=True)
class FittedParams:
    """Gamma(shape alpha, rate beta) for Y = pre_delay + a - h.

    With ``fallback`` set the pre-tactical delay is the constant ``xbar - a``.
    """

    alpha: float
    beta: float
    xbar: float
    s2: float
    h: float
    sigma: float
    n: int
    fallback: bool

    @property
    def pre_var(self) -> float:
        return 0.0 if self.fallback else self.alpha / self.beta ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("alpha", "beta"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedParams":
        d = dict(d)
        for k in ("alpha", "beta"):
            if d[k] is None:
                d[k] = math.nan
        return cls(**d)


def gamma_params_from_moments(xbar: float, s2: float, sigma: float, h: float, n: int = 0
                              ) -> FittedParams:
    D = xbar - h
    if D <= 0:
        raise FitError(f"mean landing time {xbar} is not after the tactical onset {h}")
    resid = s2 - sigma * sigma * D
    if resid <= 0:
        return FittedParams(math.nan, math.nan, xbar, s2, h, sigma, n, True)
    return FittedParams(D * D / resid, D / resid, xbar, s2, h, sigma, n, False)


def fit_gamma_params(records: Sequence[FlightRecord], sigma: float, h: float,
                     outlier_window: float = 120.0) -> FittedParams:
    """Fit one flight's gamma parameters from its records.

    Records more than ``outlier_window`` minutes from schedule are dropped.
    """
    x = np.array([r.actual_arr_min for r in records if abs(r.lateness) <= outlier_window])
    if x.size < 2:
        raise FitError(f"need at least 2 usable records, got {x.size}")
    return gamma_params_from_moments(float(x.mean()), float(x.var(ddof=1)), sigma, h, int(x.size))


def fit_all(records: Sequence[FlightRecord], schedule: Dict[int, tuple], sigma: float,
            outlier_window: float = 120.0, retained_days: Optional[Iterable[int]] = None
            ) -> Dict[int, FittedParams]:
    """Fit every flight in ``schedule`` (flight id -> (a, h))."""
    days = None if retained_days is None else set(retained_days)
    per = defaultdict(list)
    for r in records:
        if days is None or r.day in days:
            per[r.flight_id].append(r)
    return {fid: fit_gamma_params(per[fid], sigma, h, outlier_window)
            for fid, (a, h) in schedule.items()}


def sample_pretactical_delay(params: FittedParams, a: float, h: float,
                             rng: Optional[np.random.Generator] = None,
                             u: Optional[float] = None) -> float:
    """Draw a pre-tactical delay. ``u`` (a uniform in [0, 1)) may be passed
    instead of ``rng`` to use common random numbers across fits."""
    if params.fallback:
        return params.xbar - a
    if u is None:
        u = (rng if rng is not None else np.random.default_rng()).random()
    y = float(special.gammaincinv(params.alpha, u)) / params.beta
    return y - (a - h)


def save_params_json(params: Dict[int, FittedParams], path):
    with open(path, "w") as fh:
        json.dump({str(k): v.to_dict() for k, v in sorted(params.items())}, fh, indent=1)


def load_params_json(path) -> Dict[int, FittedParams]:
    with open(path) as fh:
        return {int(k): FittedParams.from_dict(v) for k, v in json.load(fh).items()}


# --- synthetic history ------------------------------------------------------

def synthetic_day(day: int, sched: Sequence[float], late_mean: Sequence[float],
                  late_sd: Sequence[float], rng: np.random.Generator,
                  propagate: bool = False) -> List[FlightRecord]:
    """One day of records; with ``propagate`` each landing repeats its
    predecessor's early/late status nine times out of ten."""
    n = len(sched)
    out = []
    if not propagate:
        lat = rng.normal(late_mean, late_sd)
    else:
        # early/late runs along the schedule; offsets stay below half the gap
        # to either neighbour so the landing order equals the schedule order
        order = np.argsort(sched, kind="stable")
        s = np.asarray(sched, dtype=float)[order]
        gaps = np.diff(s)
        room = np.minimum(np.r_[np.inf, gaps], np.r_[gaps, np.inf])
        room = np.where(np.isfinite(room), room, 2.0)
        lat = np.empty(n)
        early = rng.random() < 0.5
        for r, i in enumerate(order):
            if r and rng.random() >= 0.9:
                early = not early
            mag = rng.uniform(0.1, 0.45) * room[r]
            lat[i] = -mag if early else mag
    for i in range(n):
        out.append(FlightRecord(i, day, float(sched[i]), float(sched[i] + lat[i])))
    return out


def synthetic_history(sched: Sequence[float], late_mean: Sequence[float],
                      late_sd: Sequence[float], n_days: int, rng: np.random.Generator,
                      propagating_days: Iterable[int] = (), outlier_rate: float = 0.0
                      ) -> List[FlightRecord]:
    """Independent-lateness history with optional contaminated days and
    gross outliers (shifted by 150-300 minutes)."""
    bad = set(propagating_days)
    recs: List[FlightRecord] = []
    for d in range(n_days):
        day = synthetic_day(d, sched, late_mean, late_sd, rng, propagate=d in bad)
        if outlier_rate > 0:
            hits = rng.random(len(day)) < outlier_rate
            day = [FlightRecord(r.flight_id, r.day, r.sched_arr_min,
                                r.actual_arr_min + rng.uniform(150, 300)) if hit else r
                   for r, hit in zip(day, hits)]
        recs.extend(day)
    return recs
