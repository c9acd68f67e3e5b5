import numpy as np
import pytest

from runwaysim.engine import (POOLED, ContractError, EventLog, SequenceEvaluator,
                              Simulation, advance_clock, evaluate_sequence, fcfs_order,
                              idle_indicator, landing_recursion, release_flights,
                              static_order_landings)
from runwaysim.model import CostConfig, WeatherConfig, flight_cost
from runwaysim.paths import PredictedPath, expected_value_path, pregenerate_true_path

from conftest import make_scenario, uniform_separations


def _fold(order, A, M):
    """Plain left fold of the landing recursion."""
    out = []
    for pos, j in enumerate(order):
        if pos == 0:
            out.append(A[j])
        else:
            out.append(max(A[j], out[-1] + M[pos - 1]))
    return out


def test_landing_recursion_examples():
    assert landing_recursion([0, 1], {0: 10.0, 1: 11.0}, [2.0]) == [10.0, 12.0]
    assert landing_recursion([0, 1], {0: 10.0, 1: 30.0}, [2.0]) == [10.0, 30.0]
    assert landing_recursion([], {}, []) == []


def test_landing_recursion_matches_fold(rng):
    for _ in range(200):
        n = 10
        order = list(rng.permutation(n))
        A = dict(enumerate(rng.uniform(0, 50, n)))
        M = list(rng.uniform(0.5, 4, n - 1))
        assert landing_recursion(order, A, M) == _fold(order, A, M)


def test_no_flights_only_clock_moves():
    sc = make_scenario([], horizon=50.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    ev = sim.advance(7.5)
    assert sim.t == 7.5 and ev == [] and sim.done


def test_single_deterministic_flight_lands_on_schedule():
    sc = make_scenario([50.0], sigma=0.0, horizon=100.0)
    sim = Simulation(sc, pregenerate_true_path(sc), auto_release="fcfs")
    sim.run_out()
    L, A, rho, Q, R = sim.results()
    assert L[0] == 50.0 and A[0] == 50.0 and rho[0] == 0.0


def test_two_flights_separation():
    sc = make_scenario([10.0, 11.0], sigma=0.0, sep=uniform_separations(2.0), horizon=50.0)
    sim = Simulation(sc, pregenerate_true_path(sc), auto_release="fcfs")
    sim.run_out()
    assert sim.results()[0].tolist() == [10.0, 12.0]


def test_release_examples():
    sc = make_scenario([70.0, 75.0, 80.0, 85.0, 90.0, 95.0], sigma=0.0, horizon=150.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    sim.advance_to(47.0)
    st = sim.state()
    assert st.pool_times[0] == 40.0
    before = st
    release_flights(sim, [])
    assert sim.state().queue == before.queue
    release_flights(sim, [0])
    assert sim.rho[0] == pytest.approx(7.0)
    sim.advance_to(66.0)
    release_flights(sim, [5, 2])
    assert sim.state().queue[-2:] == (5, 2)
    with pytest.raises(ContractError):
        release_flights(sim, [5])          # already released
    sim2 = Simulation(sc, pregenerate_true_path(sc))
    with pytest.raises(ContractError):
        release_flights(sim2, [3])         # not yet pooled


def test_advance_rejects_nonpositive_dt():
    sc = make_scenario([50.0], horizon=100.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    with pytest.raises(ContractError):
        sim.advance(0.0)


def test_marked_flights_release_at_next_update():
    sc = make_scenario([50.0, 55.0], sigma=0.0, horizon=100.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    sim.advance_to(30.0)
    sim.mark([1, 0])
    assert sim.state().marked == (1, 0)
    assert sim.status[0] == POOLED
    state, _ = advance_clock(sim, 0.5)
    assert state.queue == (1, 0)
    assert sim.R[1] == 30.5


def test_pooled_eta_is_t_plus_tau():
    sc = make_scenario([50.0, 60.0], sigma=0.5, horizon=100.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    for t in (25.0, 31.37, 33.333):
        sim.advance_to(t)
        st = sim.state()
        for i in st.pooled():
            assert st.etas[i] == t + 30.0


def _random_instance(rng, n=10, seed=0):
    w = list(rng.choice(["H", "UM", "LM", "S"], n))
    a = np.sort(rng.uniform(40, 100, n))
    wx = None
    if rng.random() < 0.5:
        t0 = rng.uniform(40, 90)
        wx = WeatherConfig(t0, t0 + rng.uniform(5, 40), 0.3, True)
    return make_scenario(a, w=w, sigma=float(rng.uniform(0.05, 0.9)), k=int(rng.choice([4, 25])),
                         weather=wx, pre_delays=rng.normal(0, 5, n), horizon=160.0,
                         seed=seed, lead=60.0)


def _oracle_landings(sc, path, release_order, R):
    """Independent fold from release times and the pre-generated path."""
    sep = sc.separations.minutes()
    wi = path.weather_interval
    cls = [f.cls for f in sc.flights]
    A = {j: path.arrival_hit[j] + (R[j] - path.pool_hit[j]) for j in release_order}
    M = []
    for p, j in zip(release_order[:-1], release_order[1:]):
        m = sep[cls[p], cls[j]] * path.sep_factors[j]
        if wi is not None and wi[0] <= R[j] <= wi[1]:
            m = m * sc.separations.phi
        M.append(m)
    return _fold(release_order, A, M)


def test_engine_random_releases_match_fold(rng):
    for n in range(60):
        sc = _random_instance(rng, seed=n)
        path = pregenerate_true_path(sc)
        sim = Simulation(sc, path)
        while sim.n_unreleased:
            st = sim.state()
            pooled = st.pooled()
            if pooled and rng.random() < 0.3:
                sim.mark(list(rng.permutation(pooled)[: rng.integers(1, len(pooled) + 1)]))
            sim.advance(float(rng.uniform(0.05, 3.0)))
        sim.run_out()
        L, A, rho, Q, R = sim.results()
        order = sorted(range(sc.n_flights), key=lambda j: (R[j], sim.log.records.index(
            next(r for r in sim.log.records if r["event"] == "release" and r["flight"] == j))))
        ref = _oracle_landings(sc, path, order, R)
        assert [L[j] for j in order] == ref
        # landing order equals release order, no landing before A - rho
        assert all(x <= y for x, y in zip(ref, ref[1:]))
        assert np.all(L >= A - rho - 1e-12)
        assert np.all(rho >= 0)


def test_static_order_matches_engine(rng):
    for n in range(30):
        sc = _random_instance(rng, seed=100 + n)
        path = pregenerate_true_path(sc)
        order = list(map(int, rng.permutation(sc.n_flights)))
        sim = Simulation(sc, path, auto_release=order)
        sim.run_out()
        L1 = sim.results()[0]
        L2 = static_order_landings(sc, path, order)[0]
        assert np.array_equal(L1, L2)


def test_advance_is_associative(rng):
    for n in range(10):
        sc = _random_instance(rng, seed=200 + n)
        path = pregenerate_true_path(sc)
        s1, s2 = Simulation(sc, path, auto_release="fcfs"), Simulation(sc, path,
                                                                      auto_release="fcfs")
        t = 0.0
        while t < 150.0:
            dt = float(rng.uniform(0.1, 5.0))
            s1.advance(dt)
            s2.advance(dt / 2)
            s2.advance(dt / 2)
            t += dt
            a, b = s1.state(), s2.state()
            assert a.queue == b.queue
            assert np.array_equal(a.status, b.status)
        s1.run_out()
        s2.run_out()
        assert np.array_equal(s1.results()[0], s2.results()[0])


def test_event_log_round_trip(tmp_path):
    sc = make_scenario([50.0, 60.0], sigma=0.3, k=16, horizon=120.0,
                       weather=WeatherConfig(40.0, 70.0, 0.3, True))
    sim = Simulation(sc, pregenerate_true_path(sc), auto_release="fcfs")
    sim.run_out()
    recs = sim.log.records
    assert [r["t"] for r in recs] == sorted(r["t"] for r in recs)
    kinds = {r["event"] for r in recs}
    assert {"pool_entry", "release", "arrival", "landing"} <= kinds
    f = tmp_path / "log.jsonl"
    sim.log.to_jsonl(f)
    assert EventLog.read_jsonl(f).records == recs


def test_fcfs_order_ties_by_id():
    sc = make_scenario([20.0, 20.0, 10.0], sigma=0.0, horizon=60.0)
    assert fcfs_order(pregenerate_true_path(sc)) == [0, 1, 2]   # all pooled at t = 0


# --- sequence evaluation ----------------------------------------------------

def _hand_cost(state, seq, path):
    """Step through the release protocol one flight at a time."""
    sep = state.sep_minutes
    phi = state.separations.phi
    wi = path.weather_interval
    prev = path.tail
    rel = state.t
    J = 0.0
    for j in seq:
        f = state.flights[j]
        q = path.pool_arrivals[j]
        R = max(rel, q)
        rel = R
        A = R + path.remaining_travel[j]
        rho = R - q
        if prev is None:
            L = A
        else:
            M = sep[prev[0], f.cls] * path.sep_factors[j]
            if wi is not None and wi[0] <= R <= wi[1]:
                M *= phi
            L = max(A, prev[1] + M)
        J += flight_cost(L, A, rho, f, state.costs)
        prev = (f.cls, L)
    return J


def test_evaluate_sequence_hand_oracle(rng):
    sc = make_scenario([60.0, 62.0, 65.0, 90.0], w=["H", "S", "LM", "UM"], sigma=0.4, k=25,
                       horizon=200.0, g=[1.0, 0.5, 0.7, 0.9],
                       weather=WeatherConfig(50.0, 100.0, 0.4, True),
                       costs=CostConfig(gamma_s=5.0, theta_s=0.3, theta_w=0.7))
    sim = Simulation(sc, pregenerate_true_path(sc))
    while sim.status[0] != POOLED:
        sim.advance(0.5)
    sim.release([0])
    sim.advance(1.5)
    st = sim.state()
    assert st.queue == (0,)
    from runwaysim.paths import sample_predicted_path
    for seq in ([1, 2, 3], [3, 2, 1], [2, 1, 3]):
        p = expected_value_path(st)
        assert evaluate_sequence(st, seq, p) == pytest.approx(_hand_cost(st, seq, p), rel=1e-12)
        for _ in range(5):
            p = sample_predicted_path(st, rng)
            J1 = evaluate_sequence(st, seq, p)
            assert J1 == pytest.approx(_hand_cost(st, seq, p), rel=1e-12)
            assert evaluate_sequence(st, seq, p) == J1
    with pytest.raises(ContractError):
        evaluate_sequence(st, [0, 1, 2], expected_value_path(st))


def test_single_on_schedule_flight_costs_nothing():
    sc = make_scenario([50.0], sigma=0.0, horizon=100.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    sim.advance_to(20.0)          # the pool entry instant
    st = sim.state()
    p = expected_value_path(st)
    assert p.remaining_travel[0] == 30.0
    assert evaluate_sequence(st, [0], p) == 0.0


def _manual_path(t, q1, travel1, tail_L, queue_nonempty=True):
    F = 2
    nan = np.full(F, np.nan)
    q = nan.copy()
    q[1] = q1
    tr = nan.copy()
    tr[1] = travel1
    z = np.ones(F)
    return PredictedPath(t=t, pool_arrivals=q, remaining_travel=tr, sep_factors=z,
                         queue_arrivals=nan.copy(), queue_landings=nan.copy(), weather=None,
                         in_service_remaining=None,
                         tail=(2, tail_L) if queue_nonempty else None,
                         queue_nonempty=queue_nonempty)


def test_idle_indicator_examples():
    sc = make_scenario([40.0, 99.0], sigma=0.0, sep=uniform_separations(2.0), horizon=200.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    sim.advance_to(60.0)
    st = sim.state()
    assert st.status[1] == 0
    # predicted arrival 100 vs slot 96 + 2 = 98
    assert idle_indicator(st, [1], _manual_path(60.0, 70.0, 30.0, 96.0)) == 1
    # predicted arrival 98 vs slot 98 + 2 = 100
    assert idle_indicator(st, [1], _manual_path(60.0, 70.0, 28.0, 98.0)) == 0
    # nothing queued ahead
    assert idle_indicator(st, [1], _manual_path(60.0, 70.0, 28.0, 0.0, False)) == 1
    with pytest.raises(ContractError):
        idle_indicator(st, [], _manual_path(60.0, 70.0, 28.0, 98.0))


def test_evaluator_batch_matches_single(rng):
    sc = make_scenario(np.linspace(50, 80, 8), w=["H", "S", "LM", "UM"] * 2, sigma=0.3, k=16,
                       horizon=150.0)
    sim = Simulation(sc, pregenerate_true_path(sc))
    sim.advance_to(25.0)
    st = sim.state()
    p = expected_value_path(st)
    seqs = np.array([rng.permutation(8)[:5] for _ in range(12)])
    J, xi = SequenceEvaluator.from_state(st).evaluate(p, seqs)
    for s, j in zip(seqs, J):
        assert j == evaluate_sequence(st, list(s), p)
    assert set(np.unique(xi)) <= {0.0, 1.0}
