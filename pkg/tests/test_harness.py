import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from runwaysim import harness as hs
from runwaysim.cli import main
from runwaysim.paths import pregenerate_true_path
from runwaysim.policies import PolicyConfig

from conftest import make_scenario

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def schedule():
    return hs.desk_schedule()[0]


def _non_sigma_fingerprint(sc):
    """Hash of everything in a scenario that must not depend on sigma."""
    path = pregenerate_true_path(sc)
    parts = [sc.separations.k, sc.weather.present, sc.weather.t0, sc.weather.t1,
             sc.costs.gamma_s, sc.costs.theta_s, tuple(f.g for f in sc.flights), sc.seed,
             tuple(path.sep_quantiles)]
    return hashlib.sha256(repr(parts).encode()).hexdigest()


def test_generate_scenarios_crn(schedule):
    plan = hs.ExperimentPlan(strata=(0.1, 0.5, 0.9), scenarios_per_stratum=4, base_seed=11)
    scs = hs.generate_scenarios(plan, schedule)
    assert len(scs) == 12
    for n in range(4):
        trio = [scs[i * 4 + n] for i in range(3)]
        assert len({_non_sigma_fingerprint(sc) for sc in trio}) == 1
        assert [sc.flights[0].sigma for sc in trio] == [0.1, 0.5, 0.9]
        for sc in trio:
            assert sc.weather.nu == (sc.flights[0].sigma if sc.weather.present else 0.0)
    # different scenario indices do differ
    assert _non_sigma_fingerprint(scs[0]) != _non_sigma_fingerprint(scs[1])


def test_generated_scenario_fields(schedule):
    plan = hs.ExperimentPlan(strata=(0.3,), scenarios_per_stratum=40, base_seed=2)
    scs = hs.generate_scenarios(plan, schedule)
    ks, windows = set(), set()
    for sc in scs:
        ks.add(sc.separations.k)
        assert sc.costs.tau == 30.0 and sc.costs.gamma_w == 0.0
        assert sc.costs.gamma_s in (0.0, 15.0)
        assert sc.costs.theta_s in hs.THETA_CHOICES
        if sc.weather.present:
            windows.add((sc.weather.t0, sc.weather.t1))
        for f in sc.flights:
            lo, hi = hs.G_RANGES[f.w]
            assert lo <= f.g <= hi
            assert f.h == f.d - 15.0
        exp = sc.expected_arrivals()
        assert np.all((exp > 0) & (exp < sc.horizon))
    assert ks <= set(hs.K_CHOICES) and len(ks) >= 4
    assert windows <= set(plan.weather_windows)
    weather_share = np.mean([sc.weather.present for sc in scs])
    assert 0.5 < weather_share < 0.95


def test_k400_gives_cv_005():
    from runwaysim.model import SeparationMatrix
    assert SeparationMatrix(k=400).cv == pytest.approx(0.05)


def _small():
    rng = np.random.default_rng(1)
    a = np.sort(rng.uniform(40, 70, 8))
    return make_scenario(a, w=list(rng.choice(["H", "LM", "S"], 8)), sigma=0.4, k=25,
                         pre_delays=rng.normal(0, 3, 8), horizon=150.0, lead=60.0, seed=4)


def test_fcfs_is_clock_independent():
    sc = _small()
    r = [hs.run_policy(sc, "fcfs", clock_mode=m) for m in ("virtual", "wall", "process")]
    assert r[0].L == r[1].L == r[2].L and r[0].objective == r[1].objective


def test_virtual_mode_is_deterministic():
    sc = _small()
    cfg = PolicyConfig(n_rel=20, n_repop=100)
    for pol in ("simheur", "detheur", "dstat"):
        r1 = hs.run_policy(sc, pol, policy_config=cfg)
        r2 = hs.run_policy(sc, pol, policy_config=cfg)
        assert r1.L == r2.L and r1.passes == r2.passes and r1.end_time == r2.end_time
        assert r1.objective == pytest.approx(r1.recompute_objective(sc), rel=1e-12)


def test_wall_clock_mode_runs():
    sc = _small()
    r = hs.run_policy(sc, "detheur", clock_mode="wall", compression=600.0)
    assert all(np.isfinite(r.L)) and r.passes > 0


def test_run_result_round_trip(tmp_path):
    r = hs.run_policy(_small(), "fcfs")
    f = tmp_path / "res.jsonl"
    hs.save_results([r, r], f)
    back = hs.load_results(f)
    assert [json.dumps(x.to_dict()) for x in back] == [json.dumps(r.to_dict())] * 2


def _fake(policy, scenario, objective, sigma=0.5, classes=("H", "H"), L=(1.0, 2.0)):
    n = len(L)
    return hs.RunResult(policy=policy, scenario=scenario, sigma=sigma, L=list(L), A=list(L),
                        rho=[0.0] * n, Q=[0.0] * n, R=[0.0] * n, a=list(L), w=list(classes),
                        objective=objective)


def test_improvement_examples():
    assert hs.improvement_pct(90.0, 100.0) == pytest.approx(10.0)
    assert hs.improvement_pct(0.0, 0.0) == 0.0
    assert math.isnan(hs.improvement_pct(5.0, 0.0))


def test_improvement_antisymmetric(rng):
    for _ in range(200):
        x, y = rng.uniform(1, 100, 2)
        assert np.sign(hs.improvement_pct(x, y)) == -np.sign(hs.improvement_pct(y, x))
    results = [_fake("simheur", n, 90.0 + n) for n in range(5)] + [
        _fake("fcfs", n, 100.0 - n) for n in range(5)]
    t1 = hs.compare_policies(results, reference="simheur")
    t2 = hs.compare_policies(results, reference="fcfs")
    m1 = t1.row("0.5", "simheur", "fcfs")["mean_improvement_pct"]
    m2 = t2.row("0.5", "fcfs", "simheur")["mean_improvement_pct"]
    assert np.sign(m1) == -np.sign(m2)


def test_identical_policies_zero_improvement():
    results = [_fake(p, n, 50.0 + 3 * n) for p in ("simheur", "detheur") for n in range(6)]
    row = hs.compare_policies(results).row("0.5", "simheur", "detheur")
    assert row["mean_improvement_pct"] == 0.0
    assert row["ci_low"] == 0.0 and row["ci_high"] == 0.0
    pol = hs.compare_policies(results).row("0.5", "simheur")
    assert pol["wins"] == 3.0


def test_same_class_follow_example():
    assert hs.same_class_follow_pct([0, 1, 2, 3, 4], ["H", "H", "LM", "LM", "H"]) == 40.0
    assert hs.same_class_follow_pct([], []) == 0.0


def test_mismatched_coverage_raises():
    results = [_fake("simheur", 0, 1.0), _fake("simheur", 1, 1.0), _fake("fcfs", 0, 1.0)]
    with pytest.raises(hs.ComparisonError):
        hs.compare_policies(results)
    with pytest.raises(hs.ComparisonError):
        hs.compare_policies([_fake("fcfs", 0, 1.0), _fake("fcfs", 0, 2.0)])


def test_pooled_stratum_row():
    results = [_fake(p, n, 10.0 + n, sigma=s) for p in ("simheur", "fcfs") for n in range(3)
               for s in (0.1, 0.9)]
    t = hs.compare_policies(results)
    assert t.row("all", "simheur", "fcfs")["n"] == 6


def test_paired_bootstrap_ci():
    x = np.arange(50.0)
    m, lo, hi = hs.paired_bootstrap_ci(x, x + 2.0)
    assert m == -2.0 and lo == -2.0 and hi == -2.0


def test_empty_report_is_header_only(tmp_path):
    written = hs.emit_reports(hs.compare_policies([]), tmp_path)
    lines = (tmp_path / "improvements.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].split(",") == list(hs.IMPROVEMENT_COLUMNS)
    assert tmp_path / "metrics.json" in written


def test_report_columns_golden(tmp_path):
    golden = json.loads((DATA / "report_columns.json").read_text())
    results = [_fake(p, n, 10.0 + n) for p in ("simheur", "fcfs") for n in range(3)]
    hs.emit_reports(hs.compare_policies(results), tmp_path, results=results)
    for name, cols in golden.items():
        with open(tmp_path / name) as fh:
            assert next(csv.reader(fh)) == cols


def test_metrics_json_round_trip():
    results = [_fake(p, n, 10.0 + n) for p in ("simheur", "dstat") for n in range(4)]
    t = hs.compare_policies(results)
    back = hs.MetricsTable.from_json(t.to_json())
    assert back.to_dict() == t.to_dict()


def test_report_io_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        hs.emit_reports(hs.compare_policies([]), blocker / "sub")


def test_plan_round_trip():
    plan = hs.ExperimentPlan(strata=(0.5,), scenarios_per_stratum=3, policy=PolicyConfig(S=10),
                             virtual_costs=hs.VirtualCosts(move=1e-3))
    assert hs.ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan
    with pytest.raises(ValueError):
        hs.ExperimentPlan(policies=("nope",))
    with pytest.raises(ValueError):
        hs.ExperimentPlan(scenarios_per_stratum=0)


def test_run_experiment_records_failures(monkeypatch):
    sc = _small()
    plan = hs.ExperimentPlan(policies=("fcfs", "dstat"))

    def boom(*a, **k):
        raise RuntimeError("controller exploded")

    monkeypatch.setattr(hs, "dstat_policy", boom)
    res, fails = hs.run_experiment(plan, [sc])
    assert [r.policy for r in res] == ["fcfs"]
    assert fails[0].policy == "dstat" and "exploded" in fails[0].error


# --- CLI --------------------------------------------------------------------------

def test_cli_calibrate_demo(tmp_path, capsys):
    assert main(["calibrate", "--write-demo", str(tmp_path / "demo")]) == 0
    out = tmp_path / "params.json"
    assert main(["calibrate", "--records", str(tmp_path / "demo/records.csv"),
                 "--schedule", str(tmp_path / "demo/schedule.csv"), "--out", str(out)]) == 0
    params = json.loads(out.read_text())
    assert len(params) == 60
    days = json.loads(out.with_suffix(".days.json").read_text())
    # every propagating day is caught (dense schedules also lose some clean days)
    assert set(range(0, 60, 5)) <= set(days["discarded_days"])


def test_cli_generate_run_report(tmp_path, capsys):
    exp = tmp_path / "exp"
    assert main(["generate", "--strata", "0.1,0.9", "--count", "2", "--out", str(exp)]) == 0
    assert len(list((exp / "scenarios").glob("*.json"))) == 4
    res = tmp_path / "res"
    assert main(["run", "--scenarios", str(exp / "scenarios"), "--policies", "fcfs,dstat",
                 "--out", str(res)]) == 0
    lines = (res / "results.jsonl").read_text().splitlines()
    assert len(lines) == 8
    assert (res / "failures.jsonl").read_text() == ""
    rep = tmp_path / "rep"
    assert main(["report", str(res / "results.jsonl"), "--reference", "dstat", "--out",
                 str(rep), "--per-scenario"]) == 0
    out = capsys.readouterr().out
    assert "dstat vs fcfs" in out
    assert (rep / "scenarios.csv").exists()


def test_cli_requires_inputs(capsys):
    assert main(["calibrate"]) == 2
