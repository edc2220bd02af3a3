import json

import numpy as np
import pytest

from stackbelief.harness import (
    ExperimentConfig,
    non_true_wins,
    parse_scheme,
    pct_higher_cost,
    posterior_csv,
    run_experiment,
    table_csv,
    tau_sweep,
    win_matrix,
    write_experiment_outputs,
    write_svg,
    write_sweep_outputs,
)
from stackbelief.lin_dyn import LtiGameDynamics, Trajectory
from stackbelief.lq_game import CostBreakdown, QuadCostModel, StackelbergGame
from stackbelief.protocol import BeliefSchedule, RunRecord, run_fixed
from stackbelief.scenario import ScenarioParams
from stackbelief.strategy import InfoStructure
from stackbelief.worked import example1

SMALL = ScenarioParams(T=6, tau_values=(1, 3, 6), n_runs=6)


def fake(run_id, intention, scheme, total, tau=1):
    game = StackelbergGame(LtiGameDynamics(1.0, 1.0, 1.0), QuadCostModel(1.0, 1.0), QuadCostModel(1.0, 1.0, intention), 1)
    traj = Trajectory(np.zeros((2, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    meta = {"run_id": run_id, "true_intention": intention, "scheme": scheme, "tau": tau}
    schedule = BeliefSchedule(((0, game.follower_true_cost),))
    return RunRecord(game, traj, CostBreakdown(total, 0.0, 1), schedule, InfoStructure.OPEN_LOOP, meta=meta)


def test_parse_scheme():
    assert parse_scheme("T") == "fixed-T" and parse_scheme("fixed-a") == "fixed-A"
    assert parse_scheme("Ad") == "adaptive" and parse_scheme("adaptive") == "adaptive"
    with pytest.raises(ValueError):
        parse_scheme("X")


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(scenario=SMALL, schemes=())
    with pytest.raises(ValueError):
        ExperimentConfig(scenario=SMALL, tau=7)
    with pytest.raises(ValueError):
        ExperimentConfig(scenario=SMALL, tau_values=(0, 1))
    with pytest.raises(ValueError):
        ExperimentConfig(scenario=SMALL, true_intention="Q")
    with pytest.raises(ValueError):
        ExperimentConfig(scenario=SMALL, schemes=("T", "fixed-T"))
    assert ExperimentConfig(scenario=SMALL).n_runs == 6


def test_win_matrix_two_scheme_example():
    table = win_matrix([fake(0, "T", "fixed-T", 10.0), fake(0, "T", "fixed-I", 12.0)])
    np.testing.assert_array_equal(table.values, [[100.0, 0.0]])
    higher = pct_higher_cost([fake(0, "T", "fixed-T", 10.0), fake(0, "T", "fixed-I", 12.0)])
    np.testing.assert_allclose(higher.values, [[0.0, 20.0]])


def test_exact_tie_credits_true_belief():
    table = win_matrix([fake(0, "A", "fixed-T", 5.0), fake(0, "A", "fixed-A", 5.0)])
    assert table.row("A") == {"fixed-T": 0.0, "fixed-A": 100.0}
    higher = pct_higher_cost([fake(0, "A", "fixed-T", 5.0), fake(0, "A", "fixed-A", 5.0)])
    np.testing.assert_array_equal(higher.values, [[0.0, 0.0]])


def test_zero_minimum_excluded_and_errors():
    higher = pct_higher_cost([fake(0, "T", "fixed-T", 0.0), fake(1, "T", "fixed-T", 1.0)])
    assert higher.excluded == 1 and higher.counts[0, 0] == 1
    with pytest.raises(ValueError):
        win_matrix([])
    with pytest.raises(ValueError):
        win_matrix([fake(0, "T", "fixed-T", 1.0), fake(0, "T", "fixed-I", 2.0), fake(1, "T", "fixed-T", 1.0)])
    with pytest.raises(ValueError):
        win_matrix([fake(0, "T", "fixed-T", 1.0, tau=1), fake(0, "T", "fixed-T", 1.0, tau=2)])


def test_example1_as_one_run_experiment():
    ex = example1()
    recs = []
    for b in (ex.true_belief, ex.alt_belief):
        meta = {"run_id": 0, "true_intention": "b*", "scheme": f"fixed-{b.label}", "tau": 3}
        recs.append(run_fixed(ex.game, b, 3, "open-loop", [ex.x0], meta=meta))
    assert win_matrix(recs).row("b*") == {"fixed-b*": 0.0, "fixed-b'": 100.0}
    assert pct_higher_cost(recs).cell("b*", "fixed-b*") == pytest.approx((1493.9 - 1390.6) / 1390.6 * 100, abs=0.05)


def test_single_scheme_single_run():
    cfg = ExperimentConfig(scenario=SMALL, schemes=("T",), true_intention="T", n_runs=1)
    result = run_experiment(cfg)
    assert len(result) == 1 and not result.excluded
    assert win_matrix(result.records).values.tolist() == [[100.0]]


@pytest.mark.parametrize("info", ["open-loop", "feedback"])
def test_experiment_invariants(info):
    result = run_experiment(ExperimentConfig(scenario=SMALL, info_structure=info))
    assert len(result.records) == 6 * 3 * 4 and result.n_groups == 18
    table = win_matrix(result.records)
    np.testing.assert_allclose(table.values.sum(axis=1), 100.0, atol=0.5)
    higher = pct_higher_cost(result.records)
    assert np.all(higher.values >= 0)
    # schemes within a run share the sample
    by_group = {}
    for r in result.records:
        key = (r.meta["run_id"], r.meta["true_intention"])
        by_group.setdefault(key, set()).add(r.trajectory.states[0].tobytes())
    assert all(len(v) == 1 for v in by_group.values())


def test_determinism_and_parallel_equivalence():
    cfg = ExperimentConfig(scenario=SMALL, master_seed=5)
    a = run_experiment(cfg)
    b = run_experiment(ExperimentConfig(scenario=SMALL, master_seed=5, jobs=2))
    assert table_csv(win_matrix(a.records), "percent") == table_csv(win_matrix(b.records), "percent")
    assert [r.total for r in a.records] == [r.total for r in b.records]
    c = run_experiment(ExperimentConfig(scenario=SMALL, master_seed=6))
    assert [r.total for r in a.records] != [r.total for r in c.records]


def test_feedback_sweep_fixed_columns_constant():
    cfg = ExperimentConfig(scenario=SMALL, info_structure="feedback", schemes=("T", "I", "A"), n_runs=10)
    sweep = tau_sweep(cfg)
    first = sweep.tables[1].values
    for table in sweep.tables.values():
        np.testing.assert_array_equal(table.values, first)


def test_open_loop_tau_equal_horizon_is_no_update():
    cfg = ExperimentConfig(scenario=SMALL, schemes=("T", "I", "A"), tau=6)
    result = run_experiment(cfg)
    assert all(r.schedule.starts == (0,) for r in result.records)
    assert non_true_wins(win_matrix(result.records), "T") >= 0


def test_outputs(tmp_path):
    cfg = ExperimentConfig(scenario=SMALL, n_runs=2)
    result = run_experiment(cfg)
    wins, higher = win_matrix(result.records), pct_higher_cost(result.records)
    files = write_experiment_outputs(tmp_path, result, wins, higher, posterior=True)
    names = sorted(p.name for p in files)
    assert names == ["pct_higher.csv", "posterior_trace.csv", "runs.jsonl", "stats.json", "win_matrix.csv"]
    lines = (tmp_path / "win_matrix.csv").read_text().splitlines()
    assert lines[0] == "true_intention,scheme,percent,n" and len(lines) == 1 + 12
    assert all(len(line.split(",")[2].split(".")[1]) == 1 for line in lines[1:])
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["win_matrix"]["rows"] == ["T", "I", "A"]
    runs = (tmp_path / "runs.jsonl").read_text().splitlines()
    assert len(runs) == len(result.records) and "total" in json.loads(runs[0])
    assert posterior_csv(result.records).startswith("run_id,true_intention,tau,t,P(T),P(I),P(A)")
    sweep = tau_sweep(ExperimentConfig(scenario=SMALL, n_runs=2, schemes=("T", "I")))
    write_sweep_outputs(tmp_path, sweep)
    rows = (tmp_path / "tau_sweep.csv").read_text().splitlines()
    assert rows[0] == "tau,true_intention,scheme,percent,n" and len(rows) == 1 + 3 * 3 * 2


def test_svg_is_deterministic(tmp_path):
    table = win_matrix([fake(0, "T", "fixed-T", 10.0), fake(0, "T", "fixed-I", 12.0)])
    a = write_svg(tmp_path / "a.svg", table, "t").read_bytes()
    b = write_svg(tmp_path / "b.svg", table, "t").read_bytes()
    assert a == b and a.startswith(b"<?xml")


def test_failed_scheme_excludes_whole_group(monkeypatch):
    from stackbelief import harness

    real = harness.run_fixed

    def flaky(game, belief, tau, info, x0, seed=0, meta=None):
        if meta["run_id"] == 1 and meta["scheme"] == "fixed-I":
            raise np.linalg.LinAlgError("boom")
        return real(game, belief, tau, info, x0, seed=seed, meta=meta)

    monkeypatch.setattr(harness, "run_fixed", flaky)
    result = run_experiment(ExperimentConfig(scenario=SMALL, n_runs=3, true_intention="T"))
    assert len(result.excluded) == 1 and result.excluded[0].run_id == 1
    assert {r.meta["run_id"] for r in result.records} == {0, 2}
    assert win_matrix(result.records).counts[0, 0] == 2
