import numpy as np
import pytest

from frsplan.planner import TimingConfig
from frsplan.safeset import R_CIRC, Obstacle
from frsplan.simworld import (
    OUTCOMES,
    BatchReport,
    Scenario,
    ScenarioParams,
    TrialResult,
    audit_collision,
    generate_scenario,
    run_trial,
    trial_plan,
)


def test_audit_examples():
    times = [0.0, 0.5, 1.0]
    path = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]
    assert audit_collision(times, path, [Obstacle((0.5, 0.2))]) is None
    ev = audit_collision(times, path, [Obstacle((0.5, 0.0))])
    assert ev.t == 0.5 and ev.obstacle == 0 and ev.distance == 0.0
    edge = audit_collision(times, path, [Obstacle((1.0, R_CIRC))])
    assert edge is not None and edge.t == 1.0


def test_scenario_invariants():
    for seed in range(30):
        count = 1 + seed % 10
        sc = generate_scenario(seed, count)
        assert sc.n_obstacles == count
        r = np.hypot(*sc.goal)
        assert 1.5 <= r <= 3.0
        assert abs(np.arctan2(sc.goal[1], sc.goal[0])) <= np.radians(60) + 1e-12
        assert 0.25 <= sc.v_des <= 0.75
        for i, o in enumerate(sc.obstacles):
            assert 0.1 <= o.length <= 0.2
            for p in sc.obstacles[i + 1:]:
                assert p.distance(o.sample(0.005)).min() >= 0.15 - 1e-9


def test_scenario_is_seed_deterministic():
    a, b = generate_scenario(7, 5), generate_scenario(7, 5)
    assert a.to_json() == b.to_json()
    assert generate_scenario(8, 5).to_json() != a.to_json()
    with pytest.raises(ValueError):
        generate_scenario(1, 0)


def test_trial_plan_shares_counts():
    plan = trial_plan(100)
    counts = [c for _, c in plan]
    assert [counts.count(c) for c in range(1, 11)] == [10] * 10
    assert [s for s, _ in plan] == list(range(100))


def test_batch_report_statistics():
    trials = []
    for i, c in enumerate([1, 1, 2, 2, 3, 3]):
        tr = TrialResult(i, c, OUTCOMES[i % 3], np.zeros((1, 9)))
        trials.append(tr)
    rep = BatchReport(trials, list(range(6)))
    pct = rep.outcome_percentages()
    assert sum(pct.values()) == pytest.approx(100.0)
    assert rep.passed and rep.crashes == 0


# -- closed loop with the stored certificate --------------------------------

def test_free_run_tracks_desired_speed(dubins_cert):
    sc = Scenario(0, [], (20.0, 0.0), 0.5, 0.5, iteration_limit=6)
    res = run_trial(sc, dubins_cert)
    assert res.outcome == "iteration-limit"
    assert not any(c.braking for c in res.cycles)
    late = res.trace[res.trace[:, 0] > 1.0]
    np.testing.assert_allclose(late[:, 5], 0.5, atol=0.05)
    assert np.abs(late[:, 3]).max() < 0.05


def test_wall_ahead_forces_braking(dubins_cert):
    wall = [Obstacle((0.6, y), (0.6, y + 0.15)) for y in np.arange(-0.9, 0.9, 0.15)]
    sc = Scenario(0, wall, (2.0, 0.0), 0.5, 0.5, iteration_limit=20)
    res = run_trial(sc, dubins_cert)
    assert res.outcome == "braked-safely"
    assert res.collision is None


def test_trial_is_bitwise_reproducible(dubins_cert):
    sc = generate_scenario(7, 3)
    a = run_trial(sc, dubins_cert)
    b = run_trial(generate_scenario(7, 3), dubins_cert)
    assert a.trace_csv() == b.trace_csv()
    assert a.to_json() == b.to_json()
    assert a.outcome in OUTCOMES
