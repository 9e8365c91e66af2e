import json

import numpy as np
import pytest

from frsplan.planner import (
    CostSpec,
    TimingConfig,
    braking_plan,
    check_timing,
    cost_value,
    endpoint,
    local_goal,
    optimize,
)
from frsplan.polyalg import Polynomial
from frsplan.safeset import H_SPACE, LocalObstacleSet, SafeSetPoly, intersect, x0_center
from frsplan.vehicle import DEFAULT_MODEL, rk4, dubins_rhs, simulate_closed_loop

K_BOX = DEFAULT_MODEL.k_box


def const_h(value):
    return SafeSetPoly(Polynomial.constant(H_SPACE, value), K_BOX)


def test_check_timing_tight_values():
    rep = check_timing(0.5, 0.5)
    assert (rep.T, rep.T_sense, rep.D_sense) == (1.0, 1.5, 1.5)
    assert rep.ok
    assert check_timing(TimingConfig()).ok


def test_check_timing_reports_violation():
    rep = check_timing(0.5, 0.5, T=0.9)
    assert not rep.ok and "T = 0.9" in rep.violations[0]
    assert not check_timing(TimingConfig(T_sense=1.2)).ok
    with pytest.raises(ValueError):
        check_timing(-0.5, 0.5)


def test_endpoint_matches_integration():
    for k in ([0.0, 0.7], [0.4, 0.9], [-0.3, 0.2], [1e-6, 1.0]):
        _, traj = rk4(dubins_rhs, np.zeros(3), 1.0, 0.001, args=(np.array(k),))
        np.testing.assert_allclose(endpoint(k), traj[-1, :2], atol=1e-9)


def test_local_goal_is_projected_to_reach():
    np.testing.assert_allclose(local_goal((10.0, 0.0), (0, 0, 0), 0.5), [0.5, 0.0])
    np.testing.assert_allclose(local_goal((0.2, 0.1), (0, 0, 0), 0.5), [0.2, 0.1])
    np.testing.assert_allclose(local_goal((1.0, 2.0), (1.0, 0.0, np.pi / 2), 5.0), [2.0, 0.0], atol=1e-12)


def test_cost_weights_must_be_nonnegative():
    with pytest.raises(ValueError):
        CostSpec((1.0, 0.0), 0.5, w_goal=-1.0)
    c = CostSpec((0.5, 0.0), 0.5)
    assert cost_value(np.array([0.0, 0.5]), [0.5, 0.0], c) == pytest.approx(0.0)


def test_unconstrained_optimum_goal_ahead():
    res = optimize(const_h(1.0), (0, 0, 0), CostSpec((10.0, 0.0), 0.5))
    assert not res.braking
    assert res.k[0] == pytest.approx(0.0, abs=0.05)
    assert res.k[1] == pytest.approx(0.5, abs=0.05)


def test_optimum_respects_constraint():
    # only k1 >= 0.1 is certified (h is written in unit coordinates, k1 = 0.5 z1)
    z1 = Polynomial.variable(H_SPACE, "k1")
    h = SafeSetPoly(z1 - 0.2, K_BOX)
    res = optimize(h, (0, 0, 0), CostSpec((10.0, 0.0), 0.5))
    assert res.h_value >= 0 and res.k[0] >= 0.1
    assert res.k[0] == pytest.approx(0.1, abs=0.02)


def test_no_safe_parameter_brakes():
    res = optimize(const_h(-1.0), (0, 0, 0), CostSpec((1.0, 0.0), 0.5), k_prev=(0.3, 0.6))
    assert res.braking and res.k == (0.3, 0.0)
    assert res.reason == "no-safe-parameter"


def test_budget_overrun_brakes():
    ticks = iter(np.arange(0.0, 100.0, 1.0))
    res = optimize(const_h(1.0), (0, 0, 0), CostSpec((1.0, 0.0), 0.5), budget=0.5, clock=lambda: next(ticks))
    assert res.braking and res.budget_exceeded


def test_braking_plan_stops_within_tau_stop():
    k = braking_plan((0.4, 1.0))
    assert k == (0.4, 0.0)
    _, traj = simulate_closed_loop([0, 0, 0, 0.4, 1.0], k, horizon=0.5)
    assert traj[-1, 4] <= 0.01


def test_plan_result_json_is_serializable():
    res = optimize(const_h(1.0), (0, 0, 0), CostSpec((1.0, 0.0), 0.5))
    data = json.loads(res.dumps(timing=False))
    assert "optimize_ms" not in data and data["braking"] is False


def test_optimize_with_real_safe_set(dubins_cert):
    obs = LocalObstacleSet(np.array([[0.5, 0.0], [0.5, 0.05], [0.5, -0.05]]), x0_center(dubins_cert))
    h = intersect(dubins_cert, obs)
    res = optimize(h, (0, 0, 0), CostSpec((3.0, 0.0), 0.75))
    if not res.braking:
        assert h(res.k) >= 0
        assert K_BOX.contains(np.array(res.k)[None])[0]
