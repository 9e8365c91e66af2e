import math

import numpy as np
import pytest

from frsplan.vehicle import (
    DEFAULT_MODEL,
    DisturbanceSignal,
    ModelConfig,
    closed_loop_rhs,
    disturbed_rhs,
    dubins_poly,
    dubins_poly_rhs,
    dubins_rhs,
    error_envelope_default,
    fig2_scenario,
    rk4,
    simulate_closed_loop,
    tracking_controller,
    unicycle_rhs,
    validate_error_bound,
    zero_envelope,
)


def test_unicycle_rhs_examples():
    np.testing.assert_allclose(unicycle_rhs(0, [0, 0, 0, 0, 1], [0, 0]), [1, 0, 0, 0, 0])
    d = unicycle_rhs(0, [0, 0, math.pi / 2, 0, 1], [0, 0])
    assert d[0] == pytest.approx(0, abs=1e-15) and d[1] == pytest.approx(1)
    np.testing.assert_allclose(unicycle_rhs(0, [0, 0, 0.3, 0.2, 0], [0, 0]), [0, 0, 0.2, 0, 0])


def test_tracking_controller_examples():
    np.testing.assert_allclose(tracking_controller([0, 0, 0, 0.3, 0.7], [0.3, 0.7]), [0, 0])
    assert tracking_controller([0, 0, 0, 0.0, 0.5], [0.5, 0.5])[0] == pytest.approx(10.0)
    assert tracking_controller([0, 0, 0, 0.0, 1.0], [0.0, 0.0])[1] == pytest.approx(-10.0)


def test_closed_loop_converges_to_command():
    _, traj = simulate_closed_loop([0, 0, 0, 0, 1], [0.5, 0.2], horizon=1.0)
    assert traj[-1, 3] == pytest.approx(0.5, abs=1e-6)
    assert traj[-1, 4] == pytest.approx(0.2, abs=1e-4)


def test_literal_sign_diverges():
    cfg = ModelConfig(literal_controller_sign=True)
    _, traj = simulate_closed_loop([0, 0, 0, 0, 0.5], [0.0, 0.4], horizon=0.5, config=cfg)
    assert abs(traj[-1, 4] - 0.4) > 1.0


def test_dubins_rhs_examples():
    np.testing.assert_allclose(dubins_rhs(0, [0, 0, 0], [0, 1]), [1, 0, 0])
    np.testing.assert_allclose(dubins_rhs(0, [1, 2, 1.3], [0.5, 0]), [0, 0, 0.5])
    np.testing.assert_allclose(dubins_rhs(0, [0, 0, math.pi], [0, 1]), [-1, 0, 0], atol=1e-15)


def test_dubins_poly_examples():
    f = dubins_poly()
    k1 = f[2].space
    assert f[2].variables_used() == ("k1",)
    np.testing.assert_allclose(dubins_poly_rhs(0, [0, 0, 0], [0.3, 0.8]), [0.8, 0, 0.3])
    x_comp = dubins_poly_rhs(0, [0, 0, 0.5], [0, 1])[0]
    assert x_comp == pytest.approx(0.875)
    assert abs(x_comp - math.cos(0.5)) < 3e-3
    with pytest.raises(ValueError):
        dubins_poly(5)


def test_error_envelope_examples():
    g = error_envelope_default()
    np.testing.assert_allclose(g.evaluate(1.0, [0, 0, 0]), [0, 0, 0])
    np.testing.assert_allclose(g.evaluate(0.0, [0, 0, 0]), [1, 0, 1])
    np.testing.assert_allclose(g.evaluate(0.5, [0, 0, 0]), [0.25, 0, 0.0625])


def test_disturbed_rhs_examples():
    s, k = np.array([0.0, 0.0, 0.0]), np.array([0.0, 1.0])
    np.testing.assert_allclose(disturbed_rhs(0.3, [0.1, 0.2, 0.4], [0.2, 0.6], np.zeros(3)),
                               dubins_poly_rhs(0.3, [0.1, 0.2, 0.4], [0.2, 0.6]))
    np.testing.assert_allclose(disturbed_rhs(0.0, s, k, np.ones(3)), [2, 0, 1])
    np.testing.assert_allclose(disturbed_rhs(0.0, s, k, -np.ones(3)), [0, 0, -1])
    with pytest.raises(ValueError):
        disturbed_rhs(0.0, s, k, 2 * np.ones(3))


def test_disturbance_signal_validation():
    sig = DisturbanceSignal([0.0, 0.5], [[1, -1, 0], [0.5, 0.5, 0.5]])
    np.testing.assert_allclose(sig(0.2), [1, -1, 0])
    np.testing.assert_allclose(sig(0.9), [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        DisturbanceSignal([0.1], [[0, 0, 0]])
    with pytest.raises(ValueError):
        DisturbanceSignal([0.0], [[1.5, 0, 0]])


def test_rk4_exact_for_linear_growth():
    times, out = rk4(lambda t, s: np.ones_like(s), np.zeros(2), 1.0, 0.1)
    assert times[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(out[-1], [1.0, 1.0])


def test_error_bound_holds_when_tracking():
    rep = validate_error_bound([0.3, 0.6], [0, 0, 0, 0.3, 0.6], horizon=0.2)
    assert np.all(rep.max_violation <= 1e-12)


def test_fig2_scenario_bound_nearly_holds():
    # The envelope vanishes at t = T while the exponentially decaying tracking
    # error does not, so the only excess is a tiny one at the end of the horizon.
    rep_a, rep_b = fig2_scenario()
    for rep in (rep_a, rep_b):
        assert rep.max_violation.max() < 1e-4
        assert not rep.left_xs
        early = rep.times < 0.95
        assert np.all(rep.errors[early] <= rep.bounds[early])


@pytest.mark.xfail(strict=True, reason="envelope is zero at t = T; residual tracking error is ~4e-5")
def test_fig2_scenario_bound_holds_exactly():
    rep_a, rep_b = fig2_scenario()
    assert rep_a.holds and rep_b.holds


def test_zero_envelope_is_violated():
    init = np.array([-0.75, 0.0, 0.0, 0.0, 1.0])
    rep = validate_error_bound([0.5, 1.0], init, envelope=zero_envelope())
    assert not rep.holds
    assert rep.max_violation.max() > 0
