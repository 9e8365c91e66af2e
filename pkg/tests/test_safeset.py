import math

import numpy as np
import pytest

from frsplan.polyalg import Box
from frsplan.safeset import (
    H_DEGREE,
    R_CIRC,
    LocalObstacleSet,
    Obstacle,
    SafeSetPoly,
    intersect,
    load_obstacles,
    localize,
    localize_for,
    safe_margin,
    save_obstacles,
    to_local,
    x0_center,
)
from frsplan.sdpsolve import SdpOptions
from frsplan.vehicle import DEFAULT_MODEL, DisturbanceSignal, simulate_disturbed


# -- geometry (no certificate needed) ----------------------------------------

def test_to_local_examples():
    np.testing.assert_allclose(to_local([[1.0, 0.0]], (0, 0, 0)), [[1.0, 0.0]])
    np.testing.assert_allclose(to_local([[0.0, 1.0]], (0, 0, math.pi / 2)), [[1.0, 0.0]], atol=1e-15)
    np.testing.assert_allclose(to_local([[2.0, 3.0]], (1.0, 3.0, 0.0)), [[1.0, 0.0]])
    with pytest.raises(ValueError):
        to_local([[0.0, 0.0]], (0, float("nan"), 0))


def test_segment_sampling_density():
    seg = Obstacle((0.0, 0.0), (0.2, 0.0))
    pts = seg.sample()
    assert len(pts) >= 5
    assert np.max(np.diff(pts[:, 0])) <= 0.05 + 1e-12
    np.testing.assert_allclose(pts[[0, -1]], [[0, 0], [0.2, 0]])


def test_segment_distance_and_length_check():
    seg = Obstacle((0.0, -0.1), (0.0, 0.1))
    np.testing.assert_allclose(seg.distance([[0.3, 0.0], [0.0, 0.5]]), [0.3, 0.4])
    seg.check_length()
    with pytest.raises(ValueError):
        Obstacle((0, 0), (0.5, 0)).check_length()
    assert Obstacle((1.0, 2.0)).is_point


def test_localize_filters_by_sense_radius():
    near = Obstacle((1.0, 0.0))
    far = Obstacle((1.6, 0.0))
    loc = localize([near, far], (0, 0, 0), sense_radius=1.5)
    assert len(loc) == 1 and loc.n_discarded == 1


def test_localize_applies_frame_offset_for_box_filter():
    xs = DEFAULT_MODEL.xs
    loc = localize([Obstacle((0.3, 0.0)), Obstacle((1.9, 0.0))], (0, 0, 0), xs, (-0.75, 0.0))
    np.testing.assert_allclose(loc.points, [[0.3, 0.0]])
    np.testing.assert_allclose(loc.frs_points, [[-0.45, 0.0]])


def test_obstacle_file_round_trip(tmp_path):
    obs = [Obstacle((0.0, 0.0), (0.1, 0.1)), Obstacle((1.0, 1.0))]
    path = tmp_path / "obs.json"
    save_obstacles(obs, path)
    assert load_obstacles(path) == obs


def test_braking_only_rejects_everything():
    h = SafeSetPoly.braking_only(DEFAULT_MODEL.k_box)
    _, _, vals = h.grid(10)
    assert np.all(vals < 0) and h.fallback


# -- with the stored Dubins certificate ----------------------------------------

def local_points(cert, pts):
    return LocalObstacleSet(np.asarray(pts, dtype=float), x0_center(cert))


@pytest.fixture(scope="module")
def empty_h(dubins_cert):
    return intersect(dubins_cert, local_points(dubins_cert, np.zeros((0, 2))))


@pytest.fixture(scope="module")
def ahead_h(dubins_cert):
    return intersect(dubins_cert, local_points(dubins_cert, [[0.3, 0.0]]))


def test_empty_obstacles_keep_almost_all_of_k(empty_h):
    assert not empty_h.fallback
    _, _, vals = empty_h.grid(50)
    assert (vals >= 0).mean() >= 0.99
    assert empty_h.h.degree <= H_DEGREE


def test_point_ahead_is_reachable_even_at_rest(dubins_cert, ahead_h):
    # Oracle: with k = (0, 0) the speed disturbance alone pushes the front edge
    # of X_0 past a point 0.3 m ahead of the centre, so every parameter that
    # the disturbed model can drive onto it must be rejected.
    c = x0_center(dubins_cert)
    _, traj = simulate_disturbed([c[0] + 0.14, c[1], 0.0], (0.0, 0.0), DisturbanceSignal.constant([1.0, 0.0, 0.0]))
    assert traj[-1, 0] >= c[0] + 0.3
    assert safe_margin(ahead_h, (0.0, 0.0)) < 0
    assert safe_margin(ahead_h, (0.0, 1.0)) < 0


@pytest.mark.parametrize("dist", [0.8, 1.0])
def test_farther_point_ahead_keeps_rest_and_excludes_full_speed(dubins_cert, dist):
    h = intersect(dubins_cert, local_points(dubins_cert, [[dist, 0.0]]))
    assert safe_margin(h, (0.0, 0.0)) >= 0
    assert safe_margin(h, (0.0, 1.0)) < 0


def test_union_of_single_exclusions_is_excluded(dubins_cert):
    pts = [[0.4, 0.2], [0.5, -0.25], [0.7, 0.0]]
    joint = intersect(dubins_cert, local_points(dubins_cert, pts))
    _, _, vj = joint.grid(30)
    for p in pts:
        _, _, vi = intersect(dubins_cert, local_points(dubins_cert, [p])).grid(30)
        assert not np.any((vi < 0) & (vj >= 0))


def test_more_obstacles_never_enlarge_safe_set(dubins_cert, ahead_h):
    more = intersect(dubins_cert, local_points(dubins_cert, [[0.3, 0.0], [0.5, 0.3]]))
    _, _, v1 = ahead_h.grid(30)
    _, _, v2 = more.grid(30)
    assert not np.any((v2 >= 0) & (v1 < 0))


def test_intersect_is_deterministic(dubins_cert):
    a = intersect(dubins_cert, local_points(dubins_cert, [[0.3, 0.1]]))
    b = intersect(dubins_cert, local_points(dubins_cert, [[0.3, 0.1]]))
    assert a.h == b.h


def test_solver_failure_falls_back_to_braking(dubins_cert):
    h = intersect(dubins_cert, local_points(dubins_cert, [[0.3, 0.0]]), options=SdpOptions(max_iter=1))
    assert h.fallback
    assert safe_margin(h, (0.0, 0.0)) < 0


def test_json_round_trip(ahead_h):
    again = SafeSetPoly.from_json(ahead_h.to_json())
    assert again.h == ahead_h.h and again.k_box == ahead_h.k_box


def test_certified_parameters_avoid_the_point(dubins_cert):
    # every sampled trajectory of a certified parameter keeps its centre
    # farther than the audit radius from the obstacle point
    rng = np.random.default_rng(4)
    obstacle = np.array([1.0, 0.0])
    h = intersect(dubins_cert, local_points(dubins_cert, [obstacle]))
    k1, k2, vals = h.grid(12)
    safe = [(a, b) for i, a in enumerate(k1) for j, b in enumerate(k2) if vals[i, j] >= 0]
    assert safe
    for k in safe:
        for _ in range(3):
            sig = DisturbanceSignal.random(rng, 1.0)
            _, traj = simulate_disturbed(np.array([-0.75, 0.0, 0.0]), k, sig)
            centre = traj[:, :2] - np.array([-0.75, 0.0])
            assert np.min(np.linalg.norm(centre - obstacle, axis=1)) > R_CIRC
