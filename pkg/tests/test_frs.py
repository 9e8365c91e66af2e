import json

import numpy as np
import pytest

from frsplan.frs import (
    FRSCertificate,
    FRSConfig,
    build_program,
    compute_frs,
    dubins_system,
    sample_feasibility,
    sanity_system,
    validate_certificate,
)
from frsplan.polyalg import Box, box_moments, monomials
from frsplan.soscompile import DegreeError
from frsplan.vehicle import DEFAULT_MODEL, DisturbanceSignal, simulate_disturbed


@pytest.fixture(scope="module")
def sanity_cert():
    return compute_frs(FRSConfig(system="sanity1d", degree=4))


def test_dubins_degree_audit():
    fp = build_program(dubins_system(), degree=4)
    assert fp.relaxation_degree == 8
    with pytest.raises(DegreeError):
        build_program(dubins_system(), degree=4, relaxation_degree=6)


def test_constraint_count():
    scalar = build_program(dubins_system(), degree=2, channels="scalar")
    assert len(scalar.compiled.layouts) == 7
    comp = build_program(dubins_system(), degree=2, channels="componentwise")
    assert len(comp.compiled.layouts) == 13


def test_objective_is_box_moments_of_w():
    fp = build_program(sanity_system(), degree=4)
    sp = fp.system.space
    basis = monomials(sp, 4, ("x", "k"))
    mom = box_moments(sp, Box(("x", "k"), (-1.0, -1.0), (1.0, 1.0)), 4).vector(basis)
    w = fp.compiled.decisions["w"]
    c = np.zeros(fp.compiled.problem.c.size)
    for alpha, col in zip(w.basis, w.columns):
        c[col] = mom[basis.index(alpha)]
    np.testing.assert_allclose(fp.compiled.problem.c, c, atol=1e-14)


def test_sanity_model_contains_interval_reach_set(sanity_cert):
    assert sanity_cert.diagnostics["status"] == "optimal"
    rng = np.random.default_rng(0)
    k = rng.uniform(-0.5, 0.5, 2000)
    x0 = rng.uniform(-0.1, 0.1, 2000)
    # the reachable set from x0 with parameter k is |x - x0 - k t| <= 0.1 t for t in [0, 1]
    t = rng.uniform(0, 1, 2000)
    x = x0 + k * t + rng.uniform(-0.1, 0.1, 2000) * t
    w = sanity_cert.w_eval(x[:, None], k[:, None])
    assert w.min() >= 1 - 1e-6 - sanity_cert.margin


def test_sanity_validation_passes(sanity_cert):
    rep = validate_certificate(sanity_cert, 200, 0)
    assert rep.passed


def test_sanity_constraints_hold_on_samples(sanity_cert):
    assert min(sample_feasibility(sanity_cert, 5000).values()) >= -1e-6


def test_certificate_json_round_trip(sanity_cert, tmp_path):
    path = tmp_path / "cert.json"
    sanity_cert.save(path)
    again = FRSCertificate.load(path)
    pts = np.linspace(-1, 1, 7)[:, None]
    ks = np.full((7, 1), 0.2)
    np.testing.assert_allclose(again.w_eval(pts, ks), sanity_cert.w_eval(pts, ks), rtol=0, atol=0)
    data = json.loads(path.read_text())
    assert data["tool_version"] and data["config_hash"]


# -- the stored degree-4 Dubins certificate ---------------------------------

def test_dubins_certificate_covers_initial_set(dubins_cert):
    rng = np.random.default_rng(1)
    x0 = DEFAULT_MODEL.x0.sample(rng, 1000)
    k = DEFAULT_MODEL.k_box.sample(rng, 1000)
    assert dubins_cert.w_eval(x0, k).min() >= 1 - 1e-6


def test_dubins_straight_line_endpoint(dubins_cert):
    x0 = np.array([-0.75, 0.0, 0.0])
    _, traj = simulate_disturbed(x0, [0.0, 0.5], np.zeros(3))
    assert dubins_cert.w_eval(traj[-1][None], np.array([[0.0, 0.5]]))[0] >= 1 - 1e-4


def test_dubins_worst_case_disturbance(dubins_cert):
    x0 = np.array([-0.75, 0.0, 0.0])
    for k in ([0.0, 1.0], [0.5, 1.0], [-0.5, 0.3]):
        _, traj = simulate_disturbed(x0, k, DisturbanceSignal.constant(np.ones(3)))
        w = dubins_cert.w_eval(traj, np.tile(k, (traj.shape[0], 1)))
        assert w.min() >= 1 - 1e-4


def test_dubins_certificate_feasibility_samples(dubins_cert):
    rep = sample_feasibility(dubins_cert, 2000)
    assert min(rep.values()) >= -1e-6


def test_w_restricted_to_obstacle_coordinates():
    sys_ = dubins_system()
    th = sys_.space.names.index("th")
    full = build_program(sys_, degree=2).compiled.decisions["w"]
    planar = build_program(sys_, degree=2, w_states=sys_.obstacle_vars).compiled.decisions["w"]
    assert any(alpha[th] for alpha in full.basis)
    assert not any(alpha[th] for alpha in planar.basis)
    assert len(planar.basis) < len(full.basis)
    with pytest.raises(ValueError):
        build_program(sys_, degree=2, w_states=("z",))


def test_w_domain_is_validated_and_hashed():
    with pytest.raises(ValueError):
        FRSConfig(w_domain="heading")
    assert FRSConfig().to_dict()["w_domain"] == "obstacle"
    assert FRSConfig().to_dict() != FRSConfig(w_domain="full").to_dict()


def test_stored_certificate_w_ignores_heading(dubins_cert):
    th = dubins_cert.space.names.index("th")
    assert not any(alpha[th] for alpha in dubins_cert.w.terms)
