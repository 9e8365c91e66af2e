import numpy as np
import pytest

from frsplan.polyalg import (
    AffineMap,
    Box,
    Polynomial,
    SpaceMismatchError,
    VariableSpace,
    affine_substitute,
    box_moments,
    count_monomials,
    monomials,
    partial_derivative,
    scale,
)

XY = VariableSpace(("x", "y"))


@pytest.fixture
def xy():
    return Polynomial.variable(XY, "x"), Polynomial.variable(XY, "y")


def test_eval_examples(xy):
    x, y = xy
    assert (x ** 2).eval([3.0, 0.0]) == 9.0
    assert Polynomial.constant(XY, 1.0).eval([5.0, -2.0]) == 1.0
    assert (2 * x * y + y ** 3).eval([1.0, 2.0]) == 12.0


def test_eval_many_matches_eval(xy):
    x, y = xy
    p = 3 * x ** 3 * y - 0.5 * y ** 2 + x - 7
    pts = np.random.default_rng(0).uniform(-2, 2, (50, 2))
    np.testing.assert_allclose(p.eval_many(pts), [p.eval(q) for q in pts], rtol=1e-13)


def test_arithmetic_examples(xy):
    x, y = xy
    assert partial_derivative(x ** 2 * y, "x") == 2 * x * y
    assert (x + 1) * (x - 1) == x ** 2 - 1
    z = scale(x ** 2, 0.0)
    assert z.is_zero() and len(z.terms) == 0


def test_space_mismatch_raises(xy):
    other = Polynomial.variable(VariableSpace(("x", "z")), "x")
    with pytest.raises(SpaceMismatchError):
        _ = xy[0] + other


def test_monomial_counts():
    assert count_monomials(2, 4) == 15
    assert len(monomials(XY, 2)) == 6
    assert len(monomials(VariableSpace(tuple("abcdef")), 3)) == 84


def test_box_moments_examples():
    s1 = VariableSpace(("x",))
    m = box_moments(s1, Box(("x",), (-1.0,), (1.0,)), 2)
    assert m[(2,)] == pytest.approx(2.0 / 3.0)
    assert m[(1,)] == pytest.approx(0.0)
    m2 = box_moments(XY, Box(("x", "y"), (0.0, 0.0), (2.0, 1.0)), 2)
    assert m2[(1, 1)] == pytest.approx(1.0)


def test_box_moments_match_monte_carlo():
    box = Box(("x", "y"), (-0.5, 0.0), (1.0, 2.0))
    m = box_moments(XY, box, 4)
    pts = box.sample(np.random.default_rng(3), 400000)
    p = Polynomial.monomial(XY, (3, 1))
    assert m[(3, 1)] == pytest.approx(box.volume * p.eval_many(pts).mean(), rel=2e-2)


def test_affine_substitute_examples(xy):
    x, _ = xy
    z = affine_substitute(x, {"x": AffineMap(2.0, 1.0)})
    assert z == 2 * x + 1
    assert affine_substitute(x ** 2, {"x": AffineMap(1.0, 0.0)}) == x ** 2


def test_affine_round_trip_random():
    rng = np.random.default_rng(11)
    basis = monomials(XY, 6)
    for _ in range(5):
        p = Polynomial.from_coefficients(XY, basis, rng.standard_normal(len(basis)))
        maps = {"x": AffineMap(rng.uniform(0.2, 3), rng.uniform(-1, 1)),
                "y": AffineMap(rng.uniform(0.2, 3), rng.uniform(-1, 1))}
        back = affine_substitute(affine_substitute(p, maps), {k: m.inverted() for k, m in maps.items()})
        np.testing.assert_allclose(back.coefficient_vector(basis), p.coefficient_vector(basis), atol=1e-12)


def test_json_round_trip(xy):
    x, y = xy
    p = 1.5 * x ** 2 * y - y + 0.25
    assert Polynomial.from_json(p.to_json(), XY) == p
