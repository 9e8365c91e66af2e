import pytest

from frsplan.liederiv import lie_f, lie_g, lie_g_components
from frsplan.polyalg import Polynomial, SpaceMismatchError, VariableSpace
from frsplan.vehicle import SPACE, dubins_poly, error_envelope_default


def var(n):
    return Polynomial.variable(SPACE, n)


F = dubins_poly()
G = list(error_envelope_default())


def test_lie_f_examples():
    t, x, th, k1, k2 = var("t"), var("x"), var("th"), var("k1"), var("k2")
    assert lie_f(t, F) == Polynomial.constant(SPACE, 1.0)
    assert lie_f(x, F) == k2 * (1 - 0.5 * th ** 2)
    assert lie_f(th ** 2, F) == 2 * th * k1


def test_lie_f_time_rate_scales_time_term():
    t = var("t")
    assert lie_f(t ** 2, F, time_rate=0.5) == t


def test_lie_g_examples():
    t, x, th = var("t"), var("x"), var("th")
    assert lie_g(t, G).is_zero()
    assert lie_g(th, G) == (t - 1) ** 4
    assert lie_g(x, G) == (t - 1) ** 2 * (1 - 0.5 * th ** 2)


def test_components_sum_to_lie_g():
    x, y, th = var("x"), var("y"), var("th")
    v = x * y + th ** 3 - 2 * x
    comps = lie_g_components(v, G)
    assert comps[0] + comps[1] + comps[2] == lie_g(v, G)


def test_linearity():
    x, th = var("x"), var("th")
    a, b = x ** 2 * th, 3 * th - x
    assert lie_f(a + 2 * b, F).allclose(lie_f(a, F) + 2 * lie_f(b, F))


def test_mismatched_inputs_raise():
    with pytest.raises(ValueError):
        lie_f(var("x"), F[:2])
    other = VariableSpace(("t", "x", "y", "th"))
    with pytest.raises(SpaceMismatchError):
        lie_g(Polynomial.variable(other, "x"), G)
