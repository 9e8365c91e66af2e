"""Linear operators acting on polynomial test functions v(t, x_s, k).

``lie_f`` is the total time derivative along the nominal field and ``lie_g``
the directional derivative along the error envelope.
"""

from __future__ import annotations

from typing import Sequence

from .polyalg import Polynomial, SpaceMismatchError

STATE_VARS = ("x", "y", "th")


def _check(v: Polynomial, field: Sequence[Polynomial], state_vars: Sequence[str]):
    if len(field) != len(state_vars):
        raise ValueError(f"field has {len(field)} components, expected {len(state_vars)}")
    for comp in field:
        if comp.space != v.space:
            raise SpaceMismatchError("field and test function use different variable spaces")


def lie_f(
    v: Polynomial,
    f_s: Sequence[Polynomial],
    time_var: str | None = "t",
    state_vars: Sequence[str] = STATE_VARS,
    time_rate: float = 1.0,
) -> Polynomial:
    """``dv/dt + sum_i dv/dx_i * f_i``.

    ``time_rate`` multiplies the time derivative; it is ``d(time_var)/dt`` and
    equals 1 unless the time coordinate has been rescaled.
    """
    _check(v, f_s, state_vars)
    out = Polynomial.zero(v.space)
    if time_var is not None:
        out = v.partial(time_var).scale(time_rate)
    for name, comp in zip(state_vars, f_s):
        dv = v.partial(name)
        if not dv.is_zero():
            out = out + dv * comp
    return out


def lie_g(v: Polynomial, g: Sequence[Polynomial], state_vars: Sequence[str] = STATE_VARS) -> Polynomial:
    """``sum_i dv/dx_i * g_i``; no time derivative."""
    _check(v, g, state_vars)
    out = Polynomial.zero(v.space)
    for name, comp in zip(state_vars, g):
        dv = v.partial(name)
        if not dv.is_zero():
            out = out + dv * comp
    return out


def lie_g_components(
    v: Polynomial, g: Sequence[Polynomial], state_vars: Sequence[str] = STATE_VARS
) -> list[Polynomial]:
    """Per-coordinate terms ``dv/dx_i * g_i`` whose sum is :func:`lie_g`."""
    _check(v, g, state_vars)
    return [v.partial(name) * comp for name, comp in zip(state_vars, g)]
