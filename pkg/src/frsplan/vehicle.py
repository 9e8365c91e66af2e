"""Vehicle models: dynamic unicycle, Dubins car, tracking controller and error envelope.

State conventions
-----------------
* unicycle state: ``(x, y, th, thdot, v)``
* shared (Dubins) state: ``(x, y, th)``
* trajectory parameters: ``k = (k1, k2)`` = (commanded yaw rate, commanded speed)

All integrators are fixed-step RK4 and accept leading batch dimensions, so a
whole family of trajectories can be advanced at once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .polyalg import Box, Polynomial, VariableSpace

SPACE = VariableSpace(("t", "x", "y", "th", "k1", "k2"))


@dataclass(frozen=True)
class ModelConfig:
    """Model constants. Defaults reproduce the unicycle/Dubins example."""

    yaw_gain: float = 20.0
    speed_gain: float = 10.0
    literal_controller_sign: bool = False
    k1_range: tuple[float, float] = (-0.5, 0.5)
    k2_range: tuple[float, float] = (0.0, 1.0)
    v_max: float = 1.0
    horizon: float = 1.0
    # planning frame; sized so every disturbed trajectory from X_0 stays inside for T = 1 s
    xs_box: dict = field(default_factory=lambda: {"x": (-1.3, 0.8), "y": (-0.8, 0.8), "th": (-0.8, 0.8)})
    # covers the audit disc (radius 0.1118 m) plus half the obstacle sampling spacing
    x0_center: tuple[float, float] = (-0.75, 0.0)
    x0_half_widths: tuple[float, float] = (0.14, 0.14)
    x0_heading_halfwidth: float = 1e-3
    v_err_power: int = 2
    thdot_err_power: int = 4
    envelope_t_ref: float = 1.0
    dt: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "k1_range", tuple(self.k1_range))
        object.__setattr__(self, "k2_range", tuple(self.k2_range))
        object.__setattr__(self, "x0_center", tuple(self.x0_center))
        object.__setattr__(self, "x0_half_widths", tuple(self.x0_half_widths))
        object.__setattr__(self, "xs_box", {k: tuple(v) for k, v in dict(self.xs_box).items()})
        if self.horizon <= 0 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")

    @property
    def k_box(self) -> Box:
        return Box(("k1", "k2"), (self.k1_range[0], self.k2_range[0]), (self.k1_range[1], self.k2_range[1]))

    @property
    def xs(self) -> Box:
        return Box.from_dict({n: self.xs_box[n] for n in ("x", "y", "th")})

    @property
    def x0(self) -> Box:
        cx, cy = self.x0_center
        hx, hy = self.x0_half_widths
        e = self.x0_heading_halfwidth
        return Box(("x", "y", "th"), (cx - hx, cy - hy, -e), (cx + hx, cy + hy, e))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["xs_box"] = {k: list(v) for k, v in self.xs_box.items()}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_MODEL = ModelConfig()


# -- right-hand sides -------------------------------------------------------

def unicycle_rhs(t, s, u):
    """Dynamic unicycle: ``[v cos th, v sin th, thdot, u1, u2]``."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    th, thdot, v = s[..., 2], s[..., 3], s[..., 4]
    return np.stack([v * np.cos(th), v * np.sin(th), thdot, u[..., 0], u[..., 1]], axis=-1)


def tracking_controller(s, k, config: ModelConfig = DEFAULT_MODEL):
    """Proportional yaw-rate and speed tracking.

    Returns ``(u1, u2)`` stacked on the last axis. The stabilizing form drives
    ``thdot -> k1`` and ``v -> k2``; ``literal_controller_sign`` flips to the
    positive-feedback form for inspection.
    """
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)
    sign = 1.0 if config.literal_controller_sign else -1.0
    u1 = sign * config.yaw_gain * (s[..., 3] - k[..., 0])
    u2 = sign * config.speed_gain * (s[..., 4] - k[..., 1])
    return np.stack([u1, u2], axis=-1)


def closed_loop_rhs(config: ModelConfig = DEFAULT_MODEL) -> Callable:
    def rhs(t, s, k):
        return unicycle_rhs(t, s, tracking_controller(s, k, config))
    return rhs


def dubins_rhs(t, s, k):
    """Kinematic Dubins car ``[k2 cos th, k2 sin th, k1]``."""
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)
    th = s[..., 2]
    k1 = np.broadcast_to(k[..., 0], th.shape)
    k2 = k[..., 1]
    return np.stack([k2 * np.cos(th), k2 * np.sin(th), k1], axis=-1)


def dubins_poly(degree: int = 3, space: VariableSpace = SPACE) -> list[Polynomial]:
    """Taylor-polynomial Dubins field over ``(t, x, y, th, k1, k2)``.

    Only degree 3 is supported (cos -> 1 - th^2/2, sin -> th - th^3/6).
    """
    if degree != 3:
        raise ValueError("only the degree-3 Taylor expansion is provided")
    th = Polynomial.variable(space, "th")
    k1 = Polynomial.variable(space, "k1")
    k2 = Polynomial.variable(space, "k2")
    cos3 = 1.0 - 0.5 * th ** 2
    sin3 = th - (1.0 / 6.0) * th ** 3
    return [k2 * cos3, k2 * sin3, k1]


def dubins_poly_rhs(t, s, k):
    """Numeric evaluation of :func:`dubins_poly`."""
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)
    th = s[..., 2]
    k1 = np.broadcast_to(k[..., 0], th.shape)
    k2 = k[..., 1]
    return np.stack([k2 * (1 - th ** 2 / 2), k2 * (th - th ** 3 / 6), k1], axis=-1)


@dataclass(frozen=True)
class ErrorEnvelope:
    """Three polynomials in ``(t, x, y, th)`` bounding the per-coordinate tracking error."""

    g: tuple[Polynomial, Polynomial, Polynomial]
    name: str = "default"

    def __iter__(self):
        return iter(self.g)

    def evaluate(self, t, s) -> np.ndarray:
        """Numeric envelope at times ``t`` and shared states ``s`` (batch friendly)."""
        s = np.asarray(s, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), s.shape[:-1])
        pts = np.zeros(s.shape[:-1] + (self.g[0].space.count,))
        sp = self.g[0].space
        pts[..., sp.index("t")] = t
        for j, n in enumerate(("x", "y", "th")):
            pts[..., sp.index(n)] = s[..., j]
        flat = pts.reshape(-1, sp.count)
        vals = [gi.eval_many(flat).reshape(s.shape[:-1]) for gi in self.g]
        return np.stack(vals, axis=-1)


def error_envelope_default(config: ModelConfig = DEFAULT_MODEL, space: VariableSpace = SPACE) -> ErrorEnvelope:
    """``g = [v_err (1 - th^2/2), v_err (th - th^3/6), thdot_err]`` with
    ``v_err = (t - 1)^2`` and ``thdot_err = (t - 1)^4``.

    The second component is odd in ``th``; only its magnitude acts as a bound.
    """
    t = Polynomial.variable(space, "t")
    th = Polynomial.variable(space, "th")
    lag = t - config.envelope_t_ref
    v_err = lag ** config.v_err_power
    thdot_err = lag ** config.thdot_err_power
    return ErrorEnvelope((v_err * (1.0 - 0.5 * th ** 2), v_err * (th - (1.0 / 6.0) * th ** 3), thdot_err))


def zero_envelope(space: VariableSpace = SPACE) -> ErrorEnvelope:
    z = Polynomial.zero(space)
    return ErrorEnvelope((z, z, z), name="zero")


class DisturbanceSignal:
    """Piecewise-constant ``d: [0, T] -> [-1, 1]^3``.

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``; the first
    breakpoint must be 0 and the last value persists to the end of the horizon.
    """

    def __init__(self, breakpoints: Sequence[float], values):
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        if vals.shape != (bp.size, 3):
            raise ValueError(f"need one 3-vector per breakpoint, got {vals.shape} for {bp.size}")
        if bp.size == 0 or bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if np.any(np.abs(vals) > 1.0) or not np.all(np.isfinite(vals)):
            raise ValueError("disturbance values must lie in [-1, 1]")
        self.breakpoints = bp
        self.values = vals

    @classmethod
    def constant(cls, d) -> "DisturbanceSignal":
        return cls([0.0], [np.broadcast_to(np.asarray(d, dtype=float), (3,))])

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    @classmethod
    def random(cls, rng: np.random.Generator, horizon: float, max_breaks: int = 4) -> "DisturbanceSignal":
        """Random bang-bang / interior signal with up to ``max_breaks`` breakpoints."""
        nb = int(rng.integers(1, max_breaks + 1))
        inner = np.sort(rng.uniform(0.0, horizon, nb - 1))
        bp = np.concatenate([[0.0], inner])
        if np.any(np.diff(bp) <= 0):
            bp = np.array([0.0])
        vals = rng.choice([-1.0, 1.0], size=(bp.size, 3))
        interior = rng.random((bp.size, 3)) < 0.2
        vals[interior] = rng.uniform(-1.0, 1.0, interior.sum())
        return cls(bp, vals)


def disturbed_rhs(t, s, k, d, envelope: ErrorEnvelope | None = None):
    """Taylor-Dubins field plus ``g(t, x_s) * d(t)`` componentwise."""
    envelope = envelope or error_envelope_default()
    dv = d(t) if callable(d) else np.asarray(d, dtype=float)
    if np.any(np.abs(dv) > 1.0 + 1e-12):
        raise ValueError("disturbance out of [-1, 1]")
    return dubins_poly_rhs(t, s, k) + envelope.evaluate(t, s) * dv


# -- integration ------------------------------------------------------------

def rk4(rhs: Callable, s0, horizon: float, dt: float = 0.01, t0: float = 0.0, args: tuple = ()):
    """Fixed-step RK4. Returns ``(times, states)`` with states shaped ``(steps+1, *s0.shape)``."""
    steps = int(round(horizon / dt))
    if steps <= 0:
        raise ValueError("horizon must cover at least one step")
    s = np.array(s0, dtype=float)
    out = np.empty((steps + 1,) + s.shape)
    out[0] = s
    times = t0 + dt * np.arange(steps + 1)
    for i in range(steps):
        t = times[i]
        a = rhs(t, s, *args)
        b = rhs(t + dt / 2, s + dt / 2 * a, *args)
        c = rhs(t + dt / 2, s + dt / 2 * b, *args)
        e = rhs(t + dt, s + dt * c, *args)
        s = s + dt / 6 * (a + 2 * b + 2 * c + e)
        out[i + 1] = s
    return times, out


def simulate_closed_loop(init, k, horizon: float = 1.0, config: ModelConfig = DEFAULT_MODEL, t0: float = 0.0):
    """Integrate the unicycle under :func:`tracking_controller` with constant ``k``."""
    k = np.asarray(k, dtype=float)
    return rk4(closed_loop_rhs(config), init, horizon, config.dt, t0, args=(k,))


def simulate_disturbed(x0, k, d, horizon: float = 1.0, envelope: ErrorEnvelope | None = None, dt: float = 0.01):
    envelope = envelope or error_envelope_default()

    def rhs(t, s, kk):
        return disturbed_rhs(t, s, kk, d, envelope)

    return rk4(rhs, x0, horizon, dt, args=(np.asarray(k, dtype=float),))


# -- error-bound validation -------------------------------------------------

@dataclass
class ErrorBoundReport:
    max_violation: np.ndarray  # per shared coordinate; <= 0 means the bound holds
    worst_time: np.ndarray
    left_xs: bool
    times: np.ndarray
    errors: np.ndarray
    bounds: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.max_violation <= 0.0))


def validate_error_bound(
    k,
    init,
    horizon: float | None = None,
    config: ModelConfig = DEFAULT_MODEL,
    envelope: ErrorEnvelope | None = None,
    reference: str = "trig",
    frame_offset=(0.0, 0.0),
) -> ErrorBoundReport:
    """Track constant ``k`` from unicycle state ``init`` and compare shared-state
    velocity mismatch against ``|g|`` at every RK4 sample in ``[0, horizon]``.

    ``k`` and ``init`` may carry matching leading batch dimensions; the report
    then holds one maximal violation per trajectory and coordinate.

    ``reference`` selects the low-fidelity field: ``"trig"`` (exact Dubins) or
    ``"poly"`` (Taylor polynomial). ``frame_offset`` shifts positions into the
    planning frame before the X_s membership check.
    """
    horizon = config.horizon if horizon is None else horizon
    envelope = envelope or error_envelope_default(config)
    k = np.asarray(k, dtype=float)
    times, traj = simulate_closed_loop(init, k, horizon, config)
    u = tracking_controller(traj, np.broadcast_to(k, traj.shape[:-1] + (2,)), config)
    f_true = unicycle_rhs(times, traj, u)[..., :3]
    shared = traj[..., :3]
    kk = np.broadcast_to(k, shared.shape[:-1] + (2,))
    f_low = dubins_rhs(times, shared, kk) if reference == "trig" else dubins_poly_rhs(times, shared, kk)
    err = np.abs(f_true - f_low)
    tt = times.reshape((-1,) + (1,) * (shared.ndim - 2))
    bound = np.abs(envelope.evaluate(np.broadcast_to(tt, shared.shape[:-1]), shared))
    viol = err - bound
    worst = np.argmax(viol, axis=0)
    planar = shared + np.array([frame_offset[0], frame_offset[1], 0.0])
    left = not bool(np.all(config.xs.contains(planar)))
    return ErrorBoundReport(viol.max(axis=0), times[worst], left, times, err, bound)


def fig2_initial_states(k, config: ModelConfig = DEFAULT_MODEL) -> list[np.ndarray]:
    """Worst-case initial tracking offsets for parameter ``k``.

    Speed starts at either end of ``[0, v_max]`` and yaw rate at the opposite
    sign of the command or at the yaw-rate extremes.
    """
    k1 = float(k[0])
    cx, cy = config.x0_center
    lo, hi = config.k1_range
    thdots = sorted({-k1, lo, hi, 0.0})
    return [np.array([cx, cy, 0.0, w, v]) for v in (0.0, config.v_max) for w in thdots]


def fig2_scenario(config: ModelConfig = DEFAULT_MODEL):
    """Two-phase scenario: full speed turning at +0.5 rad/s for one horizon
    (yaw rate starting at 0), then an emergency brake while switching to -0.5 rad/s.

    Returns the per-phase :class:`ErrorBoundReport` objects and the stitched trace.
    """
    cx, cy = config.x0_center
    init = np.array([cx, cy, 0.0, 0.0, config.v_max])
    k_a = np.array([config.k1_range[1], config.v_max])
    k_b = np.array([config.k1_range[0], 0.0])
    rep_a = validate_error_bound(k_a, init, config=config)
    _, traj = simulate_closed_loop(init, k_a, config.horizon, config)
    end = traj[-1].copy()
    # the second plan starts in a fresh local frame centred on the vehicle
    start_b = np.array([cx, cy, 0.0, end[3], end[4]])
    rep_b = validate_error_bound(k_b, start_b, config=config)
    return rep_a, rep_b
