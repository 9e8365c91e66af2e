"""Receding-horizon trajectory optimization over the certified safe set.

The planner picks a trajectory parameter ``k = (k1, k2)`` (yaw rate, speed)
that minimizes a goal/speed cost subject to ``h(k) >= 0``, where ``h`` is the
safe-set polynomial produced by :func:`frsplan.safeset.intersect`. When no
parameter in K is certified safe the planner returns a braking plan instead.

Timing
------
A plan is computed during one planning period ``tau_plan`` and then executed
for the next one; the vehicle must always keep enough certified horizon to
come to a stop. This requires ``T >= tau_plan + tau_stop`` and a sensing
window ``T_sense >= T + tau_plan`` (see :func:`check_timing`).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .polyalg import Box
from .safeset import SafeSetPoly, to_local

N_STARTS_PER_AXIS = 3
PRESCAN = 25
FD_STEP = 1e-4
BARRIER_WEIGHTS = (1e-2, 1e-3, 1e-4)
MAX_ITERS = 40


# ---------------------------------------------------------------------------
# timing contract
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingConfig:
    """Planning-loop timing constants (seconds, metres per second)."""

    tau_plan: float = 0.5
    tau_stop: float = 0.5
    T: float = 1.0
    T_sense: float = 1.5
    v_max: float = 1.0

    @property
    def d_sense(self) -> float:
        """Sensing radius ``v_max * T_sense``."""
        return self.v_max * self.T_sense


@dataclass
class TimingReport:
    """Outcome of :func:`check_timing`; violations are reported, not raised."""

    T: float
    T_sense: float
    D_sense: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {"ok": self.ok, "T": self.T, "T_sense": self.T_sense, "D_sense": self.D_sense,
                "violations": list(self.violations)}


def check_timing(cfg: TimingConfig | float, tau_stop: float | None = None, *, T: float | None = None,
                 T_sense: float | None = None, v_max: float = 1.0) -> TimingReport:
    """Check the timing inequalities and report the tight horizon values.

    Accepts either a :class:`TimingConfig` or ``(tau_plan, tau_stop)`` with
    optional ``T``/``T_sense``. The returned ``T`` and ``T_sense`` are the
    smallest admissible values, ``tau_plan + tau_stop`` and ``T + tau_plan``;
    ``D_sense`` is ``v_max`` times the sensing window actually in use (the
    given ``T_sense`` if any, else the tight one).

    Examples
    --------
    >>> r = check_timing(0.5, 0.5)
    >>> (r.T, r.T_sense, r.D_sense, r.ok)
    (1.0, 1.5, 1.5, True)
    """
    if isinstance(cfg, TimingConfig):
        tau_plan, tau_stop, T, T_sense, v_max = cfg.tau_plan, cfg.tau_stop, cfg.T, cfg.T_sense, cfg.v_max
    else:
        tau_plan = float(cfg)
        if tau_stop is None:
            raise TypeError("tau_stop is required when tau_plan is given as a number")
    vals = {"tau_plan": tau_plan, "tau_stop": tau_stop, "v_max": v_max}
    if T is not None:
        vals["T"] = T
    if T_sense is not None:
        vals["T_sense"] = T_sense
    for name, v in vals.items():
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v}")
    T_min = tau_plan + tau_stop
    violations = []
    T_used = T_min if T is None else float(T)
    if T is not None and T < T_min - 1e-12:
        violations.append(f"T = {T:g} < tau_plan + tau_stop = {T_min:g}")
    Ts_min = T_used + tau_plan
    if T_sense is not None and T_sense < Ts_min - 1e-12:
        violations.append(f"T_sense = {T_sense:g} < T + tau_plan = {Ts_min:g}")
    Ts_used = Ts_min if T_sense is None else float(T_sense)
    return TimingReport(T_min, Ts_min, v_max * Ts_used, violations)


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostSpec:
    """``J(k) = w_goal |endpoint(k) - goal_local|^2 + w_speed (k2 - v_des)^2``.

    ``goal`` is given in the world frame. ``goal_local`` is the goal expressed
    in the planning frame and pulled in to at most ``v_des * T`` from the
    vehicle (see :func:`local_goal`), so a distant goal sets a direction at the
    desired speed rather than demanding top speed.

    The default ``w_goal`` dominates ``w_speed`` so that a goal inside the
    turning circle at ``v_des`` makes the vehicle slow down and turn in
    rather than orbit the goal.
    """

    goal: tuple[float, float]
    v_des: float
    w_goal: float = 30.0
    w_speed: float = 1.0

    def __post_init__(self):
        if self.w_goal < 0 or self.w_speed < 0:
            raise ValueError("cost weights must be non-negative")
        if not all(math.isfinite(float(v)) for v in (*self.goal, self.v_des)):
            raise ValueError("goal and v_des must be finite")


def endpoint(k, horizon: float = 1.0) -> np.ndarray:
    """Position after ``horizon`` seconds of the undisturbed Dubins model from the origin.

    ``k`` may have shape (2,) or (N, 2); the closed-form solution of
    ``x' = k2 cos th, y' = k2 sin th, th' = k1`` is used.
    """
    k = np.asarray(k, dtype=float)
    k1, k2 = k[..., 0], k[..., 1]
    a = k1 * horizon
    small = np.abs(a) < 1e-4
    a_safe = np.where(small, 1.0, a)
    # sin(a)/a and (1 - cos a)/a, with series near zero
    s_over = np.where(small, 1.0 - a * a / 6.0, np.sin(a_safe) / a_safe)
    c_over = np.where(small, a / 2.0 - a ** 3 / 24.0, (1.0 - np.cos(a_safe)) / a_safe)
    d = k2 * horizon
    return np.stack([d * s_over, d * c_over], axis=-1)


def local_goal(goal, pose, v_des: float, horizon: float = 1.0) -> np.ndarray:
    """Goal in the frame of ``pose``, projected onto the disc of radius ``v_des * horizon``."""
    g = to_local(np.asarray(goal, dtype=float), pose)[0]
    r = float(np.hypot(g[0], g[1]))
    reach = max(v_des, 0.0) * horizon
    return g * (reach / r) if r > reach else g


def cost_value(k, goal_local, cost: CostSpec, horizon: float = 1.0) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    e = endpoint(k, horizon) - np.asarray(goal_local, dtype=float)
    return cost.w_goal * np.sum(e * e, axis=-1) + cost.w_speed * (k[..., 1] - cost.v_des) ** 2


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class PlanResult:
    """Chosen parameter and what happened while choosing it."""

    k: tuple[float, float]
    braking: bool
    cost: float | None
    h_value: float | None
    reason: str = "optimal"
    starts: int = 0
    iterations: int = 0
    optimize_ms: float = 0.0
    budget_exceeded: bool = False

    def to_json(self, timing: bool = True) -> dict:
        d = asdict(self)
        d["k"] = [float(v) for v in self.k]
        if not timing:
            d.pop("optimize_ms")
        d["tool_version"] = __version__
        return d

    def dumps(self, timing: bool = True) -> str:
        return json.dumps(self.to_json(timing), indent=2, sort_keys=True)


def braking_plan(k) -> tuple[float, float]:
    """Braking parameter: keep the yaw-rate command, command zero speed."""
    return (float(k[0]), 0.0)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class _Scaled:
    """Objective, constraint and barrier in unit coordinates ``z in [-1, 1]^2``."""

    def __init__(self, h: SafeSetPoly, goal_local, cost: CostSpec, horizon: float):
        self.h = h
        self.lo = np.asarray(h.k_box.lo, dtype=float)
        self.hi = np.asarray(h.k_box.hi, dtype=float)
        self.goal = np.asarray(goal_local, dtype=float)
        self.cost = cost
        self.horizon = horizon

    def k(self, z):
        return 0.5 * (self.lo + self.hi) + 0.5 * (self.hi - self.lo) * np.asarray(z, dtype=float)

    def J(self, z):
        return cost_value(self.k(z), self.goal, self.cost, self.horizon)

    def hval(self, z):
        z = np.atleast_2d(z)
        return self.h.evaluate(self.k(z))

    def phi(self, z, mu):
        """Barrier objective; ``inf`` outside ``h > 0``."""
        z = np.atleast_2d(z)
        hv = self.hval(z)
        out = np.full(hv.shape, np.inf)
        ok = hv > 0
        out[ok] = self.J(z[ok]) - mu * np.log(hv[ok])
        return out


def _grad(p: _Scaled, z, mu, step: float = FD_STEP) -> np.ndarray | None:
    """Central differences of the barrier objective; ``None`` if a probe leaves ``h > 0``."""
    probes = np.array([z + [step, 0], z - [step, 0], z + [0, step], z - [0, step]])
    vals = p.phi(probes, mu)
    if not np.all(np.isfinite(vals)):
        return None
    return np.array([(vals[0] - vals[1]) / (2 * step), (vals[2] - vals[3]) / (2 * step)])


def _descend(p: _Scaled, z0: np.ndarray, max_iters: int = MAX_ITERS) -> tuple[np.ndarray, int]:
    """Projected gradient descent on a decreasing barrier weight.

    Trial steps use the Barzilai-Borwein length, backtracked until the
    Armijo condition holds (which also keeps iterates inside ``h > 0``).
    """
    z = z0.copy()
    iters = 0
    for mu in BARRIER_WEIGHTS:
        f = float(p.phi(z, mu)[0])
        if not math.isfinite(f):
            break
        g = _grad(p, z, mu)
        step = None
        for _ in range(max_iters):
            if g is None:
                break
            iters += 1
            gn = float(np.linalg.norm(g))
            if gn < 1e-8:
                break
            if step is None:
                step = 1.0 / max(gn, 1.0)
            accepted = False
            while step > 1e-10:
                zn = np.clip(z - step * g, -1.0, 1.0)
                fn = float(p.phi(zn, mu)[0])
                if fn <= f - 1e-4 * float(g @ (z - zn)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted or f - fn <= 1e-12:
                break
            gnew = _grad(p, zn, mu)
            dz = zn - z
            z, f = zn, fn
            if gnew is None:
                break
            dg = gnew - g
            g = gnew
            curv = float(dz @ dg)
            step = float(dz @ dz) / curv if curv > 1e-16 else 1.0 / max(float(np.linalg.norm(g)), 1.0)
            step = min(step, 1e3)
    return z, iters


def _start_grid(n: int = N_STARTS_PER_AXIS) -> np.ndarray:
    c = np.linspace(-1.0, 1.0, n + 2)[1:-1] if n > 1 else np.zeros(1)
    Z1, Z2 = np.meshgrid(c, c, indexing="ij")
    return np.column_stack([Z1.ravel(), Z2.ravel()])


def optimize(
    h: SafeSetPoly,
    pose,
    cost: CostSpec,
    horizon: float = 1.0,
    k_prev: Sequence[float] | None = None,
    budget: float | None = None,
    clock=time.perf_counter,
) -> PlanResult:
    """Minimize the plan cost over ``{k in K : h(k) >= 0}``.

    Parameters
    ----------
    h : certified safe set at the planning pose
    pose : world pose ``(x, y, heading)`` the plan starts from
    cost : goal and desired speed
    horizon : plan duration ``T`` used for the endpoint
    k_prev : previous plan, used as the yaw-rate reference for braking
    budget : optional wall-clock limit in seconds; when exceeded the result
        is a braking plan flagged ``budget_exceeded``. ``None`` disables the
        check, which keeps results independent of host speed.

    Returns
    -------
    PlanResult
        ``braking`` is set when no sample of a 25 x 25 pre-scan of K is
        certified (``h < 0`` everywhere) or the budget ran out.
    """
    t0 = clock()
    k_ref = (0.0, 0.0) if k_prev is None else (float(k_prev[0]), float(k_prev[1]))
    goal_local = local_goal(cost.goal, pose, cost.v_des, horizon)
    p = _Scaled(h, goal_local, cost, horizon)

    def brake(reason, exceeded=False, starts=0, iters=0):
        return PlanResult(braking_plan(k_ref), True, None, None, reason, starts, iters,
                          1e3 * (clock() - t0), exceeded)

    g = np.linspace(-1.0, 1.0, PRESCAN)
    G1, G2 = np.meshgrid(g, g, indexing="ij")
    scan = np.column_stack([G1.ravel(), G2.ravel()])
    hs = p.hval(scan)
    feas = hs > 0
    if not feas.any():
        return brake("no-safe-parameter")
    feas_pts = scan[feas]
    feas_J = p.J(feas_pts)

    starts = []
    for z in _start_grid():
        if p.hval(z)[0] > 0:
            starts.append(z)
        else:
            starts.append(feas_pts[np.argmin(np.sum((feas_pts - z) ** 2, axis=1))])
    starts = np.unique(np.round(np.array(starts), 12), axis=0)

    best_z = feas_pts[np.argmin(feas_J)]
    best_J = float(feas_J.min())
    iters = 0
    for z0 in starts:
        z, it = _descend(p, z0)
        iters += it
        if budget is not None and clock() - t0 > budget:
            return brake("budget-exceeded", True, len(starts), iters)
        if p.hval(z)[0] >= 0:
            Jz = float(p.J(z[None])[0])
            if Jz < best_J:
                best_z, best_J = z, Jz
    k = p.k(best_z)
    k = np.clip(k, p.lo, p.hi)
    hk = h(k)
    if hk < 0:  # cannot happen for accepted candidates; guard against rounding at the box edge
        return brake("no-safe-parameter", False, len(starts), iters)
    return PlanResult((float(k[0]), float(k[1])), False, best_J, hk, "optimal", len(starts), iters,
                      1e3 * (clock() - t0), False)
