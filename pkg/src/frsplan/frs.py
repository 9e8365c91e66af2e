"""Forward-reachable-set certificates from the degree-truncated SOS program.

All coordinates are affinely normalized to ``[-1, 1]`` before compilation:
``t in [0, T]``, the shared states over ``X_s`` and the parameters over ``K``.
The certificate keeps these maps and evaluates its polynomials from
physical inputs.

Program (per disturbance channel ``j``)::

    -L_f v - sum_j q_j       in Q([0,T] x X_s x K)
    +/- (dv/dx_j) g_j + q_j  in Q([0,T] x X_s x K)
    q_j                      in Q([0,T] x X_s x K)
    -v(0, .)                 in Q(X_0 x K)
    w                        in Q(X_s x K)
    w + v - 1                in Q([0,T] x X_s x K)
    minimize  integral of w over X_s x K

With ``channels="scalar"`` a single ``q`` bounds ``|L_g v|`` and the program
has exactly seven membership constraints. The componentwise form is required
when the three disturbance components vary independently.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .liederiv import lie_f
from .polyalg import AffineMap, Box, Polynomial, VariableSpace, affine_substitute, box_moments
from .sdpsolve import SdpOptions, SdpSolution, solve
from .soscompile import CompiledProgram, SemialgebraicSet, SosProgram, SosSolution, recover_certificate
from .vehicle import (
    DEFAULT_MODEL,
    SPACE,
    DisturbanceSignal,
    ModelConfig,
    dubins_poly,
    error_envelope_default,
    fig2_initial_states,
    rk4,
    simulate_closed_loop,
)

SCHEMA_VERSION = 1


class FRSError(RuntimeError):
    """The SOS program did not produce a usable certificate."""


@dataclass(frozen=True)
class ReachSystem:
    """Polynomial dynamics ``x' = f(t, x, k) + g(t, x) * d`` with box domains (physical units)."""

    space: VariableSpace
    time_var: str
    state_vars: tuple[str, ...]
    param_vars: tuple[str, ...]
    f: tuple[Polynomial, ...]
    g: tuple[Polynomial, ...]
    xs: Box
    x0: Box
    k: Box
    horizon: float
    name: str = "system"
    # states that obstacles constrain (the rest, e.g. heading, are free)
    obstacle_vars: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.obstacle_vars is not None and not set(self.obstacle_vars) <= set(self.state_vars):
            raise ValueError("obstacle_vars must be state variables")
        if len(self.f) != len(self.state_vars) or len(self.g) != len(self.state_vars):
            raise ValueError("f and g need one component per state")
        if self.xs.names != self.state_vars or self.x0.names != self.state_vars:
            raise ValueError("state boxes must list the state variables in order")
        if self.k.names != self.param_vars:
            raise ValueError("parameter box must list the parameter variables in order")
        for lo0, hi0, lo, hi in zip(self.x0.lo, self.x0.hi, self.xs.lo, self.xs.hi):
            if lo0 < lo or hi0 > hi:
                raise ValueError("X_0 must lie inside X_s")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @property
    def maps(self) -> dict[str, AffineMap]:
        maps = {self.time_var: AffineMap.to_unit(0.0, self.horizon)}
        for box in (self.xs, self.k):
            for n, lo, hi in zip(box.names, box.lo, box.hi):
                maps[n] = AffineMap.to_unit(lo, hi)
        return maps


def dubins_system(model: ModelConfig = DEFAULT_MODEL, envelope=None) -> ReachSystem:
    """Taylor-Dubins dynamics with the default tracking-error envelope."""
    env = envelope or error_envelope_default(model)
    return ReachSystem(
        SPACE, "t", ("x", "y", "th"), ("k1", "k2"),
        tuple(dubins_poly(3, SPACE)), tuple(env.g),
        model.xs, model.x0, model.k_box, model.horizon, "dubins", ("x", "y"),
    )


def sanity_system(g_value: float = 0.1) -> ReachSystem:
    """1-D check model ``x' = k + g d`` on ``x in [-1, 1]``, ``k in [-0.5, 0.5]``."""
    space = VariableSpace(("t", "x", "k"))
    k = Polynomial.variable(space, "k")
    return ReachSystem(
        space, "t", ("x",), ("k",), (k,), (Polynomial.constant(space, g_value),),
        Box(("x",), (-1.0,), (1.0,)), Box(("x",), (-0.1,), (0.1,)), Box(("k",), (-0.5,), (0.5,)),
        1.0, "sanity1d",
    )


# ---------------------------------------------------------------------------
# program assembly
# ---------------------------------------------------------------------------

@dataclass
class FRSProgram:
    system: ReachSystem
    program: SosProgram
    compiled: CompiledProgram
    degree: int
    relaxation_degree: int
    channels: str
    constraint_roles: dict[str, str]


def _normalized_fields(system: ReachSystem):
    maps = system.maps
    f_z = [affine_substitute(fi, maps).scale(1.0 / maps[n].scale) for fi, n in zip(system.f, system.state_vars)]
    g_z = [affine_substitute(gi, maps).scale(1.0 / maps[n].scale) for gi, n in zip(system.g, system.state_vars)]
    return f_z, g_z


def _x0_local_maps(system: ReachSystem) -> dict[str, AffineMap]:
    """Maps from the unit box of X_0 into the normalized X_s coordinates."""
    maps = system.maps
    out = {}
    for n, lo, hi in zip(system.x0.names, system.x0.lo, system.x0.hi):
        zlo, zhi = maps[n].inverse(lo), maps[n].inverse(hi)
        out[n] = AffineMap.to_unit(float(zlo), float(zhi))
    return out


def build_program(
    system: ReachSystem,
    degree: int = 4,
    channels: str = "componentwise",
    relaxation_degree: int | None = None,
    w_states: tuple[str, ...] | None = None,
) -> FRSProgram:
    """Assemble the SOS program for ``system`` with decision degree ``degree``.

    ``relaxation_degree`` (2l) defaults to the smallest even bound covering
    every target; passing a smaller value raises :class:`DegreeError` naming
    the required minimum. ``w_states`` restricts the states ``w`` may depend
    on (default: all); ``w`` is then constant along the omitted states, which
    keeps ``{w >= 1}`` an outer approximation of the reachable set while
    spending the polynomial degree on the retained coordinates only.
    """
    if channels not in ("componentwise", "scalar"):
        raise ValueError("channels must be 'componentwise' or 'scalar'")
    sp = system.space
    tv, xs_, ks = system.time_var, system.state_vars, system.param_vars
    allv = (tv,) + xs_ + ks
    sk = xs_ + ks
    if w_states is not None:
        unknown = set(w_states) - set(xs_)
        if unknown:
            raise ValueError(f"w_states {sorted(unknown)} are not states of {system.name}")
        sk = tuple(n for n in xs_ if n in w_states) + ks
    prog = SosProgram(sp)
    v = prog.new_poly("v", degree, allv)
    w = prog.new_poly("w", degree, sk)
    f_z, g_z = _normalized_fields(system)
    rate = 1.0 / system.maps[tv].scale
    lf = v.expr().map(lambda p: lie_f(p, f_z, tv, xs_, rate))
    comps = [v.expr().map(lambda p, n=n, gi=gi: p.partial(n) * gi) for n, gi in zip(xs_, g_z)]
    if channels == "scalar":
        total = comps[0]
        for cexpr in comps[1:]:
            total = total + cexpr
        comps = [total]
    qs = [prog.new_poly(f"q{j}" if channels == "componentwise" else "q", degree, allv) for j in range(len(comps))]
    x0maps = _x0_local_maps(system)
    v0 = v.expr().map(lambda p: affine_substitute(p.substitute_value(tv, -1.0), x0maps))
    targets = []
    roles = {}
    qsum = qs[0].expr()
    for q in qs[1:]:
        qsum = qsum + q
    big = SemialgebraicSet.unit_box(sp, allv, "T x Xs x K")
    small = SemialgebraicSet.unit_box(sp, sk, "Xs x K")
    x0set = SemialgebraicSet.unit_box(sp, xs_ + ks, "X0 x K")
    targets.append(("flow", -lf - qsum, big, "flow"))
    for j, (cexpr, q) in enumerate(zip(comps, qs)):
        targets.append((f"dist+{j}", cexpr + q, big, f"dist{j}"))
        targets.append((f"dist-{j}", -cexpr + q, big, f"dist{j}"))
    for j, q in enumerate(qs):
        targets.append((f"qpos{j}", q.expr(), big, "qpos"))
    targets.append(("init", -v0, x0set, "init"))
    targets.append(("wpos", w.expr(), small, "wpos"))
    targets.append(("cover", w + v - 1.0, big, "cover"))
    need = max(t[1].degree for t in targets)
    need += need % 2
    need = max(need, 2)
    if relaxation_degree is None:
        relaxation_degree = need
    from .soscompile import DegreeError

    if relaxation_degree < need:
        raise DegreeError(f"relaxation degree {relaxation_degree} too small; operators need 2l >= {need}")
    for name, expr, set_, role in targets:
        prog.add_constraint(expr, set_, relaxation_degree, name)
        roles[name] = role
    prog.minimize_moments(w, box_moments(sp, Box(sk, (-1.0,) * len(sk), (1.0,) * len(sk)), degree))
    compiled = prog.compile()
    return FRSProgram(system, prog, compiled, degree, relaxation_degree, channels, roles)


def soundness_margin(sol: SosSolution, frs_prog: FRSProgram) -> float:
    """Upper bound on how far ``w`` can fall below 1 on the reachable set because
    of coefficient residuals (each residual's l1 norm bounds it on the unit box)."""
    res = {c.name: c.residual_l1 for c in sol.constraints}
    T = frs_prog.system.horizon
    flow = res["flow"]
    dist = 0.0
    j = 0
    while f"dist+{j}" in res:
        dist += max(res[f"dist+{j}"], res[f"dist-{j}"])
        j += 1
    return res["init"] + res["cover"] + T * (flow + dist)


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------

def _box(intervals: dict, names) -> Box:
    """Box from a JSON mapping, in the given variable order (JSON key order is not preserved)."""
    return Box(tuple(names), tuple(intervals[n][0] for n in names), tuple(intervals[n][1] for n in names))


@dataclass
class FRSCertificate:
    """Solved ``(v, w, q)`` in normalized coordinates plus everything needed to evaluate them."""

    system_name: str
    space: VariableSpace
    time_var: str
    state_vars: tuple[str, ...]
    param_vars: tuple[str, ...]
    horizon: float
    xs: Box
    x0: Box
    k: Box
    degree: int
    relaxation_degree: int
    channels: str
    v: Polynomial
    w: Polynomial
    q: list[Polynomial]
    margin: float
    diagnostics: dict
    envelope: str = "default"
    config_hash: str = ""
    model: dict | None = None

    @property
    def maps(self) -> dict[str, AffineMap]:
        m = {self.time_var: AffineMap.to_unit(0.0, self.horizon)}
        for box in (self.xs, self.k):
            for n, lo, hi in zip(box.names, box.lo, box.hi):
                m[n] = AffineMap.to_unit(lo, hi)
        return m

    def _normalize(self, names: Sequence[str], values) -> np.ndarray:
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        pts = np.zeros((vals.shape[0], self.space.count))
        maps = self.maps
        for col, n in enumerate(names):
            pts[:, self.space.index(n)] = maps[n].inverse(vals[:, col])
        return pts

    def w_eval(self, states, params) -> np.ndarray:
        """``w`` at physical shared states ``(N, n_x)`` and parameters ``(N, n_k)``."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        k = np.atleast_2d(np.asarray(params, dtype=float))
        rows = max(s.shape[0], k.shape[0])
        s = np.broadcast_to(s, (rows, s.shape[1]))
        k = np.broadcast_to(k, (rows, k.shape[1]))
        pts = self._normalize(self.state_vars + self.param_vars, np.hstack([s, k]))
        return self.w.eval_many(pts)

    def v_eval(self, t, states, params) -> np.ndarray:
        s = np.atleast_2d(states)
        k = np.atleast_2d(params)
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (s.shape[0],))
        pts = self._normalize((self.time_var,) + self.state_vars + self.param_vars, np.column_stack([t, s, k]))
        return self.v.eval_many(pts)

    def physical(self, which: str = "w") -> Polynomial:
        """Return ``v``/``w``/``q_j`` expressed in physical coordinates."""
        inv = {n: m.inverted() for n, m in self.maps.items()}
        p = {"v": self.v, "w": self.w}.get(which)
        if p is None:
            p = self.q[int(which[1:])]
        return affine_substitute(p, inv)

    # -- persistence --------------------------------------------------------
    def to_json(self, timing: bool = True) -> dict:
        """JSON payload; ``timing=False`` drops the wall-clock ``*_seconds``
        diagnostics so the file depends only on the configuration."""
        diagnostics = self.diagnostics if timing else {
            k: v for k, v in self.diagnostics.items() if not k.endswith("_seconds")}
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "system": self.system_name,
            "variables": list(self.space.names),
            "time_var": self.time_var,
            "state_vars": list(self.state_vars),
            "param_vars": list(self.param_vars),
            "horizon": self.horizon,
            "boxes": {"Xs": self.xs.as_dict(), "X0": self.x0.as_dict(), "K": self.k.as_dict()},
            "scaling_maps": {n: m.to_json() for n, m in self.maps.items()},
            "degree": self.degree,
            "relaxation_degree": self.relaxation_degree,
            "channels": self.channels,
            "envelope": self.envelope,
            "margin": self.margin,
            "v": self.v.to_json(),
            "w": self.w.to_json(),
            "q": [qj.to_json() for qj in self.q],
            "diagnostics": diagnostics,
            "config_hash": self.config_hash,
            "model": self.model,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FRSCertificate":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported certificate schema {data.get('schema_version')}")
        space = VariableSpace(tuple(data["variables"]))
        b = data["boxes"]
        return cls(
            data["system"], space, data["time_var"], tuple(data["state_vars"]), tuple(data["param_vars"]),
            float(data["horizon"]), _box(b["Xs"], data["state_vars"]), _box(b["X0"], data["state_vars"]),
            _box(b["K"], data["param_vars"]),
            int(data["degree"]), int(data["relaxation_degree"]), data["channels"],
            Polynomial.from_json(data["v"], space), Polynomial.from_json(data["w"], space),
            [Polynomial.from_json(q, space) for q in data["q"]], float(data["margin"]),
            data.get("diagnostics", {}), data.get("envelope", "default"), data.get("config_hash", ""),
            data.get("model"),
        )

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "FRSCertificate":
        return cls.from_json(json.loads(Path(path).read_text()))

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model) if self.model else DEFAULT_MODEL


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class FRSConfig:
    """Inputs of :func:`compute_frs`."""

    model: ModelConfig = field(default_factory=ModelConfig)
    degree: int = 4
    channels: str = "componentwise"
    system: str = "dubins"
    tol: float = 1e-7
    max_iter: int = 200
    residual_tol: float = 1e-5
    # "obstacle": w depends on the obstacle coordinates and k only; "full": on all states
    w_domain: str = "obstacle"

    def __post_init__(self):
        if self.w_domain not in ("obstacle", "full"):
            raise ValueError("w_domain must be 'obstacle' or 'full'")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(), "degree": self.degree, "channels": self.channels,
            "system": self.system, "tol": self.tol, "max_iter": self.max_iter, "residual_tol": self.residual_tol,
            "w_domain": self.w_domain,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FRSConfig":
        data = dict(data)
        model = ModelConfig.from_dict(data.pop("model", {}))
        return cls(model=model, **data)


def compute_frs(
    config: FRSConfig | None = None,
    out: str | Path | None = None,
    system: ReachSystem | None = None,
    verbose: bool = False,
) -> FRSCertificate:
    """Solve the FRS program; raise :class:`FRSError` unless the solver reports optimal."""
    cfg = config or FRSConfig()
    if system is None:
        system = dubins_system(cfg.model) if cfg.system == "dubins" else sanity_system()
    t0 = time.perf_counter()
    w_states = system.obstacle_vars if cfg.w_domain == "obstacle" else None
    fp = build_program(system, cfg.degree, cfg.channels, w_states=w_states)
    t_build = time.perf_counter() - t0
    sol = solve(fp.compiled.problem, SdpOptions(tol=cfg.tol, max_iter=cfg.max_iter, verbose=verbose))
    t_solve = time.perf_counter() - t0 - t_build
    if not sol.ok:
        raise FRSError(f"SDP solver returned {sol.status!r}; refusing to emit a certificate")
    sos = recover_certificate(fp.compiled, sol.x, sol.X)
    if sos.max_residual > cfg.residual_tol:
        raise FRSError(f"certificate residual {sos.max_residual:.2e} above {cfg.residual_tol:.1e}")
    margin = soundness_margin(sos, fp)
    diag = {
        **sol.summary(),
        "build_seconds": round(t_build, 3),
        "solve_seconds": round(t_solve, 3),
        "rows": fp.compiled.problem.m,
        "free_variables": fp.compiled.problem.n_free,
        "blocks": len(fp.compiled.problem.blocks),
        "max_block": max(fp.compiled.problem.block_sizes),
        "residuals_inf": {c.name: c.residual_inf for c in sos.constraints},
        "residuals_l1": {c.name: c.residual_l1 for c in sos.constraints},
        "objective_unit": sos.objective,
        "objective_physical": sos.objective * float(np.prod([m.scale for n, m in system.maps.items() if n != system.time_var])),
    }
    qnames = sorted(n for n in sos.decisions if n.startswith("q"))
    cert = FRSCertificate(
        system.name, system.space, system.time_var, system.state_vars, system.param_vars, system.horizon,
        system.xs, system.x0, system.k, cfg.degree, fp.relaxation_degree, cfg.channels,
        sos.decisions["v"], sos.decisions["w"], [sos.decisions[n] for n in qnames], margin, diag,
        "default" if system.name == "dubins" else system.name, config_hash(cfg.to_dict()),
        cfg.model.to_dict() if system.name == "dubins" else None,
    )
    if out is not None:
        cert.save(out)
    return cert


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    n_points: int
    n_violations: int
    min_w: float
    worst: dict
    disturbed_points: int
    closed_loop_points: int
    disturbed_violations: int
    closed_loop_violations: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    def to_json(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


def _disturbed_batch(cert: FRSCertificate, x0, k, signals, dt: float, envelope_fn: Callable):
    """Integrate the polynomial disturbed model for many trajectories at once."""
    f = dubins_poly_rhs_factory(cert)

    def rhs(t, s, kk):
        d = np.stack([sig(t) for sig in signals])
        return f(t, s, kk) + envelope_fn(t, s) * d

    return rk4(rhs, x0, cert.horizon, dt, args=(k,))


def dubins_poly_rhs_factory(cert: FRSCertificate):
    """Numeric ``f`` of the certificate's system (polynomial form)."""
    if cert.system_name == "dubins":
        from .vehicle import dubins_poly_rhs

        return dubins_poly_rhs

    def f(t, s, k):
        return k.copy()

    return f


def _envelope_fn(cert: FRSCertificate):
    if cert.system_name == "dubins":
        env = error_envelope_default(cert.model_config())
        return env.evaluate
    g = float(cert.system_name == "sanity1d") * 0.1

    def ev(t, s):
        return np.full(s.shape, g)

    return ev


def validate_certificate(
    cert: FRSCertificate,
    n_trajectories: int = 1000,
    n_closed_loop: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
    dt: float = 0.01,
) -> ValidationReport:
    """Check ``w >= 1 - tol`` along sampled disturbed and closed-loop trajectories.

    Disturbances are piecewise constant with up to four breakpoints, mostly at
    the extremes ``+/-1``. Closed-loop trajectories (Dubins systems only) start
    from the worst-case tracking offsets of :func:`fig2_initial_states`.
    """
    rng = np.random.default_rng(seed)
    x0 = cert.x0.sample(rng, n_trajectories)
    k = cert.k.sample(rng, n_trajectories)
    # make sure the deterministic extremes are represented
    extremes = [np.ones(len(cert.state_vars)), -np.ones(len(cert.state_vars))]
    signals = []
    for i in range(n_trajectories):
        if i < len(extremes):
            signals.append(DisturbanceSignal.constant(np.resize(extremes[i], 3))) if len(cert.state_vars) == 3 else signals.append(_ConstSignal(extremes[i]))
        else:
            sig = DisturbanceSignal.random(rng, cert.horizon)
            signals.append(sig if len(cert.state_vars) == 3 else _ProjectedSignal(sig, len(cert.state_vars)))
    times, traj = _disturbed_batch(cert, x0, k, signals, dt, _envelope_fn(cert))
    pts = traj.reshape(-1, traj.shape[-1])
    kk = np.broadcast_to(k, traj.shape[:-1] + (k.shape[1],)).reshape(-1, k.shape[1])
    wd = cert.w_eval(pts, kk)
    viol_d = int(np.sum(wd < 1.0 - tol))
    worst = {"kind": "disturbed", "w": float(wd.min())}
    min_w = float(wd.min())
    cl_points = 0
    viol_c = 0
    if cert.system_name == "dubins" and n_closed_loop > 0:
        model = cert.model_config()
        cx, cy = model.x0_center
        inits, ks = [], []
        for i in range(n_closed_loop):
            kc = cert.k.sample(rng, 1)[0]
            if i == 0:
                kc = np.array([cert.k.hi[0], cert.k.hi[1]])
            cands = fig2_initial_states(kc, model)
            base = cands[int(rng.integers(len(cands)))].copy()
            base[0] = rng.uniform(cert.x0.lo[0], cert.x0.hi[0])
            base[1] = rng.uniform(cert.x0.lo[1], cert.x0.hi[1])
            base[2] = rng.uniform(cert.x0.lo[2], cert.x0.hi[2])
            inits.append(base)
            ks.append(kc)
        inits = np.array(inits)
        ks = np.array(ks)
        _, cl = simulate_closed_loop(inits, ks, cert.horizon, model)
        shared = cl[..., :3].reshape(-1, 3)
        kc = np.broadcast_to(ks, cl.shape[:-1] + (2,)).reshape(-1, 2)
        wc = cert.w_eval(shared, kc)
        cl_points = wc.size
        viol_c = int(np.sum(wc < 1.0 - tol))
        if wc.min() < min_w:
            min_w = float(wc.min())
            worst = {"kind": "closed-loop", "w": min_w}
    return ValidationReport(
        pts.shape[0] + cl_points, viol_d + viol_c, min_w, worst, pts.shape[0], cl_points, viol_d, viol_c, tol,
    )


class _ConstSignal:
    def __init__(self, d):
        self.d = np.asarray(d, dtype=float)

    def __call__(self, t):
        return self.d


class _ProjectedSignal:
    def __init__(self, sig: DisturbanceSignal, n: int):
        self.sig = sig
        self.n = n

    def __call__(self, t):
        return self.sig(t)[: self.n]


def sample_feasibility(cert: FRSCertificate, n: int = 10000, seed: int = 0) -> dict:
    """Evaluate each program constraint at random points of its domain (normalized coordinates).

    Returns the minimum value of every constraint polynomial; all should be
    ``>= -1e-6``.
    """
    rng = np.random.default_rng(seed)
    system = ReachSystem(
        cert.space, cert.time_var, cert.state_vars, cert.param_vars,
        tuple(dubins_poly(3, cert.space)) if cert.system_name == "dubins" else (Polynomial.variable(cert.space, cert.param_vars[0]),),
        tuple(error_envelope_default(cert.model_config()).g) if cert.system_name == "dubins" else (Polynomial.constant(cert.space, 0.1),),
        cert.xs, cert.x0, cert.k, cert.horizon, cert.system_name,
    )
    f_z, g_z = _normalized_fields(system)
    tv, xs_ = cert.time_var, cert.state_vars
    rate = 1.0 / system.maps[tv].scale
    v, w = cert.v, cert.w
    lf = lie_f(v, f_z, tv, xs_, rate)
    comps = [v.partial(nm) * gi for nm, gi in zip(xs_, g_z)]
    if cert.channels == "scalar":
        tot = comps[0]
        for cc in comps[1:]:
            tot = tot + cc
        comps = [tot]
    qsum = cert.q[0]
    for q in cert.q[1:]:
        qsum = qsum + q
    allv = (tv,) + xs_ + cert.param_vars
    sk = xs_ + cert.param_vars
    zb = np.zeros((n, cert.space.count))
    idx_all = cert.space.indices(allv)
    zb[:, idx_all] = rng.uniform(-1, 1, (n, len(allv)))
    out = {"flow": float((-lf - qsum).eval_many(zb).min())}
    for j, (cexpr, q) in enumerate(zip(comps, cert.q)):
        cv = cexpr.eval_many(zb)
        qv = q.eval_many(zb)
        out[f"dist{j}"] = float((qv - np.abs(cv)).min())
        out[f"qpos{j}"] = float(qv.min())
    out["cover"] = float((w + v - 1.0).eval_many(zb).min())
    zs = np.zeros((n, cert.space.count))
    zs[:, cert.space.indices(sk)] = rng.uniform(-1, 1, (n, len(sk)))
    out["wpos"] = float(w.eval_many(zs).min())
    # initial set: sample physical X_0 x K, evaluate -v(0, .)
    x0 = cert.x0.sample(rng, n)
    kk = cert.k.sample(rng, n)
    out["init"] = float((-cert.v_eval(np.zeros(n), x0, kk)).min())
    return out
