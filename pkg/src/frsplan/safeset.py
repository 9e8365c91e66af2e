"""Online inner approximation of the safe trajectory-parameter set.

Given an FRS certificate ``w`` and obstacle points ``p`` in the planning frame,
:func:`intersect` finds a polynomial ``h(k)`` with

* ``1 - margin - delta - w(p, th, k) - h(k)`` in the quadratic module of the
  box ``th in X_s, k in K`` for every obstacle point ``p``;
* ``1 - h(k)`` in the quadratic module of ``K``;
* ``integral of h over K`` maximal.

``margin`` is the certificate's residual bound (the reachable set lies in
``{w >= 1 - margin}``), so ``h(k) >= 0`` implies that no trajectory with
parameter ``k`` reaches ``p``. After the solve, ``h`` is lowered by the
largest residual of the per-point identities, which keeps that implication
exact despite the solver's finite accuracy.

Obstacle segments are sampled with spacing at most ``POINT_SPACING``; the
certificate's initial set is wide enough that missing the samples by the
vehicle's circumscribed radius plus half the spacing still follows.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import __version__
from .frs import FRSCertificate
from .polyalg import Box, Polynomial, VariableSpace, box_moments, monomials
from .sdpsolve import SdpOptions, solve
from .soscompile import SdpBlock, SdpProblem, SemialgebraicSet, _multiplier_operator

R_CIRC = math.hypot(0.1, 0.05)
POINT_SPACING = 0.05
SEGMENT_BOUNDS = (0.1, 0.2)
H_DEGREE = 6
# strict separation added to the certificate margin
DELTA = 1e-6

H_SPACE = VariableSpace(("th", "k1", "k2"))
K_VARS = ("k1", "k2")


# ---------------------------------------------------------------------------
# obstacles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Obstacle:
    """A segment ``a -> b`` (or a point when ``b`` is None) in world coordinates.

    Parameters
    ----------
    a, b : endpoints in metres
    timestamp : time the obstacle was sensed
    """

    a: tuple[float, float]
    b: tuple[float, float] | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if self.b is not None:
            object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        coords = list(self.a) + (list(self.b) if self.b is not None else [])
        if len(self.a) != 2 or (self.b is not None and len(self.b) != 2):
            raise ValueError("obstacle endpoints must be 2-D")
        if not all(math.isfinite(v) for v in coords):
            raise ValueError("obstacle coordinates must be finite")

    @property
    def is_point(self) -> bool:
        return self.b is None

    @property
    def length(self) -> float:
        return 0.0 if self.b is None else math.dist(self.a, self.b)

    def check_length(self, bounds: tuple[float, float] = SEGMENT_BOUNDS, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` if a segment's length is outside ``bounds``."""
        if self.b is not None and not (bounds[0] - tol <= self.length <= bounds[1] + tol):
            raise ValueError(f"segment length {self.length:.4f} outside {bounds}")

    def sample(self, spacing: float = POINT_SPACING) -> np.ndarray:
        """Points along the obstacle, both endpoints included, gaps ``<= spacing``."""
        a = np.asarray(self.a)
        if self.b is None:
            return a[None, :]
        b = np.asarray(self.b)
        n = max(1, math.ceil(self.length / spacing - 1e-12))
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        return (1.0 - s) * a + s * b

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each of ``points`` (N, 2) to the obstacle."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        a = np.asarray(self.a)
        if self.b is None:
            return np.linalg.norm(p - a, axis=1)
        d = np.asarray(self.b) - a
        L2 = float(d @ d)
        s = np.clip(((p - a) @ d) / L2, 0.0, 1.0) if L2 > 0 else np.zeros(p.shape[0])
        return np.linalg.norm(p - (a + s[:, None] * d), axis=1)

    def to_json(self) -> dict:
        if self.b is None:
            return {"point": list(self.a), "timestamp": self.timestamp}
        return {"a": list(self.a), "b": list(self.b), "timestamp": self.timestamp}

    @classmethod
    def from_json(cls, data) -> "Obstacle":
        if isinstance(data, (list, tuple)):
            if len(data) == 2 and not isinstance(data[0], (list, tuple)):
                return cls(tuple(data))
            return cls(tuple(data[0]), tuple(data[1]))
        if "point" in data:
            return cls(tuple(data["point"]), None, float(data.get("timestamp", 0.0)))
        return cls(tuple(data["a"]), tuple(data["b"]), float(data.get("timestamp", 0.0)))


def load_obstacles(path: str | Path) -> list[Obstacle]:
    """Read a JSON list of obstacles (``{"a": .., "b": ..}`` or ``{"point": ..}``)."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("obstacles", [])
    return [Obstacle.from_json(d) for d in data]


def save_obstacles(obstacles: Sequence[Obstacle], path: str | Path) -> None:
    Path(path).write_text(json.dumps([o.to_json() for o in obstacles], indent=1))


@dataclass
class LocalObstacleSet:
    """Obstacle points in the vehicle frame (vehicle at the origin, heading 0).

    ``frs_points`` adds ``frame_offset`` (the centre of the certificate's
    initial set), giving the coordinates in which ``w`` is evaluated.
    """

    points: np.ndarray
    frame_offset: tuple[float, float] = (0.0, 0.0)
    n_discarded: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)

    @property
    def frs_points(self) -> np.ndarray:
        return self.points + np.asarray(self.frame_offset)

    def __len__(self) -> int:
        return self.points.shape[0]


def to_local(points, pose) -> np.ndarray:
    """Rigid transform of world points into the frame of ``pose = (x, y, heading)``."""
    x, y, th = (float(v) for v in pose)
    if not all(math.isfinite(v) for v in (x, y, th)):
        raise ValueError("pose must be finite")
    p = np.atleast_2d(np.asarray(points, dtype=float)) - np.array([x, y])
    c, s = math.cos(th), math.sin(th)
    return np.column_stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1]])


def localize(
    obstacles: Sequence[Obstacle],
    pose,
    xs: Box | None = None,
    frame_offset: tuple[float, float] = (0.0, 0.0),
    spacing: float = POINT_SPACING,
    sense_radius: float | None = None,
) -> LocalObstacleSet:
    """Sample obstacles and express the samples in the vehicle frame of ``pose``.

    Parameters
    ----------
    obstacles : world-frame obstacles
    pose : ``(x, y, heading)`` of the vehicle
    xs : shared-state box of the certificate; samples whose ``(x, y)`` (after
        adding ``frame_offset``) fall outside it are discarded
    frame_offset : centre of the certificate's initial set
    spacing : maximal gap between consecutive samples of a segment
    sense_radius : if given, samples farther than this from the vehicle are dropped
    """
    pts = [o.sample(spacing) for o in obstacles]
    world = np.vstack(pts) if pts else np.zeros((0, 2))
    local = to_local(world, pose) if world.size else np.zeros((0, 2))
    keep = np.ones(local.shape[0], dtype=bool)
    if sense_radius is not None:
        keep &= np.linalg.norm(local, axis=1) <= sense_radius
    if xs is not None:
        shifted = local + np.asarray(frame_offset)
        ix, iy = xs.names.index("x"), xs.names.index("y")
        keep &= (shifted[:, 0] >= xs.lo[ix]) & (shifted[:, 0] <= xs.hi[ix])
        keep &= (shifted[:, 1] >= xs.lo[iy]) & (shifted[:, 1] <= xs.hi[iy])
    return LocalObstacleSet(local[keep], tuple(frame_offset), int((~keep).sum()))


def localize_for(cert: FRSCertificate, obstacles: Sequence[Obstacle], pose, sense_radius: float | None = None,
                 spacing: float = POINT_SPACING) -> LocalObstacleSet:
    """:func:`localize` with the certificate's X_s box and initial-set centre."""
    return localize(obstacles, pose, cert.xs, x0_center(cert), spacing, sense_radius)


def x0_center(cert: FRSCertificate) -> tuple[float, float]:
    ix, iy = cert.x0.names.index("x"), cert.x0.names.index("y")
    return (0.5 * (cert.x0.lo[ix] + cert.x0.hi[ix]), 0.5 * (cert.x0.lo[iy] + cert.x0.hi[iy]))


# ---------------------------------------------------------------------------
# safe-set polynomial
# ---------------------------------------------------------------------------

@dataclass
class SafeSetPoly:
    """``h(k)`` in normalized parameter coordinates plus the map from physical ``k``.

    ``{k : h(k) >= 0}`` is the certified-safe parameter set.
    """

    h: Polynomial
    k_box: Box
    n_points: int = 0
    diagnostics: dict = field(default_factory=dict)
    fallback: bool = False

    @classmethod
    def braking_only(cls, k_box: Box, n_points: int = 0, reason: str = "") -> "SafeSetPoly":
        """The conservative ``h = -1`` (no parameter certified)."""
        return cls(Polynomial.constant(H_SPACE, -1.0), k_box, n_points, {"status": reason or "fallback"}, True)

    def _unit(self, k) -> np.ndarray:
        k = np.atleast_2d(np.asarray(k, dtype=float))
        lo, hi = np.asarray(self.k_box.lo), np.asarray(self.k_box.hi)
        z = (2.0 * k - (lo + hi)) / (hi - lo)
        pts = np.zeros((k.shape[0], H_SPACE.count))
        pts[:, 1:] = z
        return pts

    def evaluate(self, k) -> np.ndarray:
        """``h`` at physical parameters ``k`` of shape (N, 2)."""
        return self.h.eval_many(self._unit(k))

    def __call__(self, k) -> float:
        return float(self.evaluate(np.asarray(k, dtype=float).reshape(1, 2))[0])

    def grid(self, n: int = 50) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(k1, k2, h)`` on an ``n x n`` grid over K (``h`` indexed ``[i1, i2]``)."""
        k1 = np.linspace(self.k_box.lo[0], self.k_box.hi[0], n)
        k2 = np.linspace(self.k_box.lo[1], self.k_box.hi[1], n)
        K1, K2 = np.meshgrid(k1, k2, indexing="ij")
        vals = self.evaluate(np.column_stack([K1.ravel(), K2.ravel()])).reshape(n, n)
        return k1, k2, vals

    def to_json(self) -> dict:
        return {
            "tool_version": __version__,
            "variables": list(H_SPACE.names),
            "k_box": self.k_box.as_dict(),
            "h": self.h.to_json(),
            "n_points": self.n_points,
            "fallback": self.fallback,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SafeSetPoly":
        return cls(Polynomial.from_json(data["h"], H_SPACE), Box.from_dict(data["k_box"]), int(data["n_points"]),
                   data.get("diagnostics", {}), bool(data.get("fallback", False)))


def safe_margin(h: SafeSetPoly, k) -> float:
    """``h(k)``; non-negative means ``k`` is certified safe."""
    return h(k)


# ---------------------------------------------------------------------------
# the SDP
# ---------------------------------------------------------------------------

class _WTable:
    """Coefficients of ``w(p_x, p_y, th, k)`` as polynomials in ``(th, k)``, vectorized over points."""

    def __init__(self, cert: FRSCertificate, rows: list):
        sp_ = cert.space
        ix, iy = sp_.index("x"), sp_.index("y")
        rest = [sp_.index(n) for n in H_SPACE.names]
        row_index = {a: r for r, a in enumerate(rows)}
        ax, ay, rr, cc = [], [], [], []
        for alpha, coef in cert.w.items():
            if any(alpha[i] for i in range(sp_.count) if i not in (ix, iy) and i not in rest):
                raise ValueError("w depends on variables other than (x, y, th, k)")
            key = tuple(alpha[i] for i in rest)
            ax.append(alpha[ix])
            ay.append(alpha[iy])
            rr.append(row_index[key])
            cc.append(coef)
        self.ax = np.array(ax)
        self.ay = np.array(ay)
        self.sel = sp.csr_matrix((cc, (np.arange(len(cc)), rr)), shape=(len(cc), len(rows)))
        mx, my = cert.maps["x"], cert.maps["y"]
        self.mx, self.my = mx, my

    def coefficients(self, pts: np.ndarray) -> np.ndarray:
        """(N, rows) coefficient matrix of ``w`` at physical FRS-frame points."""
        zx = self.mx.inverse(pts[:, 0])
        zy = self.my.inverse(pts[:, 1])
        mono = zx[:, None] ** self.ax[None, :] * zy[:, None] ** self.ay[None, :]
        return np.asarray((self.sel.T @ mono.T).T)


_TABLES: dict[tuple, tuple[FRSCertificate, _WTable]] = {}


def _table(cert: FRSCertificate, rows) -> _WTable:
    key = (id(cert), len(rows), rows[-1])
    hit = _TABLES.get(key)
    if hit is None or hit[0] is not cert:
        if len(_TABLES) > 8:
            _TABLES.clear()
        _TABLES[key] = (cert, _WTable(cert, rows))
    return _TABLES[key][1]


@dataclass
class _Layout:
    degree: int
    rows3: list
    rowsK: list
    h_basis: list
    h_pos3: np.ndarray
    ops3: list
    opsK: list
    moments: np.ndarray


_LAYOUTS: dict[tuple, _Layout] = {}


def _layout(degree: int, w_degree: int, heading: bool = True) -> _Layout:
    """Row/operator layout; ``heading=False`` drops the heading variable from the
    per-point constraints (possible when ``w`` does not depend on it)."""
    two_l = max(degree, w_degree)
    two_l += two_l % 2
    key = (degree, two_l, heading)
    if key not in _LAYOUTS:
        vars3 = H_SPACE.names if heading else K_VARS
        rows3 = monomials(H_SPACE, two_l, vars3)
        rowsK = monomials(H_SPACE, two_l, K_VARS)
        h_basis = monomials(H_SPACE, degree, K_VARS)
        idx3 = {a: r for r, a in enumerate(rows3)}
        box3 = SemialgebraicSet.unit_box(H_SPACE, vars3)
        boxK = SemialgebraicSet.unit_box(H_SPACE, K_VARS)
        ops3 = [_multiplier_operator(H_SPACE, vars3, two_l, None)]
        ops3 += [_multiplier_operator(H_SPACE, vars3, two_l, g) for g in box3.generators]
        opsK = [_multiplier_operator(H_SPACE, K_VARS, two_l, None)]
        opsK += [_multiplier_operator(H_SPACE, K_VARS, two_l, g) for g in boxK.generators]
        mom = box_moments(H_SPACE, Box(K_VARS, (-1.0, -1.0), (1.0, 1.0)), degree).vector(h_basis)
        _LAYOUTS[key] = _Layout(degree, rows3, rowsK, h_basis, np.array([idx3[a] for a in h_basis]),
                                ops3, opsK, mom)
    return _LAYOUTS[key]


def _uses_heading(cert: FRSCertificate) -> bool:
    i = cert.space.index("th")
    return any(alpha[i] for alpha, _ in cert.w.items())


def build_problem(cert: FRSCertificate, obs: LocalObstacleSet, degree: int = H_DEGREE, delta: float = DELTA):
    """Assemble the intersection SDP; returns ``(problem, layout, n_point_rows)``."""
    lay = _layout(degree, cert.w.degree, _uses_heading(cert))
    pts = obs.frs_points
    N = pts.shape[0]
    m3, mK, nh = len(lay.rows3), len(lay.rowsK), len(lay.h_basis)
    tab = _table(cert, lay.rows3)
    Wc = tab.coefficients(pts) if N else np.zeros((0, m3))
    b_pts = -Wc
    b_pts[:, 0] += 1.0 - cert.margin - delta
    bK = np.zeros(mK)
    bK[0] = 1.0
    b = np.concatenate([b_pts.ravel(), bK])
    # B: +1 on each h coefficient's row in every constraint
    hposK = np.arange(nh)  # rowsK starts with the h basis (grlex, same variables)
    r_pts = (np.arange(N)[:, None] * m3 + lay.h_pos3[None, :]).ravel()
    c_pts = np.tile(np.arange(nh), N)
    r_all = np.concatenate([r_pts, N * m3 + hposK])
    c_all = np.concatenate([c_pts, np.arange(nh)])
    B = sp.csr_matrix((np.ones(r_all.size), (r_all, c_all)), shape=(N * m3 + mK, nh))
    blocks = []
    for p in range(N):
        grow = np.arange(p * m3, (p + 1) * m3)
        blocks += [SdpBlock(op, grow, None, f"p{p}/s{j}") for j, op in enumerate(lay.ops3)]
    growK = np.arange(N * m3, N * m3 + mK)
    blocks += [SdpBlock(op, growK, None, f"K/s{j}") for j, op in enumerate(lay.opsK)]
    problem = SdpProblem(b, -lay.moments, B, blocks)
    return problem, lay, N * m3


def intersect(
    cert: FRSCertificate,
    obs: LocalObstacleSet,
    degree: int = H_DEGREE,
    options: SdpOptions | None = None,
    delta: float = DELTA,
) -> SafeSetPoly:
    """Certified safe parameter set for the given obstacle points.

    Returns the conservative ``h = -1`` whenever the solver does not report
    an optimal solution.
    """
    t0 = time.perf_counter()
    if degree < 0 or degree % 1:
        raise ValueError("degree must be a non-negative integer")
    problem, lay, n_pt_rows = build_problem(cert, obs, degree, delta)
    opt = options or SdpOptions(tol=1e-7, max_iter=100, polish=False)
    sol = solve(problem, opt)
    N = len(obs)
    diag = {"status": sol.status, "iterations": sol.iterations, "points": N, "seconds": 0.0}
    if not sol.ok:
        out = SafeSetPoly.braking_only(cert.k, N, sol.status)
        diag["seconds"] = time.perf_counter() - t0
        out.diagnostics = diag
        return out
    x = sol.x
    res = problem.b - problem.B @ x - problem.apply_A(sol.X)
    m3 = len(lay.rows3)
    point_l1 = np.abs(res[:n_pt_rows]).reshape(N, m3).sum(axis=1) if N else np.zeros(0)
    shift = float(point_l1.max()) if N else 0.0
    h = Polynomial.from_coefficients(H_SPACE, lay.h_basis, x)
    if shift > 0:
        h = h - shift
    diag.update({
        "residual_shift": shift,
        "objective": float(lay.moments @ x),
        "seconds": time.perf_counter() - t0,
    })
    return SafeSetPoly(h, cert.k, N, diag, False)
