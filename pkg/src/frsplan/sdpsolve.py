"""Primal-dual interior-point solver for the SDPs produced by :mod:`frsplan.soscompile`.

The method is a homogeneous self-dual embedding with Nesterov-Todd scaling and
Mehrotra predictor-corrector steps. Equality rows are grouped into connected
components (rows linked through a shared PSD block); the Schur complement is
block diagonal over these groups and only the free variables couple them,
which are eliminated through a small dense system.

Blocks that share one :class:`~frsplan.soscompile.BlockOperator` are stored as
stacked ``(P, n, n)`` arrays so that the per-block linear algebra runs as
batched numpy calls. Row groups with identical structure (for example one
group per obstacle point) are factored together as a family.

Problem form::

    minimize    c^T x + sum_j <C_j, X_j>
    subject to  B x + sum_j A_j(X_j) = b,    X_j PSD,   x free

Dual::

    maximize    b^T y   subject to   B^T y = c,   S_j = C_j - A_j^*(y) PSD
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .soscompile import SdpProblem

log = logging.getLogger(__name__)

STATUSES = ("optimal", "infeasible-certificate", "unbounded-certificate", "max-iterations", "numerical-failure")

# operators (and row groups) whose dense size stays below this many entries
# use dense batched algebra
_FAMILY_DENSE_LIMIT = 1_000_000


@dataclass
class SdpOptions:
    tol: float = 1e-7
    max_iter: int = 200
    regularization: float = 1e-10
    rank_tol: float = 1e-10
    step_fraction: float = 0.98
    refine_steps: int = 1
    centering: str = "mehrotra"
    chunk_bytes: float = 1.5e8
    verbose: bool = False
    log_csv: str | None = None
    polish: bool = True
    polish_max_rows: int = 500


@dataclass
class SdpSolution:
    status: str
    x: np.ndarray
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    tau: float = 1.0
    kappa: float = 0.0
    dropped_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    history: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "gap": self.gap,
        }


# ---------------------------------------------------------------------------
# Schur complement pieces
# ---------------------------------------------------------------------------

def _buckets(op):
    """Rows of ``op`` grouped by entry count: list of (rows, I, J, V)."""
    if "buckets" in op._cache:
        return op._cache["buckets"]
    order = np.argsort(op.rows, kind="stable")
    rows, I, J, V = op.rows[order], op.i[order], op.j[order], op.half[order]
    counts = np.bincount(rows, minlength=op.m)
    starts = np.concatenate([[0], np.cumsum(counts)])
    out = []
    for k in np.unique(counts):
        if k == 0:
            continue
        rs = np.flatnonzero(counts == k)
        idx = starts[rs][:, None] + np.arange(k)[None, :]
        out.append((rs, I[idx], J[idx], V[idx]))
    op._cache["buckets"] = out
    return out


def _dense(op) -> np.ndarray:
    """Dense ``(m, n*n)`` copy of the operator matrix."""
    if "dense" not in op._cache:
        op._cache["dense"] = op.amat.toarray()
    return op._cache["dense"]


def _schur_block(op, W: np.ndarray, chunk_bytes: float, out: np.ndarray | None = None) -> np.ndarray:
    """``M[r, s] = <A_r, W A_s W>`` for one block operator.

    When ``out`` is given the contribution is added to it in place.
    """
    n, m = op.n, op.m
    if op.factor is not None:
        base, shifts = op.factor
        Mb = _schur_block(base, W, chunk_bytes)
        M = np.zeros((m, m)) if out is None else out
        for ia, ca in shifts:
            for ib, cb in shifts:
                M[np.ix_(ia, ib)] += (ca * cb) * Mb
        return M
    if m * n * n <= _FAMILY_DENSE_LIMIT:
        Mb = _schur_family(op, W[None])[0]
        if out is None:
            return Mb
        out += Mb
        return out
    M = np.zeros((m, m)) if out is None else out
    amat = op.amat
    step = max(1, int(chunk_bytes // (8 * n * n)))
    for rs, I, J, V in _buckets(op):
        for s in range(0, rs.size, step):
            sl = slice(s, s + step)
            P = W[I[sl]]                      # (nb, k, n) rows of W; W symmetric so = columns
            Q = V[sl][:, :, None] * W[J[sl]]  # (nb, k, n)
            Y = np.matmul(P.transpose(0, 2, 1), Q)  # (nb, n, n)
            contrib = amat @ np.ascontiguousarray(Y.reshape(Y.shape[0], n * n).T)
            contrib *= 2.0
            if out is None:
                M[:, rs[sl]] = contrib
            else:
                M[:, rs[sl]] += contrib
    return M


def _schur_family(op, W: np.ndarray) -> np.ndarray:
    """Batched ``M_f[r, s] = <A_r, W_f A_s W_f>`` for stacked ``W`` of shape (F, n, n)."""
    n, m = op.n, op.m
    A = _dense(op)
    Ad = A.reshape(1, m, n, n)
    Y = np.matmul(np.matmul(W[:, None], Ad), W[:, None])  # (F, m, n, n)
    return np.matmul(A[None], Y.reshape(W.shape[0], m, n * n).transpose(0, 2, 1))


class _Stack:
    """Blocks sharing one operator, stored as ``(P, n, n)`` arrays."""

    def __init__(self, op, block_ids, rows, C):
        self.op = op
        self.block_ids = np.asarray(block_ids, dtype=np.int64)
        self.rows = rows  # (P, m_op) global row of each local row
        self.n = op.n
        self.P = len(block_ids)
        self.C = C  # (P, n, n) or None


def _make_stacks(problem: SdpProblem):
    by_op: dict[int, list[int]] = {}
    for bi, blk in enumerate(problem.blocks):
        by_op.setdefault(id(blk.op), []).append(bi)
    stacks, where = [], [None] * len(problem.blocks)
    for ids in by_op.values():
        blks = [problem.blocks[i] for i in ids]
        op = blks[0].op
        rows = np.stack([blk.rows for blk in blks]) if op.m else np.zeros((len(ids), 0), dtype=np.int64)
        if any(blk.C is not None for blk in blks):
            C = np.stack([blk.C if blk.C is not None else np.zeros((op.n, op.n)) for blk in blks]).astype(float)
        else:
            C = None
        for p, bi in enumerate(ids):
            where[bi] = (len(stacks), p)
        stacks.append(_Stack(op, ids, rows, C))
    return stacks, where


class _Group:
    """Rows linked by shared blocks, with their blocks and free-variable columns."""

    def __init__(self, rows, block_ids, local_maps, cols, Bg):
        self.rows = rows
        self.block_ids = block_ids
        self.local_maps = local_maps  # per block: positions of the block's rows inside ``rows``
        self.cols = cols
        self.Bg = Bg
        self.keep = np.ones(rows.size, dtype=bool)
        self.identity = {bi: bool(np.array_equal(lm, np.arange(rows.size)))
                         for bi, lm in zip(block_ids, local_maps)}


def _make_groups(problem: SdpProblem, scale: np.ndarray) -> list[_Group]:
    m = problem.m
    nb = len(problem.blocks)
    # bipartite graph rows <-> blocks; its components are the row groups
    ri, bj = [], []
    touched = np.zeros(m, dtype=bool)
    for bi, blk in enumerate(problem.blocks):
        if blk.op.nnz:
            rows = blk.rows[np.unique(blk.op.rows)]
            touched[rows] = True
            ri.append(rows)
            bj.append(np.full(rows.size, m + bi))
    if not touched.all():
        bad = np.flatnonzero(~touched)[:5]
        raise ValueError(f"equality rows {bad.tolist()} involve no PSD block; not supported")
    ri = np.concatenate(ri) if ri else np.zeros(0, dtype=np.int64)
    bj = np.concatenate(bj) if bj else np.zeros(0, dtype=np.int64)
    graph = sp.coo_matrix((np.ones(ri.size), (ri, bj)), shape=(m + nb, m + nb))
    _, labels = connected_components(graph, directed=False)
    roots = labels[:m]
    order = np.argsort(roots, kind="stable")
    bounds = np.flatnonzero(np.diff(roots[order])) + 1
    row_sets = np.split(order, bounds) if m else []
    blocks_of: dict[int, list[int]] = {}
    for bi, blk in enumerate(problem.blocks):
        if blk.rows.size:
            blocks_of.setdefault(int(roots[blk.rows[0]]), []).append(bi)
    groups = []
    Bcsr = problem.B.tocsr()
    pos = -np.ones(m, dtype=np.int64)
    for rows in row_sets:
        rows = np.sort(rows)
        pos[rows] = np.arange(rows.size)
        bids = blocks_of.get(int(roots[rows[0]]), [])
        maps = [pos[problem.blocks[bi].rows] for bi in bids]
        sub = Bcsr[rows]
        cols = np.unique(sub.indices)
        Bg = sub[:, cols].toarray() * scale[rows][:, None] if cols.size else np.zeros((rows.size, 0))
        groups.append(_Group(rows, bids, maps, cols, Bg))
    return groups


def _row_scaling(problem: SdpProblem) -> np.ndarray:
    sq = np.zeros(problem.m)
    for blk in problem.blocks:
        op = blk.op
        if "rownorm2" not in op._cache:
            # Frobenius norm^2 of A_r: off-diagonal pairs count twice
            w = np.where(op.i == op.j, (2 * op.half) ** 2, 2 * op.half ** 2)
            op._cache["rownorm2"] = np.bincount(op.rows, weights=w, minlength=op.m)
        sq[blk.rows] += op._cache["rownorm2"]
    B = problem.B.tocsr()
    sq += np.asarray(B.multiply(B).sum(axis=1)).ravel()
    norms = np.sqrt(sq)
    norms[norms == 0] = 1.0
    return 1.0 / norms


def _rows_disjoint(op) -> bool:
    """True when every row of ``op`` is nonempty and no two rows share an entry.

    Such rows are linearly independent, so a group containing a block with this
    property over all of its rows needs no rank test.
    """
    if "disjoint" not in op._cache:
        pairs = op.i.astype(np.int64) * op.n + op.j
        ok = np.unique(pairs).size == pairs.size and np.unique(op.rows).size == op.m
        op._cache["disjoint"] = bool(ok)
    return op._cache["disjoint"]


def _rank_reduce(problem: SdpProblem, groups: list[_Group], scale: np.ndarray, rank_tol: float):
    """Drop linearly dependent rows (pivoted QR of the row Gram matrix)."""
    dropped = []
    for g in groups:
        if any(lm.size == g.rows.size and _rows_disjoint(problem.blocks[bi].op)
               for bi, lm in zip(g.block_ids, g.local_maps)):
            continue
        G = g.Bg @ g.Bg.T
        for bi, lm in zip(g.block_ids, g.local_maps):
            amat = problem.blocks[bi].op.amat
            AA = (amat @ amat.T).toarray()
            d = scale[g.rows][lm]
            G[np.ix_(lm, lm)] += AA * d[:, None] * d[None, :]
        try:
            L = np.linalg.cholesky(G)
            piv = np.diag(L) ** 2
            if piv.min() > rank_tol * piv.max():
                continue
        except np.linalg.LinAlgError:
            pass
        _, R, perm = sla.qr(G, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > rank_tol * diag[0])) if diag.size else 0
        keep = np.zeros(g.rows.size, dtype=bool)
        keep[perm[:rank]] = True
        g.keep = keep
        dropped.append(g.rows[~keep])
    return np.concatenate(dropped) if dropped else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# factorization units: single groups and batched families
# ---------------------------------------------------------------------------

class _Single:
    def __init__(self, g: _Group, where):
        self.g = g
        self.blocks = [(where[bi][0], where[bi][1], lm, g.identity[bi]) for bi, lm in zip(g.block_ids, g.local_maps)]

    def factor(self, stacks, Ws, D, opt, Sf):
        g = self.g
        M = np.zeros((g.rows.size, g.rows.size))
        for si, pi, lm, ident in self.blocks:
            op = stacks[si].op
            if ident:
                _schur_block(op, Ws[si][pi], opt.chunk_bytes, out=M)
            else:
                M[np.ix_(lm, lm)] += _schur_block(op, Ws[si][pi], opt.chunk_bytes)
        d = D[g.rows]
        M *= d[:, None]
        M *= d[None, :]
        k = g.keep
        Mk = M if k.all() else M[np.ix_(k, k)]
        Mk[np.diag_indices_from(Mk)] += opt.regularization
        self.fac = _cholesky_retry(Mk)
        Bk = g.Bg[k]
        self.KB = sla.cho_solve(self.fac, Bk) if Bk.shape[1] else Bk
        if Bk.shape[1]:
            Sf[np.ix_(g.cols, g.cols)] += Bk.T @ self.KB

    def solve_h(self, h, t):
        g = self.g
        hk = h[g.rows][g.keep]
        self.mh = sla.cho_solve(self.fac, hk)
        if self.KB.shape[1]:
            t[g.cols] += self.KB.T @ hk

    def finish(self, dx, dy):
        g = self.g
        val = self.mh - (self.KB @ dx[g.cols] if self.KB.shape[1] else 0.0)
        if g.keep.all():
            dy[g.rows] = val
        else:
            tmp = np.zeros(g.rows.size)
            tmp[g.keep] = val
            dy[g.rows] = tmp


class _Family:
    """Groups with identical structure, factored with batched dense algebra."""

    def __init__(self, members: list[_Group], where):
        g0 = members[0]
        self.rows = np.stack([g.rows for g in members])  # (F, m)
        self.cols = g0.cols
        self.Bg = np.stack([g.Bg for g in members])  # (F, m, nc)
        self.blocks = []
        for j, (bi, lm) in enumerate(zip(g0.block_ids, g0.local_maps)):
            si = where[bi][0]
            pis = np.array([where[g.block_ids[j]][1] for g in members])
            self.blocks.append((si, pis, lm, g0.identity[bi]))

    def factor(self, stacks, Ws, D, opt, Sf):
        F, m = self.rows.shape
        M = np.zeros((F, m, m))
        for si, pis, lm, ident in self.blocks:
            Mb = _schur_family(stacks[si].op, Ws[si][pis])
            if ident:
                M += Mb
            else:
                M[:, lm[:, None], lm[None, :]] += Mb
        d = D[self.rows]
        M *= d[:, :, None]
        M *= d[:, None, :]
        idx = np.arange(m)
        M[:, idx, idx] += opt.regularization
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            L = np.stack([np.tril(_cholesky_retry(Mf)[0]) for Mf in M])
        self.Linv = np.linalg.inv(L)
        if self.cols.size:
            self.KB = self._apply_inv(self.Bg)
            Sf[np.ix_(self.cols, self.cols)] += np.einsum("fjc,fjd->cd", self.Bg, self.KB)

    def _apply_inv(self, R):
        """M^{-1} R for stacked right-hand sides R of shape (F, m) or (F, m, k)."""
        vec = R.ndim == 2
        if vec:
            R = R[:, :, None]
        Z = np.matmul(self.Linv, R)
        out = np.matmul(self.Linv.transpose(0, 2, 1), Z)
        return out[:, :, 0] if vec else out

    def solve_h(self, h, t):
        hk = h[self.rows]
        self.mh = self._apply_inv(hk)
        if self.cols.size:
            t[self.cols] += np.einsum("fjc,fj->c", self.KB, hk)

    def finish(self, dx, dy):
        val = self.mh
        if self.cols.size:
            val = val - np.einsum("fjc,c->fj", self.KB, dx[self.cols])
        dy[self.rows] = val


def _make_units(groups: list[_Group], where) -> list:
    fams: dict[tuple, list[_Group]] = {}
    units = []
    for g in groups:
        if not g.keep.all():
            units.append(_Single(g, where))
            continue
        ops = tuple(where[bi][0] for bi in g.block_ids)
        key = (ops, g.rows.size, tuple(lm.tobytes() for lm in g.local_maps), g.cols.tobytes())
        fams.setdefault(key, []).append(g)
    for members in fams.values():
        m = members[0].rows.size
        if len(members) > 1 and m * m <= _FAMILY_DENSE_LIMIT:
            units.append(_Family(members, where))
        else:
            units.extend(_Single(g, where) for g in members)
    return units


# ---------------------------------------------------------------------------
# NT scaling (batched over stacks)
# ---------------------------------------------------------------------------

def _sym(A):
    return 0.5 * (A + A.transpose(0, 2, 1))


def _diag_stack(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1]
    out = np.zeros(v.shape + (n,))
    idx = np.arange(n)
    out[:, idx, idx] = v
    return out


class _Scaling:
    __slots__ = ("R", "Rinv", "lam", "W")

    def __init__(self, X, S):
        LX = np.linalg.cholesky(X)
        LS = np.linalg.cholesky(S)
        _, sig, Vt = np.linalg.svd(np.matmul(LS.transpose(0, 2, 1), LX))
        V = Vt.transpose(0, 2, 1)
        isq = 1.0 / np.sqrt(sig)
        self.R = np.matmul(LX, V) * isq[:, None, :]
        # R^{-1} = diag(sqrt(sig)) V^T LX^{-1}
        self.Rinv = np.sqrt(sig)[:, :, None] * np.matmul(Vt, np.linalg.inv(LX))
        self.lam = sig
        self.W = np.matmul(self.R, self.R.transpose(0, 2, 1))


def _max_step(lam, dscaled) -> float:
    """Largest alpha with diag(lam) + alpha * dscaled PSD for every stacked block."""
    isq = 1.0 / np.sqrt(lam)
    Z = isq[:, :, None] * dscaled * isq[:, None, :]
    ev = float(np.linalg.eigvalsh(_sym(Z))[:, 0].min())
    return np.inf if ev >= 0 else -1.0 / ev


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def solve(problem: SdpProblem, options: SdpOptions | None = None) -> SdpSolution:
    """Solve ``problem``; see :class:`SdpSolution` for the returned fields."""
    opt = options or SdpOptions()
    stacks, where = _make_stacks(problem)
    ns = len(stacks)
    nu = sum(blk.n for blk in problem.blocks)
    D = _row_scaling(problem)
    b = problem.b * D
    c = problem.c.copy()
    Bs = problem.B.multiply(D[:, None]).tocsr()
    BsT = Bs.T.tocsr()
    Cs = [st.C for st in stacks]
    groups = _make_groups(problem, D)
    dropped = _rank_reduce(problem, groups, D, opt.rank_tol)
    units = _make_units(groups, where)
    active = np.ones(problem.m, dtype=bool)
    active[dropped] = False
    nfree = problem.n_free
    m = problem.m

    def A_of(Xs):
        out = np.zeros(m)
        for st, Xk in zip(stacks, Xs):
            if st.op.m == 0:
                continue
            vals = st.op.amat @ Xk.reshape(st.P, -1).T  # (m_op, P)
            out += np.bincount(st.rows.ravel(), weights=vals.T.ravel(), minlength=m)
        return D * out

    def At_of(y):
        yd = D * y
        out = []
        for st in stacks:
            if st.op.m == 0:
                out.append(np.zeros((st.P, st.n, st.n)))
                continue
            Y = np.ascontiguousarray(yd[st.rows].T)  # (m_op, P)
            out.append(np.ascontiguousarray((st.op.amat.T @ Y).T).reshape(st.P, st.n, st.n))
        return out

    def cdot(Ms, Ns):
        return sum(float(np.sum(Cm * N)) for Cm, N in zip(Ms, Ns) if Cm is not None)

    x = np.zeros(nfree)
    y = np.zeros(m)
    X = [np.broadcast_to(np.eye(st.n), (st.P, st.n, st.n)).copy() for st in stacks]
    S = [Xk.copy() for Xk in X]
    tau, kappa = 1.0, 1.0
    bnorm = 1.0 + np.max(np.abs(problem.b), initial=0.0)
    cnorm = 1.0 + max([np.max(np.abs(c), initial=0.0)] + [np.max(np.abs(C)) for C in Cs if C is not None])
    history = []
    t_start = time.perf_counter()
    status = "max-iterations"
    it = 0
    stall = 0
    best = np.inf

    while True:
        AX = A_of(X)
        Aty = At_of(y)
        F1 = Bs @ x + AX - b * tau
        F1[~active] = 0.0
        F2 = -(BsT @ y) + c * tau
        F3 = [-(Aty[s]) - S[s] + (Cs[s] * tau if Cs[s] is not None else 0.0) for s in range(ns)]
        pobj_raw = float(c @ x) + cdot(Cs, X)
        dobj_raw = float(b @ y)
        F4 = dobj_raw - pobj_raw - kappa
        mu = (sum(float(np.sum(Xk * Sk)) for Xk, Sk in zip(X, S)) + tau * kappa) / (nu + 1)

        # unscaled residual measures
        pres = np.max(np.abs(F1 / D), initial=0.0) / tau / bnorm
        dres = max([np.max(np.abs(F2), initial=0.0)] + [np.max(np.abs(f)) for f in F3 if np.size(f)]) / tau / cnorm
        pobj = pobj_raw / tau + problem.c0
        dobj = dobj_raw / tau + problem.c0
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        rec = {"iter": it, "seconds": round(time.perf_counter() - t_start, 3), "pres": pres, "dres": dres, "gap": gap,
               "pobj": pobj, "dobj": dobj, "mu": mu, "tau": tau, "kappa": kappa}
        history.append(rec)
        if opt.verbose:
            log.info("it %3d t %.1f pres %.2e dres %.2e gap %.2e pobj %.8e tau %.2e kappa %.2e",
                     it, rec["seconds"], pres, dres, gap, pobj, tau, kappa)
        if pres <= opt.tol and dres <= opt.tol and gap <= opt.tol:
            status = "optimal"
            break
        # infeasibility certificates
        if dobj_raw > 0:
            ray = max([np.max(np.abs(BsT @ y), initial=0.0)] + [np.max(np.abs(Aty[s] + S[s])) for s in range(ns)]) / dobj_raw
            if ray <= opt.tol * cnorm and tau <= 1e-3 * max(1.0, kappa):
                status = "infeasible-certificate"
                break
        if pobj_raw < 0:
            ray = np.max(np.abs(Bs @ x + AX), initial=0.0) / (-pobj_raw)
            if ray <= opt.tol * bnorm and tau <= 1e-3 * max(1.0, kappa):
                status = "unbounded-certificate"
                break
        if it >= opt.max_iter:
            status = "max-iterations"
            break
        merit = max(pres, dres, gap)
        if merit < best * 0.95:
            best, stall = merit, 0
        else:
            stall += 1
        if stall >= 15:
            status = "max-iterations"
            break
        it += 1

        try:
            scal = [_Scaling(X[s], S[s]) for s in range(ns)]
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            break
        Ws = [sc.W for sc in scal]
        Wc = [np.matmul(np.matmul(Ws[s], Cs[s]), Ws[s]) if Cs[s] is not None else None for s in range(ns)]
        if any(w is not None for w in Wc):
            AWCW = A_of([w if w is not None else np.zeros((st.P, st.n, st.n)) for w, st in zip(Wc, stacks)])
        else:
            AWCW = np.zeros(m)
        CWC = cdot(Cs, Wc)

        # factor the Schur complement
        try:
            Sf = np.zeros((nfree, nfree))
            for u in units:
                u.factor(stacks, Ws, D, opt, Sf)
            if nfree:
                Sf[np.diag_indices_from(Sf)] += opt.regularization
                Sfac = _cholesky_retry(Sf)
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            break

        def saddle(h, s_rhs):
            """Solve [M B; B^T 0][dy; dx] = [h; s]."""
            t = -s_rhs.copy()
            for u in units:
                u.solve_h(h, t)
            dx = sla.cho_solve(Sfac, t) if nfree else np.zeros(0)
            dy = np.zeros(m)
            for u in units:
                u.finish(dx, dy)
            return dy, dx

        def wmw(s, A):
            return np.matmul(np.matmul(Ws[s], A), Ws[s])

        def direction(eta, rc, r6):
            r1 = -eta * F1
            r2 = -eta * F2
            r3 = [-eta * f for f in F3]
            r4 = -eta * F4
            RX = []
            for s in range(ns):
                lam = scal[s].lam
                T = 2.0 * rc[s] / (lam[:, :, None] + lam[:, None, :])
                RX.append(np.matmul(np.matmul(scal[s].R, T), scal[s].R.transpose(0, 2, 1)))
            G = [RX[s] + wmw(s, r3[s]) for s in range(ns)]
            h0 = r1 - A_of(G)
            h1 = AWCW + b
            dy0, dx0 = saddle(h0, -r2)
            dy1, dx1 = saddle(h1, c)
            c0p = cdot(Cs, G)
            a0 = b @ dy0 - c @ dx0 - c0p - AWCW @ dy0
            a1 = b @ dy1 - c @ dx1 - AWCW @ dy1 + CWC
            dtau = (r4 - a0 + r6 / tau) / (a1 + kappa / tau)
            dy = dy0 + dtau * dy1
            dx = dx0 + dtau * dx1
            Atdy = At_of(dy)
            dS, dX = [], []
            for s in range(ns):
                Cj = Cs[s] * dtau if Cs[s] is not None else 0.0
                dSj = -Atdy[s] + Cj - r3[s]
                dXj = RX[s] - wmw(s, dSj)
                dS.append(_sym(dSj))
                dX.append(_sym(dXj))
            # iterative refinement of the primal equation; keeps the other
            # linearized equations intact because B^T ddy = 0
            for _ in range(opt.refine_steps):
                e = r1 - (Bs @ dx + A_of(dX) - b * dtau)
                e[~active] = 0.0
                if not np.any(e):
                    break
                ddy, ddx = saddle(e, np.zeros(nfree))
                dy = dy + ddy
                dx = dx + ddx
                Atd = At_of(ddy)
                for s in range(ns):
                    dX[s] = dX[s] + _sym(wmw(s, Atd[s]))
                    dS[s] = dS[s] - Atd[s]
            dkappa = (r6 - kappa * dtau) / tau
            return dx, dX, dy, dS, dtau, dkappa

        def step_length(dX, dS, dtau, dkappa):
            alpha = np.inf
            sx, ss = [], []
            for s in range(ns):
                Ri, R = scal[s].Rinv, scal[s].R
                dxs = np.matmul(np.matmul(Ri, dX[s]), Ri.transpose(0, 2, 1))
                dss = np.matmul(np.matmul(R.transpose(0, 2, 1), dS[s]), R)
                sx.append(dxs)
                ss.append(dss)
                alpha = min(alpha, _max_step(scal[s].lam, dxs), _max_step(scal[s].lam, dss))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha, sx, ss

        # predictor
        rc_aff = [-_diag_stack(scal[s].lam ** 2) for s in range(ns)]
        dxa, dXa, dya, dSa, dta, dka = direction(1.0, rc_aff, -tau * kappa)
        amax, sxa, ssa = step_length(dXa, dSa, dta, dka)
        alpha_aff = min(1.0, amax)
        if opt.centering == "mehrotra":
            gap_aff = sum(float(np.sum((X[s] + alpha_aff * dXa[s]) * (S[s] + alpha_aff * dSa[s]))) for s in range(ns))
            gap_aff += (tau + alpha_aff * dta) * (kappa + alpha_aff * dka)
            sigma = min(1.0, max(0.0, (gap_aff / ((nu + 1) * mu)) ** 3))
        else:
            sigma = min(1.0, max(0.0, (1.0 - alpha_aff) ** 3))
        # corrector
        rc = []
        for s in range(ns):
            lam = scal[s].lam
            Pm = np.matmul(sxa[s], ssa[s])
            rc.append(_diag_stack(sigma * mu - lam ** 2) - _sym(Pm))
        r6 = sigma * mu - tau * kappa - dta * dka
        dx, dX, dy, dS, dtau, dkappa = direction(1.0 - sigma, rc, r6)
        amax, _, _ = step_length(dX, dS, dtau, dkappa)
        alpha = min(1.0, opt.step_fraction * amax)

        x = x + alpha * dx
        y = y + alpha * dy
        X = [X[s] + alpha * dX[s] for s in range(ns)]
        S = [S[s] + alpha * dS[s] for s in range(ns)]
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.isfinite(tau) and tau > 0 and kappa > 0):
            status = "numerical-failure"
            break

    if opt.log_csv:
        write_history(history, opt.log_csv)
    last = history[-1]
    Xb = [X[si][pi] for si, pi in where]
    Sb = [S[si][pi] for si, pi in where]
    if status in ("infeasible-certificate", "unbounded-certificate"):
        # return the improving ray, normalized
        scale_ray = 1.0 / max(abs(float(b @ y)), abs(float(c @ x) + cdot(Cs, X)), 1e-300)
        return SdpSolution(status, x * scale_ray, [Xj * scale_ray for Xj in Xb], D * y * scale_ray,
                           [Sj * scale_ray for Sj in Sb], last["pobj"], last["dobj"], last["pres"], last["dres"],
                           last["gap"], it, tau, kappa, dropped, history)
    out = SdpSolution(status, x / tau, [Xj / tau for Xj in Xb], D * y / tau, [Sj / tau for Sj in Sb],
                      last["pobj"], last["dobj"], last["pres"], last["dres"], last["gap"], it, tau, kappa,
                      dropped, history)
    if status == "optimal" and opt.polish and problem.m <= opt.polish_max_rows and not dropped.size:
        _polish(problem, out)
    return out


def _polish(problem: SdpProblem, sol: SdpSolution, steps: int = 3) -> None:
    """Refine an optimal interior-point solution on its optimal faces (in place).

    Interior-point iterates for SDP approach the solution with cross terms of
    order ``sqrt(mu)`` between the range and null spaces of ``X``. Writing
    ``X = Q1 W Q1^T`` with ``Q1`` spanning the dominant eigenspace, a few
    Gauss-Newton steps on ``A(X) + Bx = b``, ``B^T y = c`` and
    ``(C - A^* y) Q1 = 0`` over ``(W, Q1, x, y)`` remove them. The refinement
    is kept only if it lowers the combined residual and leaves ``X`` and
    ``S`` semidefinite.
    """
    blocks = problem.blocks
    Bd = problem.B.toarray() if problem.n_free else np.zeros((problem.m, 0))
    c = np.asarray(problem.c, dtype=float)
    Cs = [blk.C if blk.C is not None else np.zeros((blk.n, blk.n)) for blk in blocks]

    def split(X):
        w, V = np.linalg.eigh(0.5 * (X + X.T))
        keep = w > 1e-6 * max(1.0, float(w.max(initial=0.0)))
        return V[:, keep], V[:, ~keep], np.diag(w[keep])

    def residual(Q1s, Ws, x, y):
        Xs = [Q @ W @ Q.T for Q, W in zip(Q1s, Ws)]
        r1 = problem.b - problem.apply_A(Xs) - (Bd @ x if Bd.size else 0.0)
        r2 = c - Bd.T @ y if Bd.size else np.zeros(0)
        Aty = problem.apply_At(y)
        r3 = [((C - A) @ Q).ravel() for C, A, Q in zip(Cs, Aty, Q1s)]
        return np.concatenate([r1, r2] + r3)

    parts = [split(X) for X in sol.X]
    Q1s = [p_[0] for p_ in parts]
    Q2s = [p_[1] for p_ in parts]
    Ws = [p_[2] for p_ in parts]
    x, y = sol.x.copy(), sol.y.copy()
    nW = [W.shape[0] * (W.shape[0] + 1) // 2 for W in Ws]
    nZ = [Q2.shape[1] * Q1.shape[1] for Q1, Q2 in zip(Q1s, Q2s)]
    n_unknown = sum(nW) + sum(nZ) + x.size + y.size
    if n_unknown > 600:
        return

    def unpack(u):
        pos, Wn, Qn = 0, [], []
        for W, Q1, Q2, a, bz in zip(Ws, Q1s, Q2s, nW, nZ):
            r = W.shape[0]
            iu = np.triu_indices(r)
            dW = np.zeros((r, r))
            dW[iu] = u[pos:pos + a]
            dW = dW + np.triu(dW, 1).T
            pos += a
            Z = u[pos:pos + bz].reshape(Q2.shape[1], r)
            pos += bz
            Wn.append(W + dW)
            Qn.append(Q1 + Q2 @ Z)
        xn = x + u[pos:pos + x.size]
        pos += x.size
        return Qn, Wn, xn, y + u[pos:]

    def merit(Qs, Wl, xv, yv):
        return float(np.linalg.norm(residual(Qs, Wl, xv, yv)))

    start = merit(Q1s, Ws, x, y)
    best = start
    h = 1e-4
    for _ in range(steps):
        F0 = residual(Q1s, Ws, x, y)
        J = np.empty((F0.size, n_unknown))
        e = np.zeros(n_unknown)
        for k in range(n_unknown):
            e[k] = h
            fp = residual(*unpack(e))
            e[k] = -h
            fm = residual(*unpack(e))
            e[k] = 0.0
            J[:, k] = (fp - fm) / (2 * h)
        du = np.linalg.lstsq(J, -F0, rcond=None)[0]
        Qn, Wn, xn, yn = unpack(du)
        val = merit(Qn, Wn, xn, yn)
        if not val < best:
            break
        best = val
        # re-orthonormalize the face bases
        Q1s, Ws, Q2s = [], [], []
        for Q, W in zip(Qn, Wn):
            Qo, R = np.linalg.qr(Q)
            W = R @ W @ R.T
            full = np.linalg.qr(np.column_stack([Qo, np.eye(Q.shape[0])]))[0]
            Q1s.append(Qo)
            Q2s.append(full[:, Qo.shape[1]:Q.shape[0]])
            Ws.append(0.5 * (W + W.T))
        x, y = xn, yn
    if not best < start:
        return
    Xn = [Q @ W @ Q.T for Q, W in zip(Q1s, Ws)]
    Sn = [C - A for C, A in zip(Cs, problem.apply_At(y))]
    for M in Xn + Sn:
        if M.size and np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-8 * max(1.0, np.abs(M).max()):
            return
    sol.X, sol.S, sol.x, sol.y = Xn, Sn, x, y
    sol.primal_objective = problem.objective(x, Xn)
    sol.dual_objective = float(problem.b @ y) + problem.c0


def _cholesky_retry(M: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(np.diag(M)))))
    for extra in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            if extra:
                M = M.copy()
                M[np.diag_indices_from(M)] += extra * scale
            return sla.cho_factor(M, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("Schur complement not positive definite after regularization")


def write_history(history: list[dict], path: str | Path):
    """Write per-iteration residuals as CSV."""
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        wr.writeheader()
        wr.writerows(history)
