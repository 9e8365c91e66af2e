"""Compile sums-of-squares membership constraints into standard-form SDP data.

A constraint ``p in Q_2l(h_1, ..., h_m)`` asks for SOS multipliers with
``p = s_0 + sum_i s_i h_i`` and ``deg(s_i h_i) <= 2l``. Every multiplier is
parameterized by a Gram matrix over a monomial basis, and coefficient matching
produces one linear equality per monomial of degree ``<= 2l`` in the set's
variables. Coefficients of decision polynomials are free SDP variables shared
by all constraints.

Standard form produced here::

    minimize    c^T x + sum_j <C_j, X_j> (+ c0)
    subject to  B x + sum_j A_j(X_j) = b,    X_j PSD,   x free

Each block's linear map is a :class:`BlockOperator`; blocks built from the same
basis and generator share one operator object.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .polyalg import Box, Exponent, MomentVector, Polynomial, VariableSpace, monomials


class DegreeError(ValueError):
    """A polynomial or multiplier product does not fit the degree bound 2l."""


class CertificateRejected(RuntimeError):
    """Recovered certificate residual exceeds the acceptance threshold."""


# ---------------------------------------------------------------------------
# SDP data
# ---------------------------------------------------------------------------

class BlockOperator:
    """Linear map ``X -> (<A_r, X>)_r`` for one symmetric block of size ``n``.

    Stored as half-pair entries ``(row, i, j, v)`` with ``i <= j`` and
    ``A_r = sum v (E_ij + E_ji)``; diagonal entries carry half the matrix value.

    Parameters
    ----------
    n : block dimension
    m : number of local rows
    rows, i, j : integer arrays of equal length
    values : symmetric-matrix entry values ``A_r[i, j]``
    """

    def __init__(self, n: int, m: int, rows, i, j, values, key=None):
        rows = np.asarray(rows, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if rows.size and (rows.min() < 0 or rows.max() >= m or hi.max() >= n or lo.min() < 0):
            raise ValueError("block operator entry out of range")
        # merge duplicates
        flat = (rows * n + lo) * n + hi
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.zeros(uniq.size)
        np.add.at(vals, inv, values)
        keep = vals != 0.0
        uniq, vals = uniq[keep], vals[keep]
        self.n = int(n)
        self.m = int(m)
        self.rows = uniq // (n * n)
        self.i = (uniq // n) % n
        self.j = uniq % n
        self.half = np.where(self.i == self.j, 0.5 * vals, vals)
        self.key = key
        self._cache: dict = {}
        # optional (base_operator, [(row_index_array, coefficient), ...]) with
        # A_r = sum_k coefficient_k * base.A_rho for rows r = row_index_k[rho]
        self.factor = None

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    def matrix_values(self) -> np.ndarray:
        """Symmetric-matrix entry values ``A_r[i, j]`` (undoing the diagonal halving)."""
        return np.where(self.i == self.j, 2.0 * self.half, self.half)

    @property
    def amat(self) -> sp.csr_matrix:
        """Sparse ``m x n^2`` matrix with ``amat @ vec(X) = A(X)`` for symmetric X."""
        if "amat" not in self._cache:
            n = self.n
            r = np.concatenate([self.rows, self.rows])
            c = np.concatenate([self.i * n + self.j, self.j * n + self.i])
            v = np.concatenate([self.half, self.half])
            self._cache["amat"] = sp.csr_matrix((v, (r, c)), shape=(self.m, n * n))
        return self._cache["amat"]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.amat @ X.reshape(-1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return (self.amat.T @ y).reshape(self.n, self.n)


@dataclass
class SdpBlock:
    op: BlockOperator
    rows: np.ndarray  # global row index of each local row
    C: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        if self.rows.size != self.op.m:
            raise ValueError("block row map length differs from operator rows")
        if self.C is not None:
            self.C = np.asarray(self.C, dtype=float)
            if self.C.shape != (self.op.n, self.op.n):
                raise ValueError("objective block has wrong shape")
            self.C = 0.5 * (self.C + self.C.T)

    @property
    def n(self) -> int:
        return self.op.n


@dataclass
class SdpProblem:
    """Standard-form SDP with free variables (see module docstring)."""

    b: np.ndarray
    c: np.ndarray
    B: sp.csr_matrix
    blocks: list[SdpBlock]
    c0: float = 0.0
    row_labels: list[str] | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.B = sp.csr_matrix(self.B)
        if self.B.shape != (self.b.size, self.c.size):
            raise ValueError(f"B has shape {self.B.shape}, expected {(self.b.size, self.c.size)}")
        for blk in self.blocks:
            if blk.rows.size and (blk.rows.min() < 0 or blk.rows.max() >= self.m):
                raise ValueError("block references a row outside the problem")

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def n_free(self) -> int:
        return self.c.size

    @property
    def block_sizes(self) -> list[int]:
        return [blk.n for blk in self.blocks]

    def apply_A(self, Xs: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, X in zip(self.blocks, Xs):
            np.add.at(out, blk.rows, blk.op.apply(X))
        return out

    def apply_At(self, y: np.ndarray) -> list[np.ndarray]:
        return [blk.op.adjoint(y[blk.rows]) for blk in self.blocks]

    def objective(self, x: np.ndarray, Xs: Sequence[np.ndarray]) -> float:
        val = float(self.c @ x) + self.c0
        for blk, X in zip(self.blocks, Xs):
            if blk.C is not None:
                val += float(np.sum(blk.C * X))
        return val

    # -- sparse text format -------------------------------------------------
    def to_text(self) -> str:
        """Serialize to the line-oriented sparse format read by :meth:`from_text`.

        Layout (all indices 0-based; ``A``/``C`` entries are symmetric-matrix
        values with ``i <= j``)::

            frsplan-sdp 1
            m <m> free <n_free> blocks <count>
            sizes <n_1> ... <n_k>
            c0 <value>
            b <nnz>      then lines: row value
            c <nnz>      then lines: col value
            B <nnz>      then lines: row col value
            A <nnz>      then lines: block row i j value
            C <nnz>      then lines: block i j value
            end
        """
        out = io.StringIO()
        w = out.write
        w("frsplan-sdp 1\n")
        w(f"m {self.m} free {self.n_free} blocks {len(self.blocks)}\n")
        w("sizes " + " ".join(str(s) for s in self.block_sizes) + "\n")
        w(f"c0 {self.c0!r}\n")
        nzb = np.flatnonzero(self.b)
        w(f"b {nzb.size}\n")
        for r in nzb:
            w(f"{r} {self.b[r]!r}\n")
        nzc = np.flatnonzero(self.c)
        w(f"c {nzc.size}\n")
        for r in nzc:
            w(f"{r} {self.c[r]!r}\n")
        Bc = self.B.tocoo()
        order = np.lexsort((Bc.col, Bc.row))
        w(f"B {Bc.nnz}\n")
        for k in order:
            w(f"{Bc.row[k]} {Bc.col[k]} {float(Bc.data[k])!r}\n")
        total = sum(blk.op.nnz for blk in self.blocks)
        w(f"A {total}\n")
        for bi, blk in enumerate(self.blocks):
            op = blk.op
            vals = op.matrix_values()
            for r, i, j, v in zip(blk.rows[op.rows], op.i, op.j, vals):
                w(f"{bi} {r} {i} {j} {float(v)!r}\n")
        centries = []
        for bi, blk in enumerate(self.blocks):
            if blk.C is not None:
                ii, jj = np.nonzero(np.triu(blk.C))
                centries += [(bi, i, j, blk.C[i, j]) for i, j in zip(ii, jj)]
        w(f"C {len(centries)}\n")
        for bi, i, j, v in centries:
            w(f"{bi} {i} {j} {float(v)!r}\n")
        w("end\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SdpProblem":
        lines = iter(text.splitlines())

        def header(expected: str) -> list[str]:
            parts = next(lines).split()
            if not parts or parts[0] != expected:
                raise ValueError(f"expected section {expected!r}, got {parts[:1]}")
            return parts

        if next(lines).split() != ["frsplan-sdp", "1"]:
            raise ValueError("not an frsplan-sdp v1 file")
        parts = header("m")
        m, nfree, nblocks = int(parts[1]), int(parts[3]), int(parts[5])
        sizes = [int(s) for s in header("sizes")[1:]]
        if len(sizes) != nblocks:
            raise ValueError("block count mismatch")
        c0 = float(header("c0")[1])
        b = np.zeros(m)
        for _ in range(int(header("b")[1])):
            r, v = next(lines).split()
            b[int(r)] = float(v)
        c = np.zeros(nfree)
        for _ in range(int(header("c")[1])):
            r, v = next(lines).split()
            c[int(r)] = float(v)
        br, bc, bv = [], [], []
        for _ in range(int(header("B")[1])):
            r, col, v = next(lines).split()
            br.append(int(r)); bc.append(int(col)); bv.append(float(v))
        B = sp.csr_matrix((bv, (br, bc)), shape=(m, nfree))
        ent: list[list] = [[] for _ in range(nblocks)]
        for _ in range(int(header("A")[1])):
            bi, r, i, j, v = next(lines).split()
            ent[int(bi)].append((int(r), int(i), int(j), float(v)))
        Cs: list[np.ndarray | None] = [None] * nblocks
        for _ in range(int(header("C")[1])):
            bi, i, j, v = next(lines).split()
            bi, i, j = int(bi), int(i), int(j)
            if Cs[bi] is None:
                Cs[bi] = np.zeros((sizes[bi], sizes[bi]))
            Cs[bi][i, j] = Cs[bi][j, i] = float(v)
        if next(lines).strip() != "end":
            raise ValueError("missing end marker")
        blocks = []
        for bi, n in enumerate(sizes):
            arr = np.array(ent[bi], dtype=float).reshape(-1, 4)
            grows = arr[:, 0].astype(np.int64)
            uniq, local = np.unique(grows, return_inverse=True)
            op = BlockOperator(n, max(uniq.size, 0), local, arr[:, 1], arr[:, 2], arr[:, 3])
            blocks.append(SdpBlock(op, uniq, Cs[bi]))
        return cls(b, c, B, blocks, c0)


# ---------------------------------------------------------------------------
# Semialgebraic sets and polynomial expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemialgebraicSet:
    """``{z : h_i(z) >= 0 for all i}`` over the coordinates ``variables``.

    ``variables`` fixes the ambient coordinates of the set (and therefore of
    every multiplier's Gram basis); generators may use any subset of them.
    """

    space: VariableSpace
    variables: tuple[str, ...]
    generators: tuple[Polynomial, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "generators", tuple(self.generators))
        for h in self.generators:
            if h.space != self.space:
                raise ValueError("generator over a different space")
            if h.is_zero():
                raise ValueError("zero generator")
            extra = set(h.variables_used()) - set(self.variables)
            if extra:
                raise ValueError(f"generator uses variables {sorted(extra)} outside the set")

    @classmethod
    def box(cls, space: VariableSpace, box: Box, name: str = "") -> "SemialgebraicSet":
        """One quadratic ``(hi - z)(z - lo)`` per coordinate."""
        gens = []
        for n, lo, hi in zip(box.names, box.lo, box.hi):
            z = Polynomial.variable(space, n)
            gens.append((hi - z) * (z - lo))
        return cls(space, box.names, tuple(gens), name)

    @classmethod
    def unit_box(cls, space: VariableSpace, names: Sequence[str], name: str = "") -> "SemialgebraicSet":
        names = tuple(names)
        return cls.box(space, Box(names, (-1.0,) * len(names), (1.0,) * len(names)), name)

    def evaluate(self, points) -> np.ndarray:
        """Generator values, shape ``(N, len(generators))``."""
        pts = np.atleast_2d(points)
        return np.stack([h.eval_many(pts) for h in self.generators], axis=1) if self.generators else np.zeros((pts.shape[0], 0))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return np.all(self.evaluate(points) >= -tol, axis=1)


class PolyExpr:
    """Affine polynomial expression ``const + sum_c x_c * P_c`` in decision coefficients ``x``."""

    __slots__ = ("space", "const", "lin")

    def __init__(self, space: VariableSpace, const: Polynomial | None = None, lin: Mapping[int, Polynomial] | None = None):
        self.space = space
        self.const = const if const is not None else Polynomial.zero(space)
        self.lin = {c: p for c, p in (lin or {}).items() if not p.is_zero()}

    @classmethod
    def lift(cls, other) -> "PolyExpr":
        if isinstance(other, PolyExpr):
            return other
        if isinstance(other, DecisionPoly):
            return other.expr()
        if isinstance(other, Polynomial):
            return cls(other.space, other)
        raise TypeError(f"cannot use {type(other).__name__} as a polynomial expression")

    def _coerce(self, other) -> "PolyExpr":
        if isinstance(other, (int, float)):
            return PolyExpr(self.space, Polynomial.constant(self.space, float(other)))
        o = PolyExpr.lift(other)
        if o.space != self.space:
            raise ValueError("expression spaces differ")
        return o

    def __add__(self, other):
        o = self._coerce(other)
        lin = dict(self.lin)
        for c, p in o.lin.items():
            lin[c] = lin[c] + p if c in lin else p
        return PolyExpr(self.space, self.const + o.const, lin)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, a: float) -> "PolyExpr":
        return PolyExpr(self.space, self.const.scale(a), {c: p.scale(a) for c, p in self.lin.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        if isinstance(other, Polynomial):
            return self.map(lambda p: p * other)
        return NotImplemented

    __rmul__ = __mul__

    def map(self, fn: Callable[[Polynomial], Polynomial]) -> "PolyExpr":
        """Apply a *linear* polynomial map to every component."""
        return PolyExpr(self.space, fn(self.const), {c: fn(p) for c, p in self.lin.items()})

    @property
    def degree(self) -> int:
        return max([self.const.degree] + [p.degree for p in self.lin.values()])

    def variables_used(self) -> tuple[str, ...]:
        used = set(self.const.variables_used())
        for p in self.lin.values():
            used |= set(p.variables_used())
        return tuple(n for n in self.space.names if n in used)

    def value(self, x: np.ndarray) -> Polynomial:
        """Substitute numeric decision coefficients."""
        acc: dict[Exponent, float] = dict(self.const.terms)
        for c, p in self.lin.items():
            xc = float(x[c])
            if xc == 0.0:
                continue
            for a, v in p.items():
                acc[a] = acc.get(a, 0.0) + xc * v
        return Polynomial(self.space, acc)


@dataclass(frozen=True)
class DecisionPoly:
    """Polynomial with unknown coefficients over ``basis``; columns ``offset..offset+len(basis)``."""

    name: str
    space: VariableSpace
    variables: tuple[str, ...]
    degree: int
    basis: tuple[Exponent, ...]
    offset: int

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def columns(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size)

    def expr(self) -> PolyExpr:
        return PolyExpr(
            self.space,
            None,
            {self.offset + k: Polynomial._raw(self.space, {a: 1.0}) for k, a in enumerate(self.basis)},
        )

    def value(self, x: np.ndarray) -> Polynomial:
        return Polynomial.from_coefficients(self.space, self.basis, x[self.offset:self.offset + self.size])

    def __add__(self, other):
        return self.expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self.expr() - other

    def __rsub__(self, other):
        return PolyExpr.lift(other) - self.expr() if not isinstance(other, (int, float)) else other - self.expr()

    def __neg__(self):
        return -self.expr()

    def __mul__(self, other):
        return self.expr() * other

    __rmul__ = __mul__


@dataclass
class SosConstraint:
    """``target in Q_{degree}(set.generators)``."""

    target: PolyExpr
    set: SemialgebraicSet
    degree: int
    name: str = ""


def gram_basis(space: VariableSpace, degree: int, variables: Sequence[str] | None = None) -> list[Exponent]:
    """Monomials of degree ``<= floor(degree / 2)`` (grlex), the Gram basis for degree-``degree`` SOS."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    return monomials(space, degree // 2, variables)


def required_degree(target: PolyExpr | Polynomial, generators: Iterable[Polynomial] = ()) -> int:
    """Smallest even 2l accommodating the target and every generator."""
    d = max([PolyExpr.lift(target).degree, 0] + [h.degree for h in generators])
    return d + (d % 2)


# ---------------------------------------------------------------------------
# Program assembly
# ---------------------------------------------------------------------------

_OPERATOR_CACHE: dict = {}


def _multiplier_operator(space: VariableSpace, variables: tuple[str, ...], degree: int, gen: Polynomial | None):
    """Operator for ``s * gen`` (``gen=None`` means ``s_0``) with rows = monomials of degree <= ``degree``."""
    key = (space, variables, degree, gen)
    op = _OPERATOR_CACHE.get(key)
    if op is not None:
        return op
    gdeg = 0 if gen is None else gen.degree
    basis = gram_basis(space, degree - gdeg, variables)
    rows = monomials(space, degree, variables)
    row_index = {a: r for r, a in enumerate(rows)}
    gterms = [(space.zero_exponent, 1.0)] if gen is None else list(gen.items())
    n = len(basis)
    arr = np.array(basis, dtype=np.int64)
    ii, jj = np.triu_indices(n)
    pair = arr[ii] + arr[jj]
    R, I, J, V = [], [], [], []
    for beta, hb in gterms:
        tot = pair + np.asarray(beta, dtype=np.int64)
        r = np.fromiter((row_index[tuple(t)] for t in tot.tolist()), dtype=np.int64, count=len(tot))
        R.append(r); I.append(ii); J.append(jj); V.append(np.full(len(tot), hb))
    op = BlockOperator(n, len(rows), np.concatenate(R), np.concatenate(I), np.concatenate(J), np.concatenate(V), key=key)
    op.basis = basis
    if gen is not None:
        # s * gen = sum_beta gen_beta * shift_beta(s): keep the plain moment
        # operator of the same basis and the row shifts, which lets the solver
        # form the Schur complement on the smaller operator.
        bdeg = max((sum(a) for a in basis), default=0)
        base = _multiplier_operator(space, variables, 2 * bdeg, None)
        base_rows = np.array(monomials(space, 2 * bdeg, variables), dtype=np.int64).reshape(-1, len(space.zero_exponent))
        shifts = []
        for beta, hb in gterms:
            tot = base_rows + np.asarray(beta, dtype=np.int64)
            idx = np.fromiter((row_index[tuple(t)] for t in tot.tolist()), dtype=np.int64, count=len(tot))
            shifts.append((idx, float(hb)))
        op.factor = (base, shifts)
    _OPERATOR_CACHE[key] = op
    return op


def clear_operator_cache():
    _OPERATOR_CACHE.clear()


@dataclass
class ConstraintLayout:
    constraint: SosConstraint
    rows: np.ndarray
    monomials: list[Exponent]
    block_ids: list[int]
    generators: list[Polynomial | None]
    bases: list[list[Exponent]]


@dataclass
class CompiledProgram:
    problem: SdpProblem
    layouts: list[ConstraintLayout]
    decisions: dict[str, DecisionPoly]
    objective_sign: float


@dataclass
class ConstraintCertificate:
    name: str
    target: Polynomial
    multipliers: list[Polynomial]
    grams: list[np.ndarray]
    generators: list[Polynomial | None]
    residual: Polynomial
    residual_inf: float
    residual_l1: float


@dataclass
class SosSolution:
    decisions: dict[str, Polynomial]
    constraints: list[ConstraintCertificate]
    objective: float
    max_residual: float

    def constraint(self, name: str) -> ConstraintCertificate:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)


class SosProgram:
    """Collects decision polynomials, membership constraints and a linear objective.

    Examples
    --------
    >>> sp_ = VariableSpace(("x",))
    >>> prog = SosProgram(sp_)
    >>> x = Polynomial.variable(sp_, "x")
    >>> _ = prog.add_sos(x ** 2 + 1, ("x",))
    >>> compiled = prog.compile()
    >>> compiled.problem.block_sizes
    [2]
    """

    def __init__(self, space: VariableSpace):
        self.space = space
        self.decisions: dict[str, DecisionPoly] = {}
        self.constraints: list[SosConstraint] = []
        self._n_free = 0
        self._objective: PolyExpr | None = None
        self._objective_functional: Callable[[Polynomial], float] | None = None
        self._sense = 1.0

    @property
    def n_free(self) -> int:
        return self._n_free

    def new_poly(self, name: str, degree: int, variables: Sequence[str]) -> DecisionPoly:
        if name in self.decisions:
            raise ValueError(f"decision polynomial {name!r} already declared")
        variables = tuple(variables)
        basis = tuple(monomials(self.space, degree, variables))
        dp = DecisionPoly(name, self.space, variables, degree, basis, self._n_free)
        self._n_free += len(basis)
        self.decisions[name] = dp
        return dp

    def add_constraint(self, target, set_: SemialgebraicSet, degree: int | None = None, name: str = "") -> SosConstraint:
        """Require ``target in Q_degree(set_.generators)``; ``degree=None`` picks the minimal even bound."""
        expr = PolyExpr.lift(target)
        if set_.space != self.space or expr.space != self.space:
            raise ValueError("constraint and program use different spaces")
        extra = set(expr.variables_used()) - set(set_.variables)
        if extra:
            raise ValueError(f"target uses variables {sorted(extra)} not in the set's coordinates")
        if degree is None:
            degree = required_degree(expr, set_.generators)
        if degree % 2:
            raise DegreeError(f"2l must be even, got {degree}")
        if expr.degree > degree:
            raise DegreeError(f"constraint {name!r}: target degree {expr.degree} exceeds 2l = {degree}")
        for h in set_.generators:
            if h.degree > degree:
                raise DegreeError(f"constraint {name!r}: generator degree {h.degree} exceeds 2l = {degree}")
        con = SosConstraint(expr, set_, degree, name or f"c{len(self.constraints)}")
        self.constraints.append(con)
        return con

    def add_sos(self, target, variables: Sequence[str], degree: int | None = None, name: str = "") -> SosConstraint:
        """Global SOS constraint (no generators)."""
        return self.add_constraint(target, SemialgebraicSet(self.space, tuple(variables)), degree, name)

    def minimize(self, expr, functional: Callable[[Polynomial], float]):
        """Minimize ``functional(expr)`` for a linear ``functional`` such as a moment integral."""
        self._objective = PolyExpr.lift(expr)
        self._objective_functional = functional
        self._sense = 1.0

    def maximize(self, expr, functional: Callable[[Polynomial], float]):
        self.minimize(expr, functional)
        self._sense = -1.0

    def minimize_moments(self, expr, moments: MomentVector):
        self.minimize(expr, moments.integrate)

    def maximize_moments(self, expr, moments: MomentVector):
        self.maximize(expr, moments.integrate)

    # -- compilation --------------------------------------------------------
    def compile(self) -> CompiledProgram:
        c = np.zeros(self._n_free)
        c0 = 0.0
        if self._objective is not None:
            fn = self._objective_functional
            c0 = self._sense * fn(self._objective.const)
            for col, p in self._objective.lin.items():
                c[col] = self._sense * fn(p)
        b_parts, Br, Bc, Bv = [], [], [], []
        blocks: list[SdpBlock] = []
        layouts: list[ConstraintLayout] = []
        labels: list[str] = []
        offset = 0
        for con in self.constraints:
            vars_ = con.set.variables
            rows = monomials(self.space, con.degree, vars_)
            index = {a: r for r, a in enumerate(rows)}
            m = len(rows)
            bvec = np.zeros(m)
            for a, v in con.target.const.items():
                bvec[index[a]] = v
            for col, p in con.target.lin.items():
                for a, v in p.items():
                    Br.append(offset + index[a]); Bc.append(col); Bv.append(-v)
            b_parts.append(bvec)
            grow = np.arange(offset, offset + m)
            ids, gens, bases = [], [], []
            for gen in (None,) + con.set.generators:
                op = _multiplier_operator(self.space, vars_, con.degree, gen)
                ids.append(len(blocks))
                gens.append(gen)
                bases.append(op.basis)
                blocks.append(SdpBlock(op, grow, None, f"{con.name}/s{len(ids) - 1}"))
            layouts.append(ConstraintLayout(con, grow, rows, ids, gens, bases))
            labels += [con.name] * m
            offset += m
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)
        B = sp.csr_matrix((Bv, (Br, Bc)), shape=(offset, self._n_free))
        problem = SdpProblem(b, c, B, blocks, c0, labels)
        return CompiledProgram(problem, layouts, dict(self.decisions), self._sense)

    def recover(self, compiled: CompiledProgram, x: np.ndarray, Xs: Sequence[np.ndarray], tol: float | None = None) -> SosSolution:
        """Map an SDP solution back to polynomials and report coefficient residuals.

        Raises :class:`CertificateRejected` when ``tol`` is given and some
        constraint's largest coefficient residual exceeds it.
        """
        return recover_certificate(compiled, x, Xs, tol)


def gram_to_poly(space: VariableSpace, basis: Sequence[Exponent], G: np.ndarray) -> Polynomial:
    acc: dict[Exponent, float] = {}
    n = len(basis)
    for i in range(n):
        for j in range(n):
            if G[i, j] != 0.0:
                a = tuple(p + q for p, q in zip(basis[i], basis[j]))
                acc[a] = acc.get(a, 0.0) + float(G[i, j])
    return Polynomial(space, acc)


def recover_certificate(compiled: CompiledProgram, x: np.ndarray, Xs: Sequence[np.ndarray], tol: float | None = None) -> SosSolution:
    """Rebuild decision polynomials, SOS multipliers and per-constraint residuals."""
    x = np.asarray(x, dtype=float)
    space = next(iter(compiled.decisions.values())).space if compiled.decisions else None
    decisions = {name: dp.value(x) for name, dp in compiled.decisions.items()}
    certs = []
    worst = 0.0
    for lay in compiled.layouts:
        con = lay.constraint
        sp_ = con.set.space
        target = con.target.value(x)
        mults, grams = [], []
        rep_vec = np.zeros(len(lay.monomials))
        for bid in lay.block_ids:
            G = 0.5 * (Xs[bid] + Xs[bid].T)
            grams.append(G)
            blk = compiled.problem.blocks[bid]
            rep_vec += blk.op.apply(G)
        for basis, G in zip(lay.bases, grams):
            mults.append(gram_to_poly(sp_, basis, G))
        target_vec = target.coefficient_vector(lay.monomials)
        res_vec = target_vec - rep_vec
        residual = Polynomial.from_coefficients(sp_, lay.monomials, res_vec)
        rinf = float(np.max(np.abs(res_vec))) if res_vec.size else 0.0
        rl1 = float(np.sum(np.abs(res_vec)))
        worst = max(worst, rinf)
        certs.append(ConstraintCertificate(con.name, target, mults, grams, list(lay.generators), residual, rinf, rl1))
    if tol is not None and worst > tol:
        bad = max(certs, key=lambda c: c.residual_inf)
        raise CertificateRejected(f"constraint {bad.name!r} residual {bad.residual_inf:.3e} exceeds {tol:.1e}")
    obj = compiled.problem.objective(x, Xs) * compiled.objective_sign
    return SosSolution(decisions, certs, obj, worst)
