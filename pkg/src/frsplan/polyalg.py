"""Sparse multivariate polynomials over a fixed, named variable ordering.

A :class:`Polynomial` stores a map from exponent tuples to float coefficients.
Every exponent tuple has one entry per variable of its :class:`VariableSpace`,
so two polynomials over the same space can be combined without any reindexing.
Values are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


class SpaceMismatchError(ValueError):
    """Raised when operands live in different variable spaces."""


@dataclass(frozen=True)
class VariableSpace:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("a variable space needs at least one variable")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in {names}")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r} in {self.names}") from None

    def indices(self, names: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(n) for n in names)

    def unit(self, var: str | int) -> Exponent:
        i = var if isinstance(var, int) else self.index(var)
        return tuple(1 if j == i else 0 for j in range(self.count))

    @property
    def zero_exponent(self) -> Exponent:
        return (0,) * self.count


def grlex_key(alpha: Exponent):
    """Sort key for graded-lexicographic order (degree first, then lex descending)."""
    return (sum(alpha), tuple(-a for a in alpha))


@lru_cache(maxsize=None)
def _monomials(nvars: int, active: tuple[int, ...], degree: int) -> tuple[Exponent, ...]:
    out = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(active, d):
            alpha = [0] * nvars
            for i in combo:
                alpha[i] += 1
            out.append(tuple(alpha))
    out.sort(key=grlex_key)
    return tuple(out)


def monomials(space: VariableSpace, degree: int, variables: Sequence[str] | None = None) -> list[Exponent]:
    """All exponents of total degree <= ``degree`` in ``variables``, grlex-ordered.

    Exponents are full-length tuples over ``space``; inactive variables get 0.
    """
    if degree < 0:
        return []
    active = tuple(range(space.count)) if variables is None else space.indices(variables)
    return list(_monomials(space.count, tuple(sorted(active)), degree))


def count_monomials(nvars: int, degree: int) -> int:
    return comb(nvars + degree, degree)


class Polynomial:
    """Immutable sparse polynomial.

    Parameters
    ----------
    space : VariableSpace
    terms : mapping from exponent tuple to coefficient. Zero coefficients are dropped.
    """

    __slots__ = ("space", "_terms", "_hash")

    def __init__(self, space: VariableSpace, terms: Mapping[Exponent, float] | None = None):
        self.space = space
        clean: dict[Exponent, float] = {}
        if terms:
            n = space.count
            for alpha, c in terms.items():
                alpha = tuple(int(a) for a in alpha)
                if len(alpha) != n:
                    raise ValueError(f"exponent {alpha} has wrong length for {space.names}")
                if any(a < 0 for a in alpha):
                    raise ValueError(f"negative exponent {alpha}")
                c = float(c)
                if c != 0.0:
                    clean[alpha] = c
        self._terms = clean
        self._hash = None

    @classmethod
    def _raw(cls, space: VariableSpace, terms: dict[Exponent, float]) -> "Polynomial":
        p = cls.__new__(cls)
        p.space = space
        p._terms = {a: c for a, c in terms.items() if c != 0.0}
        p._hash = None
        return p

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, space: VariableSpace) -> "Polynomial":
        return cls._raw(space, {})

    @classmethod
    def constant(cls, space: VariableSpace, value: float) -> "Polynomial":
        return cls._raw(space, {space.zero_exponent: float(value)})

    @classmethod
    def variable(cls, space: VariableSpace, name: str) -> "Polynomial":
        return cls._raw(space, {space.unit(name): 1.0})

    @classmethod
    def monomial(cls, space: VariableSpace, alpha: Exponent, coef: float = 1.0) -> "Polynomial":
        return cls(space, {tuple(alpha): coef})

    @classmethod
    def from_coefficients(cls, space: VariableSpace, basis: Sequence[Exponent], coefs) -> "Polynomial":
        return cls._raw(space, {tuple(a): float(c) for a, c in zip(basis, coefs)})

    # -- basic properties -------------------------------------------------
    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def coef(self, alpha: Exponent) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        if not self._terms:
            return -1
        return max(sum(a) for a in self._terms)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = self.space.indices(names)
        if not self._terms:
            return -1
        return max(sum(a[i] for i in idx) for a in self._terms)

    def variables_used(self) -> tuple[str, ...]:
        used = set()
        for a in self._terms:
            used.update(i for i, e in enumerate(a) if e)
        return tuple(self.space.names[i] for i in sorted(used))

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def l1_norm(self) -> float:
        """Sum of absolute coefficients; bounds |p| on the unit box [-1, 1]^n."""
        return float(sum(abs(c) for c in self._terms.values()))

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if other.space != self.space:
            raise SpaceMismatchError(f"{self.space.names} vs {other.space.names}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for a, c in other._terms.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial._raw(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.space, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Exponent, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                g = tuple(x + y for x, y in zip(a, b))
                out[g] = out.get(g, 0.0) + ca * cb
        return Polynomial._raw(self.space, out)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        result = Polynomial.constant(self.space, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, factor: float) -> "Polynomial":
        if factor == 0.0:
            return Polynomial.zero(self.space)
        return Polynomial._raw(self.space, {a: c * factor for a, c in self._terms.items()})

    def partial(self, var: str | int) -> "Polynomial":
        i = var if isinstance(var, int) else self.space.index(var)
        out = {}
        for a, c in self._terms.items():
            if a[i]:
                b = list(a)
                b[i] -= 1
                out[tuple(b)] = c * a[i]
        return Polynomial._raw(self.space, out)

    def substitute_value(self, var: str, value: float) -> "Polynomial":
        """Fix one variable to a number; the result keeps the same space."""
        i = self.space.index(var)
        out: dict[Exponent, float] = {}
        for a, c in self._terms.items():
            b = a[:i] + (0,) + a[i + 1:]
            out[b] = out.get(b, 0.0) + c * value ** a[i]
        return Polynomial._raw(self.space, out)

    def substitute_values(self, values: Mapping[str, float]) -> "Polynomial":
        p = self
        for k, v in values.items():
            p = p.substitute_value(k, v)
        return p

    def compose(self, replacements: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Replace variables by polynomials (over the same space)."""
        idx = {self.space.index(k): v for k, v in replacements.items()}
        for v in idx.values():
            self._check(v)
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i, e):
            key = (i, e)
            if key not in cache:
                cache[key] = idx[i] ** e
            return cache[key]

        acc: dict[Exponent, float] = {}
        for a, c in self._terms.items():
            keep = tuple(0 if i in idx else e for i, e in enumerate(a))
            term = Polynomial._raw(self.space, {keep: c})
            for i, e in enumerate(a):
                if i in idx and e:
                    term = term * power(i, e)
            for b, cb in term._terms.items():
                acc[b] = acc.get(b, 0.0) + cb
        return Polynomial._raw(self.space, acc)

    # -- evaluation -------------------------------------------------------
    def __call__(self, point) -> float:
        return self.eval(point)

    def eval(self, point) -> float:
        x = np.asarray(point, dtype=float).ravel()
        if x.shape[0] != self.space.count:
            raise ValueError(f"point has {x.shape[0]} entries, space has {self.space.count}")
        total = 0.0
        for a, c in self._terms.items():
            term = c
            for xi, e in zip(x, a):
                if e:
                    term *= xi ** e
            total += term
        return float(total)

    def eval_many(self, points, chunk: int = 4096) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape (N, space.count))."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[1] != self.space.count:
            raise ValueError(f"points have {pts.shape[1]} columns, space has {self.space.count}")
        if not self._terms:
            return np.zeros(pts.shape[0])
        exps = np.array(list(self._terms.keys()), dtype=np.int64)
        coefs = np.array(list(self._terms.values()))
        maxdeg = int(exps.max())
        out = np.empty(pts.shape[0])
        used = [i for i in range(self.space.count) if exps[:, i].any()]
        for s in range(0, pts.shape[0], chunk):
            p = pts[s:s + chunk]
            vals = np.ones((p.shape[0], len(coefs)))
            for i in used:
                powers = p[:, i:i + 1] ** np.arange(maxdeg + 1)[None, :]
                vals *= powers[:, exps[:, i]]
            out[s:s + chunk] = vals @ coefs
        return out

    # -- comparison / serialization ----------------------------------------
    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.space == other.space and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.space, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coef(k) - other.coef(k)) <= atol for k in keys)

    def sorted_terms(self) -> list[tuple[Exponent, float]]:
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]))

    def coefficient_vector(self, basis: Sequence[Exponent]) -> np.ndarray:
        return np.array([self._terms.get(tuple(a), 0.0) for a in basis])

    def to_json(self) -> dict:
        return {
            "variables": list(self.space.names),
            "terms": [{"exp": list(a), "coef": c} for a, c in self.sorted_terms()],
        }

    @classmethod
    def from_json(cls, data: Mapping, space: VariableSpace | None = None) -> "Polynomial":
        sp = VariableSpace(tuple(data["variables"]))
        if space is not None and space != sp:
            raise SpaceMismatchError(f"{sp.names} vs {space.names}")
        return cls(sp, {tuple(t["exp"]): t["coef"] for t in data["terms"]})

    def __repr__(self):
        if not self._terms:
            return "Polynomial(0)"
        parts = []
        for a, c in self.sorted_terms()[:12]:
            mono = "*".join(
                n if e == 1 else f"{n}^{e}" for n, e in zip(self.space.names, a) if e
            )
            parts.append(f"{c:+.4g}" + (f"*{mono}" if mono else ""))
        more = " ..." if len(self._terms) > 12 else ""
        return "Polynomial(" + " ".join(parts) + more + ")"


# Functional aliases --------------------------------------------------------

def add(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p * q


def scale(p: Polynomial, factor: float) -> Polynomial:
    return p.scale(factor)


def partial_derivative(p: Polynomial, var: str) -> Polynomial:
    return p.partial(var)


def evaluate(p: Polynomial, point) -> float:
    return p.eval(point)


def variables(space: VariableSpace) -> dict[str, Polynomial]:
    """Dictionary ``name -> Polynomial.variable`` for convenient expression building."""
    return {n: Polynomial.variable(space, n) for n in space.names}


# Boxes and moments ---------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box over a subset of named variables."""

    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not (len(self.names) == len(self.lo) == len(self.hi)):
            raise ValueError("box names/lo/hi length mismatch")
        for n, a, b in zip(self.names, self.lo, self.hi):
            if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
                raise ValueError(f"malformed interval for {n}: [{a}, {b}]")

    @classmethod
    def from_dict(cls, intervals: Mapping[str, Sequence[float]]) -> "Box":
        names = tuple(intervals)
        return cls(names, tuple(intervals[n][0] for n in names), tuple(intervals[n][1] for n in names))

    def interval(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return self.lo[i], self.hi[i]

    def as_dict(self) -> dict[str, list[float]]:
        return {n: [a, b] for n, a, b in zip(self.names, self.lo, self.hi)}

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def product(self, other: "Box") -> "Box":
        if set(self.names) & set(other.names):
            raise ValueError("boxes overlap in variables")
        return Box(self.names + other.names, self.lo + other.lo, self.hi + other.hi)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.all((p >= lo - tol) & (p <= hi + tol), axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        return lo + (hi - lo) * rng.random((n, len(lo)))


@dataclass(frozen=True)
class MomentVector:
    """Lebesgue moments ``y[alpha] = integral over box of x^alpha``."""

    space: VariableSpace
    degree: int
    box: Box
    values: Mapping[Exponent, float]

    def __getitem__(self, alpha) -> float:
        return self.values[tuple(alpha)]

    def vector(self, basis: Sequence[Exponent]) -> np.ndarray:
        return np.array([self.values[tuple(a)] for a in basis])

    def integrate(self, p: Polynomial) -> float:
        return float(sum(c * self.values[a] for a, c in p.items()))


def _interval_moment(lo: float, hi: float, k: int) -> float:
    return (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)


def box_moments(space: VariableSpace, box: Box, degree: int) -> MomentVector:
    """Moments of Lebesgue measure on ``box`` for all monomials in its variables up to ``degree``."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    idx = space.indices(box.names)
    table = {
        i: [_interval_moment(lo, hi, k) for k in range(degree + 1)]
        for i, lo, hi in zip(idx, box.lo, box.hi)
    }
    values = {}
    for alpha in monomials(space, degree, box.names):
        y = 1.0
        for i in idx:
            y *= table[i][alpha[i]]
        values[alpha] = y
    return MomentVector(space, degree, box, values)


# Affine changes of variable ----------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """``physical = scale * normalized + offset`` for one variable."""

    scale: float
    offset: float

    def __post_init__(self):
        if self.scale == 0.0 or not np.isfinite(self.scale):
            raise ValueError("affine scale must be finite and non-zero")

    @classmethod
    def to_unit(cls, lo: float, hi: float) -> "AffineMap":
        """Map from [-1, 1] onto [lo, hi]."""
        return cls((hi - lo) / 2.0, (hi + lo) / 2.0)

    def forward(self, z):
        return self.scale * np.asarray(z) + self.offset

    def inverse(self, x):
        return (np.asarray(x) - self.offset) / self.scale

    def inverted(self) -> "AffineMap":
        return AffineMap(1.0 / self.scale, -self.offset / self.scale)

    def to_json(self) -> dict:
        return {"scale": self.scale, "offset": self.offset}


def affine_substitute(p: Polynomial, maps: Mapping[str, AffineMap]) -> Polynomial:
    """Return ``p`` with each ``x_i`` replaced by ``a_i * x_i + b_i`` (variable names kept)."""
    sp = p.space
    reps = {}
    for name, m in maps.items():
        if not isinstance(m, AffineMap):
            m = AffineMap(*m)
        reps[name] = Polynomial._raw(sp, {sp.unit(name): m.scale, sp.zero_exponent: m.offset})
    return p.compose(reps)
