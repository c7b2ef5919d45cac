"""Sparse multivariate polynomial arithmetic over global 1-based variable indices.

Exponents are stored sparsely (variable -> positive power) so that a polynomial
living on a block of variables and the same polynomial viewed globally share one
representation.  Monomial orderings are graded lexicographic throughout: lower
total degree first, and within a degree x1-major (so for two variables the
degree-2 run is x1^2, x1*x2, x2^2).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

# Coefficients below this magnitude are dropped after arithmetic.  Input
# coefficients are kept verbatim (drop tolerance 0 on construction).
ARITHMETIC_DROP_TOL = 1e-14


class FormatError(ValueError):
    """Raised for malformed blocks, exponents or polynomial data."""


@dataclass(frozen=True)
class Exponent:
    """A monomial exponent: sorted tuple of (variable, power), powers > 0."""

    powers: tuple[tuple[int, int], ...]

    @staticmethod
    def make(data: Mapping[int, int] | Iterable[tuple[int, int]]) -> "Exponent":
        items = data.items() if isinstance(data, Mapping) else data
        pairs = []
        for var, pw in items:
            if var < 1:
                raise FormatError(f"variable index must be >= 1, got {var}")
            if pw < 0:
                raise FormatError(f"negative power {pw} for variable {var}")
            if pw > 0:
                pairs.append((int(var), int(pw)))
        pairs.sort()
        for (a, _), (b, _) in zip(pairs, pairs[1:]):
            if a == b:
                raise FormatError(f"duplicate variable {a} in exponent")
        return Exponent(tuple(pairs))

    @property
    def degree(self) -> int:
        return sum(p for _, p in self.powers)

    @property
    def support(self) -> frozenset[int]:
        return frozenset(v for v, _ in self.powers)

    def power_of(self, var: int) -> int:
        for v, p in self.powers:
            if v == var:
                return p
        return 0

    def __add__(self, other: "Exponent") -> "Exponent":
        acc: dict[int, int] = dict(self.powers)
        for v, p in other.powers:
            acc[v] = acc.get(v, 0) + p
        return Exponent(tuple(sorted(acc.items())))

    def dense(self, n: int) -> tuple[int, ...]:
        out = [0] * n
        for v, p in self.powers:
            out[v - 1] = p
        return tuple(out)

    def grlex_key(self, n: int) -> tuple:
        # graded first, then x1-major within a degree
        return (self.degree, tuple(-p for p in self.dense(n)))

    def evaluate(self, x: Sequence[float]) -> float:
        val = 1.0
        for v, p in self.powers:
            val *= x[v - 1] ** p
        return val

    def __str__(self) -> str:
        if not self.powers:
            return "1"
        return "*".join(f"x{v}" + (f"^{p}" if p > 1 else "") for v, p in self.powers)


ZERO_EXPONENT = Exponent(())


@dataclass(frozen=True)
class Polynomial:
    """Term-map polynomial: Exponent -> float coefficient, no stored zeros."""

    terms: dict[Exponent, float]
    n: int

    def __post_init__(self):
        for e in self.terms:
            for v, _ in e.powers:
                if v > self.n:
                    raise FormatError(f"variable x{v} exceeds ambient count n={self.n}")

    @staticmethod
    def from_terms(n: int, terms: Iterable[tuple[float, Mapping[int, int] | Exponent]],
                   drop_tol: float = 0.0) -> "Polynomial":
        acc: dict[Exponent, float] = {}
        for coef, exp in terms:
            e = exp if isinstance(exp, Exponent) else Exponent.make(exp)
            acc[e] = acc.get(e, 0.0) + float(coef)
        return Polynomial({e: c for e, c in acc.items() if abs(c) > drop_tol or
                           (drop_tol == 0.0 and c != 0.0)}, n)

    @staticmethod
    def zero(n: int) -> "Polynomial":
        return Polynomial({}, n)

    @staticmethod
    def constant(n: int, c: float) -> "Polynomial":
        return Polynomial.from_terms(n, [(c, {})])

    @staticmethod
    def variable(n: int, var: int) -> "Polynomial":
        return Polynomial.from_terms(n, [(1.0, {var: 1})])

    @property
    def degree(self) -> int:
        # degree of the zero polynomial is defined as 0
        if not self.terms:
            return 0
        return max(e.degree for e in self.terms)

    @property
    def support_vars(self) -> frozenset[int]:
        out: set[int] = set()
        for e in self.terms:
            out |= e.support
        return frozenset(out)

    def coefficient(self, exp: Exponent) -> float:
        return self.terms.get(exp, 0.0)

    def sorted_terms(self) -> list[tuple[Exponent, float]]:
        return sorted(self.terms.items(), key=lambda t: t[0].grlex_key(self.n))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if self.n != other.n:
            raise FormatError("ambient variable counts differ")
        acc = dict(self.terms)
        for e, c in other.terms.items():
            acc[e] = acc.get(e, 0.0) + c
        return Polynomial({e: c for e, c in acc.items() if abs(c) > ARITHMETIC_DROP_TOL}, self.n)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + other.scale(-1.0)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        if self.n != other.n:
            raise FormatError("ambient variable counts differ")
        acc: dict[Exponent, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = e1 + e2
                acc[e] = acc.get(e, 0.0) + c1 * c2
        return Polynomial({e: c for e, c in acc.items() if abs(c) > ARITHMETIC_DROP_TOL}, self.n)

    def scale(self, s: float) -> "Polynomial":
        if s == 0.0:
            return Polynomial.zero(self.n)
        return Polynomial({e: s * c for e, c in self.terms.items()}, self.n)

    def shift(self, c: float) -> "Polynomial":
        """Add the constant c."""
        return self + Polynomial.constant(self.n, c)

    def eval(self, x: Sequence[float]) -> float:
        """Evaluate at a point; terms summed left to right in graded-lex order."""
        if len(x) != self.n:
            raise FormatError(f"point has length {len(x)}, expected n={self.n}")
        total = 0.0
        for e, c in self.sorted_terms():
            total += c * e.evaluate(x)
        return total

    def eval_grid(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on an (m, n) array of points."""
        pts = np.asarray(pts, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.n:
            raise FormatError(f"grid must be (m, {self.n})")
        total = np.zeros(pts.shape[0])
        for e, c in self.sorted_terms():
            mono = np.full(pts.shape[0], c)
            for v, p in e.powers:
                mono *= pts[:, v - 1] ** p
            total += mono
        return total

    def coeff_inf_norm(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(f"{c:g}*{e}" for e, c in self.sorted_terms())


def prod_polys(polys: Sequence[Polynomial], n: int) -> Polynomial:
    """Product of a (possibly empty) family; the empty product is 1."""
    out = Polynomial.constant(n, 1.0)
    for p in polys:
        out = out * p
    return out


def support_check(p: Polynomial, block: Sequence[int]) -> bool:
    """True iff every term of p is supported inside the given variable block."""
    blk = set(block)
    return all(e.support <= blk for e in p.terms)


def _validate_block(block: Sequence[int]) -> tuple[int, ...]:
    if len(block) == 0:
        raise FormatError("block must be nonempty")
    blk = tuple(block)
    if any(v < 1 for v in blk):
        raise FormatError(f"block contains invalid variable index: {blk}")
    if len(set(blk)) != len(blk):
        raise FormatError(f"block contains duplicate variable index: {blk}")
    if list(blk) != sorted(blk):
        raise FormatError(f"block must be sorted ascending: {blk}")
    return blk


@dataclass(frozen=True)
class MonomialBasis:
    """Graded-lex ordered exponents on a block, degrees 0..d."""

    block: tuple[int, ...]
    degree: int
    exponents: tuple[Exponent, ...] = field(compare=False)

    def __len__(self) -> int:
        return len(self.exponents)

    def index_of(self, e: Exponent) -> int:
        # linear scan is fine at basis sizes used here; callers needing speed
        # build their own dict
        return self.exponents.index(e)


def monomial_basis(block: Sequence[int], d: int) -> MonomialBasis:
    """All monomials on `block` of degree <= d, graded-lex ordered.

    The first element is the constant monomial and the length is
    C(|block| + d, d).
    """
    blk = _validate_block(block)
    if d < 0:
        raise FormatError(f"degree must be >= 0, got {d}")
    exps: list[Exponent] = []
    for q in range(d + 1):
        # combinations_with_replacement over an ascending block enumerates the
        # degree-q slice exactly in graded-lex (x1-major) order
        for combo in itertools.combinations_with_replacement(blk, q):
            acc: dict[int, int] = {}
            for v in combo:
                acc[v] = acc.get(v, 0) + 1
            exps.append(Exponent.make(acc))
    expected = math.comb(len(blk) + d, d)
    assert len(exps) == expected
    return MonomialBasis(blk, d, tuple(exps))
