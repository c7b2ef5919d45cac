"""Assembly of block-structured moment relaxations and their symbolic SDP data.

A relaxation is held in "vector form": one shared decision vector y indexed by
the union of all block monomial sets, PSD blocks whose entries are affine forms
in y, equality rows (constraint-times-monomial pairings and the normalization
y_0 = 1), and the objective pairing <f, y>.  Overlap consistency between blocks
is structural: shared monomials share one position.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .polyring import (Exponent, FormatError, MonomialBasis, Polynomial,
                       ZERO_EXPONENT, monomial_basis, prod_polys, support_check)
from .sparsity import SparsityPattern

MODELS = ("sparse-putinar", "sparse-schmudgen", "dense-putinar", "dense-schmudgen")
SCHMUDGEN_PRODUCT_CAP = 12


class AssemblyError(ValueError):
    """Raised when a relaxation cannot be assembled as requested."""


@dataclass(frozen=True)
class SparsePOP:
    """A block-structured polynomial optimization problem.

    f_parts[i], eq[i] and ineq[i] are supported on pattern.blocks[i]; the
    objective is the sum of the parts.  The split of the objective across
    blocks is taken as given and never recomputed.
    """

    n: int
    pattern: SparsityPattern
    f_parts: tuple[Polynomial, ...]
    eq: tuple[tuple[Polynomial, ...], ...]
    ineq: tuple[tuple[Polynomial, ...], ...]

    def __post_init__(self):
        m = self.pattern.m
        if self.pattern.n != self.n:
            raise FormatError("pattern and problem disagree on n")
        if not (len(self.f_parts) == len(self.eq) == len(self.ineq) == m):
            raise FormatError(
                f"need one objective part / eq tuple / ineq tuple per block "
                f"(m={m}, got {len(self.f_parts)}/{len(self.eq)}/{len(self.ineq)})")
        for i, blk in enumerate(self.pattern.blocks):
            if not support_check(self.f_parts[i], blk):
                raise FormatError(f"objective part {i} not supported on block {i} {blk}")
            for l, h in enumerate(self.eq[i]):
                if not support_check(h, blk):
                    raise FormatError(f"equality {l} of block {i} not supported on {blk}")
            for l, g in enumerate(self.ineq[i]):
                if not support_check(g, blk):
                    raise FormatError(f"inequality {l} of block {i} not supported on {blk}")

    @property
    def m(self) -> int:
        return self.pattern.m

    def objective(self) -> Polynomial:
        out = Polynomial.zero(self.n)
        for p in self.f_parts:
            out = out + p
        return out

    def constraint_violation(self, x: Sequence[float]) -> float:
        """Max violation of all equality/inequality constraints at x."""
        worst = 0.0
        for i in range(self.m):
            for h in self.eq[i]:
                worst = max(worst, abs(h.eval(x)))
            for g in self.ineq[i]:
                worst = max(worst, max(0.0, -g.eval(x)))
        return worst


@dataclass(frozen=True)
class MinOrder:
    """Smallest admissible relaxation order and per-block truncation degrees."""

    k0: int
    d: tuple[int, ...]
    deg_f: int


def min_order(pop: SparsePOP) -> MinOrder:
    """Smallest order k0 admitting the relaxation, and the degrees d_i that
    drive the per-block flatness test.

    An unconstrained block gets d_i = 1 (plain one-step flatness).
    """
    deg_f = pop.objective().degree
    k0 = (deg_f + 1) // 2
    d: list[int] = []
    for i in range(pop.m):
        cand = [(h.degree + 1) // 2 for h in pop.eq[i]] + \
               [(g.degree + 1) // 2 for g in pop.ineq[i]]
        for val in cand:
            k0 = max(k0, val)
        d.append(max(cand) if cand else 1)
    return MinOrder(max(k0, 1), tuple(d), deg_f)


@dataclass
class MomentIndex:
    """Bijection between the union monomial set at order k and 0..N-1.

    Position 0 is the constant monomial; ordering is graded lex on global
    exponents.  Shared monomials across blocks receive one shared position.
    """

    k: int
    pattern: SparsityPattern
    exponents: tuple[Exponent, ...]
    position: dict[Exponent, int]
    block_basis: tuple[MonomialBasis, ...]     # per block, degrees <= 2k
    block_positions: tuple[np.ndarray, ...]    # positions of each block basis

    def __len__(self) -> int:
        return len(self.exponents)

    def pos(self, e: Exponent) -> int:
        try:
            return self.position[e]
        except KeyError:
            raise KeyError(f"monomial {e} not in the order-{self.k} union index") from None

    def point_vector(self, u: Sequence[float]) -> np.ndarray:
        """The moment vector of the Dirac measure at u, over this index."""
        if len(u) != self.pattern.n:
            raise FormatError(f"point has length {len(u)}, expected {self.pattern.n}")
        return np.array([e.evaluate(u) for e in self.exponents])

    def riesz(self, p: Polynomial, y: np.ndarray) -> float:
        """The pairing <p, y>: sum of coefficient times moment."""
        return float(sum(c * y[self.pos(e)] for e, c in p.sorted_terms()))


def build_union_index(pattern: SparsityPattern, k: int) -> MomentIndex:
    if k < 1:
        raise AssemblyError(f"order must be >= 1, got {k}")
    bases = tuple(monomial_basis(blk, 2 * k) for blk in pattern.blocks)
    union: set[Exponent] = set()
    for b in bases:
        union.update(b.exponents)
    exps = tuple(sorted(union, key=lambda e: e.grlex_key(pattern.n)))
    position = {e: i for i, e in enumerate(exps)}
    assert exps[0] == ZERO_EXPONENT
    blockpos = tuple(np.array([position[e] for e in b.exponents], dtype=np.int64)
                     for b in bases)
    return MomentIndex(k, pattern, exps, position, bases, blockpos)


@dataclass
class SymbolicBlock:
    """One PSD block with affine-in-y entries, stored as COO quadruples.

    Entry (rows[t], cols[t]) accumulates coefs[t] * y[poss[t]]; both triangles
    are stored so evaluation and vectorization need no symmetrization.
    """

    side: int
    basis: tuple[Exponent, ...]
    label: tuple
    rows: np.ndarray
    cols: np.ndarray
    poss: np.ndarray
    coefs: np.ndarray

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        M = np.zeros((self.side, self.side))
        np.add.at(M, (self.rows, self.cols), self.coefs * y[self.poss])
        return M

    def entry(self, r: int, c: int) -> dict[int, float]:
        """Affine form at (r, c) as position -> coefficient."""
        sel = (self.rows == r) & (self.cols == c)
        out: dict[int, float] = {}
        for p, v in zip(self.poss[sel], self.coefs[sel]):
            out[int(p)] = out.get(int(p), 0.0) + float(v)
        return out


@dataclass
class EqualityRows:
    """Sparse equality system rows(y) = rhs with provenance labels."""

    n_rows: int
    row_idx: np.ndarray
    poss: np.ndarray
    coefs: np.ndarray
    rhs: np.ndarray
    labels: tuple[tuple, ...]

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_rows)
        np.add.at(out, self.row_idx, self.coefs * y[self.poss])
        return out - self.rhs


@dataclass
class SdpProblem:
    """Vector-form SDP: min <c, y> s.t. symbolic blocks PSD and equality rows."""

    index: MomentIndex
    blocks: list[SymbolicBlock]
    eqs: EqualityRows
    c: np.ndarray
    model: str
    k: int
    pop: SparsePOP

    @property
    def n_vars(self) -> int:
        return len(self.index)

    def block_sides(self) -> list[int]:
        return [b.side for b in self.blocks]

    def max_psd_side(self) -> int:
        return max(b.side for b in self.blocks)

    def residuals_at_point(self, u: Sequence[float]) -> tuple[float, float]:
        """(min block eigenvalue, max |equality residual|) at y = [u]."""
        y = self.index.point_vector(u)
        mineig = min(float(np.linalg.eigvalsh(b.evaluate(y)).min()) for b in self.blocks)
        eqres = float(np.abs(self.eqs.evaluate(y)).max()) if self.eqs.n_rows else 0.0
        return mineig, eqres


def moment_matrix_template(index: MomentIndex, block_i: int, t: int) -> SymbolicBlock:
    """Moment matrix of block block_i at degree t: entry (a, b) reads the
    moment at the exponent sum of the a-th and b-th basis monomials."""
    if t > index.k:
        raise AssemblyError(f"t={t} exceeds relaxation order k={index.k}")
    basis = monomial_basis(index.pattern.blocks[block_i], t)
    side = len(basis)
    rows, cols, poss = [], [], []
    for a, ea in enumerate(basis.exponents):
        for b, eb in enumerate(basis.exponents):
            rows.append(a)
            cols.append(b)
            poss.append(index.pos(ea + eb))
    return SymbolicBlock(side, basis.exponents, ("moment", block_i, t),
                         np.array(rows), np.array(cols),
                         np.array(poss, dtype=np.int64),
                         np.ones(side * side))


def localizing_matrix_template(index: MomentIndex, block_i: int, p: Polynomial,
                               label: tuple | None = None) -> SymbolicBlock:
    """Localizing matrix of p on block block_i at the index's order k.

    Side is the basis of degree floor(k - deg(p)/2); entry (a, b) pairs y with
    p shifted by the two basis monomials.
    """
    k = index.k
    if not p.terms:
        raise AssemblyError("cannot localize the zero polynomial")
    if p.degree > 2 * k:
        raise AssemblyError(f"deg(p)={p.degree} exceeds 2k={2 * k}")
    k2 = math.floor(k - p.degree / 2)
    basis = monomial_basis(index.pattern.blocks[block_i], k2)
    side = len(basis)
    terms = p.sorted_terms()
    rows, cols, poss, coefs = [], [], [], []
    for a, ea in enumerate(basis.exponents):
        for b, eb in enumerate(basis.exponents):
            eab = ea + eb
            for g, cg in terms:
                rows.append(a)
                cols.append(b)
                poss.append(index.pos(eab + g))
                coefs.append(cg)
    return SymbolicBlock(side, basis.exponents,
                         label or ("localizer", block_i, str(p)),
                         np.array(rows), np.array(cols),
                         np.array(poss, dtype=np.int64), np.array(coefs))


def localizing_vector_rows(index: MomentIndex, block_i: int, h: Polynomial,
                           label_base: tuple) -> list[tuple[tuple, list[tuple[int, float]]]]:
    """Equality rows <h * x^alpha, y> = 0 over |alpha| <= 2k - deg(h)."""
    if not h.terms:
        raise AssemblyError("cannot build equality rows for the zero polynomial")
    k1 = 2 * index.k - h.degree
    if k1 < 0:
        raise AssemblyError(f"deg(h)={h.degree} exceeds 2k={2 * index.k}")
    basis = monomial_basis(index.pattern.blocks[block_i], k1)
    rows = []
    for alpha in basis.exponents:
        entries: dict[int, float] = {}
        for g, cg in h.sorted_terms():
            pos = index.pos(alpha + g)
            entries[pos] = entries.get(pos, 0.0) + cg
        rows.append((label_base + (alpha,), sorted(entries.items())))
    return rows


def densify(pop: SparsePOP) -> SparsePOP:
    """The same problem on the single block [n] (all constraints pooled)."""
    full = tuple(range(1, pop.n + 1))
    pattern = SparsityPattern(pop.n, (full,))
    return SparsePOP(pop.n, pattern, (pop.objective(),),
                     (tuple(h for hs in pop.eq for h in hs),),
                     (tuple(g for gs in pop.ineq for g in gs),))


def assemble(pop: SparsePOP, k: int, model: str = "sparse-putinar",
             force: bool = False,
             schmudgen_cap: int = SCHMUDGEN_PRODUCT_CAP) -> SdpProblem:
    """Build the order-k relaxation in vector form.

    Dense models run the same assembler on the single-block pooled problem, so
    sparse-vs-dense comparisons differ only in the pattern.  Schmudgen models
    add one localizer per nonempty subset of each block's inequality tuple
    (product polynomials expanded once); subsets whose product exceeds degree
    2k contribute nothing and are skipped.
    """
    if model not in MODELS:
        raise AssemblyError(f"unknown model {model!r}; expected one of {MODELS}")
    if model.startswith("dense"):
        pop = densify(pop)
    mo = min_order(pop)
    if k < mo.k0 and not force:
        raise AssemblyError(f"order k={k} below minimum order k0={mo.k0}")

    index = build_union_index(pop.pattern, k)
    blocks: list[SymbolicBlock] = []
    schmudgen = model.endswith("schmudgen")

    for i in range(pop.m):
        blocks.append(moment_matrix_template(index, i, k))
        gs = pop.ineq[i]
        if schmudgen:
            if len(gs) > schmudgen_cap:
                raise AssemblyError(
                    f"block {i} has {len(gs)} inequalities; schmudgen products "
                    f"are capped at {schmudgen_cap}")
            for r in range(1, len(gs) + 1):
                for J in itertools.combinations(range(len(gs)), r):
                    prod = prod_polys([gs[j] for j in J], pop.n)
                    if prod.degree > 2 * k:
                        continue
                    blocks.append(localizing_matrix_template(
                        index, i, prod, ("localizer-product", i, J)))
        else:
            for j, g in enumerate(gs):
                blocks.append(localizing_matrix_template(index, i, g,
                                                         ("localizer", i, j)))

    row_specs: list[tuple[tuple, list[tuple[int, float]], float]] = []
    for i in range(pop.m):
        for l, h in enumerate(pop.eq[i]):
            for label, entries in localizing_vector_rows(index, i, h, ("eq", i, l)):
                row_specs.append((label, entries, 0.0))
    row_specs.append((("normalization",), [(0, 1.0)], 1.0))

    ridx, poss, coefs, rhs, labels = [], [], [], [], []
    for r, (label, entries, b) in enumerate(row_specs):
        labels.append(label)
        rhs.append(b)
        for p, v in entries:
            ridx.append(r)
            poss.append(p)
            coefs.append(v)
    eqs = EqualityRows(len(row_specs), np.array(ridx), np.array(poss, dtype=np.int64),
                       np.array(coefs), np.array(rhs), tuple(labels))

    c = np.zeros(len(index))
    for i in range(pop.m):
        for e, coef in pop.f_parts[i].sorted_terms():
            c[index.pos(e)] += coef

    return SdpProblem(index, blocks, eqs, c, model, k, pop)
