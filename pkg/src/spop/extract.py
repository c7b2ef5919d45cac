"""Rank analysis, flat truncation detection, atom extraction and stitching.

Extraction follows the multiplication-operator method: factor the truncated
moment matrix at its numeric rank, pick a monomial basis by reduced column
echelon, form per-variable multiplication operators, and joint-diagonalize a
random real combination of them via a real Schur decomposition.  Weights come
from a small linear moment match.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .polyring import Exponent, monomial_basis
from .relax import MomentIndex, SparsePOP, min_order
from .sparsity import RipReport, SparsityPattern, overlaps

RANK_TOL = 1e-6
RANK_GAP_WARN = 10.0
MATCH_TOL = 1e-5
_EXTRACT_SEED = 20240901  # fixed seed for the joint-diagonalization combination


class ExtractionError(RuntimeError):
    pass


@dataclass
class MomentVector:
    """A solved decision vector over the union monomial index."""

    k: int
    values: np.ndarray
    index: MomentIndex

    def moment(self, e: Exponent) -> float:
        return float(self.values[self.index.pos(e)])

    def submatrix(self, variables: Sequence[int], t: int) -> np.ndarray:
        """Moment matrix over the given variable subset at degree t."""
        basis = monomial_basis(tuple(variables), t)
        side = len(basis)
        M = np.empty((side, side))
        for a, ea in enumerate(basis.exponents):
            for b in range(a, side):
                M[a, b] = M[b, a] = self.moment(ea + basis.exponents[b])
        return M


def numeric_rank(M: np.ndarray, tol_rel: float = RANK_TOL) -> int:
    """Count of singular values above tol_rel times the largest one."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    sv = np.abs(np.linalg.eigvalsh(0.5 * (M + M.T)))
    smax = sv.max()
    if smax == 0.0:
        return 0
    return int(np.sum(sv > tol_rel * smax))


def rank_profile(M: np.ndarray, tol_rel: float = RANK_TOL) -> tuple[int, float]:
    """(numeric rank, gap) where gap = sigma_r / sigma_{r+1} (inf if full)."""
    sv = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T))))[::-1]
    r = numeric_rank(M, tol_rel)
    if r == 0 or r == len(sv) or sv[r] == 0.0:
        return r, math.inf
    return r, float(sv[r - 1] / sv[r])


@dataclass
class BlockFlatness:
    block: int
    d: int
    ranks: dict[int, tuple[int, int]]      # t -> (rank M^(t), rank M^(t-d))
    gaps: dict[int, float]                 # t -> spectral gap at the cut
    flat_t: int | None                     # smallest t where the ranks agree
    r: int | None                          # rank at flat_t


@dataclass
class FlatReport:
    blocks: list[BlockFlatness]
    common_t: int | None                   # smallest t flat for every block
    overlap: dict[tuple[int, int], tuple[int, int]]   # (i,j) -> ranks at t, t-1
    overlap_ok: bool
    tol_rel: float
    warnings: list[str] = field(default_factory=list)

    def ranks_at_common_t(self) -> list[int] | None:
        if self.common_t is None:
            return None
        return [b.ranks[self.common_t][0] for b in self.blocks]


def flat_truncation(y: MomentVector, pop: SparsePOP, k: int,
                    tol_rel: float = RANK_TOL) -> FlatReport:
    """Per-block flatness scan over t in [k0, k] plus overlap rank checks.

    A block is flat at t when rank M^(t) equals rank M^(t - d_i); the overlap
    check compares ranks of the overlap moment matrices at the common t and
    t - 1.  Small spectral gaps at the rank cut are reported as warnings since
    the flatness decision is then numerically ambiguous.
    """
    mo = min_order(pop)
    k0 = mo.k0
    blocks: list[BlockFlatness] = []
    warnings: list[str] = []
    for i, blk in enumerate(pop.pattern.blocks):
        d = mo.d[i]
        ranks: dict[int, tuple[int, int]] = {}
        gaps: dict[int, float] = {}
        flat_t = None
        for t in range(k0, k + 1):
            r_hi, gap_hi = rank_profile(y.submatrix(blk, t), tol_rel)
            r_lo, gap_lo = rank_profile(y.submatrix(blk, max(t - d, 0)), tol_rel)
            ranks[t] = (r_hi, r_lo)
            gaps[t] = min(gap_hi, gap_lo)
            if r_hi == r_lo and flat_t is None:
                flat_t = t
            if min(gap_hi, gap_lo) < RANK_GAP_WARN:
                warnings.append(
                    f"block {i}, t={t}: rank gap {min(gap_hi, gap_lo):.2f} < "
                    f"{RANK_GAP_WARN}; flatness decision is ambiguous")
        blocks.append(BlockFlatness(i, d, ranks, gaps, flat_t,
                                    ranks[flat_t][0] if flat_t is not None else None))

    common_t = None
    for t in range(k0, k + 1):
        if all(b.ranks[t][0] == b.ranks[t][1] for b in blocks):
            common_t = t
            break

    ov: dict[tuple[int, int], tuple[int, int]] = {}
    ok = True
    t_ov = common_t if common_t is not None else k
    for (i, j), inter in overlaps(pop.pattern).items():
        r_t = numeric_rank(y.submatrix(inter, t_ov), tol_rel)
        r_tm1 = numeric_rank(y.submatrix(inter, t_ov - 1), tol_rel) if t_ov >= 1 else 0
        ov[(i, j)] = (r_t, r_tm1)
        if r_t != r_tm1:
            ok = False
    if common_t is not None:
        rset = {b.ranks[common_t][0] for b in blocks}
        ok = ok and all(r == next(iter(rset)) for (r, _) in ov.values()) \
            and len(rset) == 1
    return FlatReport(blocks, common_t, ov, ok, tol_rel, warnings)


@dataclass
class AtomicMeasure:
    """Finitely many weighted atoms matching a truncated moment vector."""

    block: int | str
    atoms: tuple[tuple[float, np.ndarray], ...]
    t: int
    residual: float

    @property
    def r(self) -> int:
        return len(self.atoms)

    def points(self) -> np.ndarray:
        return np.array([u for _, u in self.atoms])

    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.atoms])


def _echelon_basis(V: np.ndarray, degrees: np.ndarray, t: int,
                   pivot_tol: float = 1e-9,
                   perturb: float = 0.0) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon of V^T with graded column pivoting.

    Returns (R, pivots) where R expresses every monomial column in the pivot
    columns.  Pivots are restricted to degree <= t-1 columns so the
    multiplication operators stay inside the basis; a small multiplicative
    perturbation of the pivot threshold is used on retry.
    """
    A = V.T.copy()
    r, ncols = A.shape
    pivots: list[int] = []
    tol = pivot_tol * max(1.0, np.abs(A).max()) * (1.0 + perturb)
    row = 0
    for col in range(ncols):
        if row >= r:
            break
        if degrees[col] > t - 1 and len(pivots) < r:
            # a pivot this deep would push x_l * basis outside degree t
            continue
        piv = row + int(np.argmax(np.abs(A[row:, col])))
        if abs(A[piv, col]) <= tol:
            continue
        A[[row, piv]] = A[[piv, row]]
        A[row] /= A[row, col]
        mask = np.arange(r) != row
        A[mask] -= np.outer(A[mask, col], A[row])
        pivots.append(col)
        row += 1
    if row < r:
        raise ExtractionError(
            f"echelon degeneracy: found {row} pivots of {r} within degree {t - 1}")
    return A, pivots


def extract_atoms(y: MomentVector, block: int, t: int, r: int,
                  tol: float = 1e-8) -> AtomicMeasure:
    """Extract an r-atom measure from the block's degree-2t moment truncation.

    Requires flatness at t with numeric rank r.  Fails on echelon degeneracy
    (after one retry with a perturbed pivot threshold) and on significantly
    negative weights.
    """
    variables = y.index.pattern.blocks[block]
    basis = monomial_basis(variables, t)
    M = y.submatrix(variables, t)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    if r > len(w) or w[r - 1] <= 0:
        raise ExtractionError(f"moment matrix has numeric rank < r={r}")
    F = V[:, :r] * np.sqrt(w[:r])          # M ~ F F^T, side x r
    degrees = np.array([e.degree for e in basis.exponents])

    last_err: Exception | None = None
    for perturb in (0.0, 1e3):
        try:
            R, pivots = _echelon_basis(F, degrees, t, perturb=perturb)
            break
        except ExtractionError as exc:
            last_err = exc
    else:
        raise ExtractionError(f"basis selection failed: {last_err}")

    col_of = {e: i for i, e in enumerate(basis.exponents)}
    pivot_exps = [basis.exponents[p] for p in pivots]
    mults = []
    for var in variables:
        Nv = np.empty((r, r))
        xe = Exponent.make({var: 1})
        for jcol, pe in enumerate(pivot_exps):
            target = pe + xe
            if target not in col_of:
                raise ExtractionError(
                    f"basis not closed under multiplication by x{var}")
            Nv[:, jcol] = R[:, col_of[target]]
        mults.append(Nv)

    # random real convex combination, then a real Schur joint diagonalization
    rng = np.random.default_rng(_EXTRACT_SEED)
    lam = rng.random(len(mults)) + 0.5
    lam /= lam.sum()
    comb = sum(l * Nv for l, Nv in zip(lam, mults))
    Tq, Q = sla.schur(comb, output="real")
    points = np.array([[float(Q[:, j] @ Nv @ Q[:, j]) for Nv in mults]
                       for j in range(r)])

    # weights from the moment match on the pivot monomials plus the constant
    fit_exps = [Exponent.make({})] + pivot_exps
    Amat = np.array([[_eval_block_exponent(pe, pt, variables)
                      for pt in points] for pe in fit_exps])
    bvec = np.array([y.moment(pe) for pe in fit_exps])
    weights, *_ = np.linalg.lstsq(Amat, bvec, rcond=None)
    if weights.min() < -1e-8:
        raise ExtractionError(f"negative atom weight {weights.min():.3e}")
    weights = np.clip(weights, 0.0, None)

    # reconstruction residual over the full degree-2t truncation
    full = monomial_basis(variables, 2 * t)
    resid = 0.0
    for e in full.exponents:
        approx = float(sum(wj * _eval_block_exponent(e, pt, variables)
                           for wj, pt in zip(weights, points)))
        resid = max(resid, abs(approx - y.moment(e)))

    atoms = tuple(sorted(((float(wj), pt) for wj, pt in zip(weights, points)),
                         key=lambda a: tuple(a[1])))
    return AtomicMeasure(block, atoms, t, resid)


def _eval_block_exponent(e: Exponent, point: np.ndarray,
                         variables: Sequence[int]) -> float:
    pos = {v: i for i, v in enumerate(variables)}
    val = 1.0
    for v, p in e.powers:
        val *= point[pos[v]] ** p
    return val


@dataclass
class StitchResult:
    status: str                  # stitched | refused | unstitchable
    points: list[np.ndarray]
    detail: str = ""


def stitch(measures: Sequence[AtomicMeasure], pattern: SparsityPattern,
           rip: RipReport, match_tol: float = MATCH_TOL) -> StitchResult:
    """Assemble global points from per-block atoms by matching overlap
    projections along the running-intersection ordering.

    Requires the ordering to exist, the blocks to form a connected cover and
    all blocks to carry the same atom count; anything else is refused.  The
    match is greedy nearest-neighbour per overlap with a bipartite fallback,
    ties broken by index.
    """
    if not (rip.holds and rip.connected_cover):
        return StitchResult("refused", [],
                            "running intersection ordering or connected cover missing")
    counts = {m.r for m in measures}
    if len(counts) != 1:
        return StitchResult("refused", [], f"unequal atom counts {sorted(counts)}")
    r = counts.pop()
    assert rip.ordering is not None
    order = rip.ordering
    m0 = measures[order[0]]
    blk0 = pattern.blocks[order[0]]
    partial: list[dict[int, float]] = [
        {v: float(pt[i]) for i, v in enumerate(blk0)} for _, pt in m0.atoms]

    for pos in range(1, len(order)):
        bi = order[pos]
        blk = pattern.blocks[bi]
        meas = measures[bi]
        inter = [v for v in blk if any(v in p for p in partial)]
        proj_partial = np.array([[p[v] for v in inter] for p in partial]) \
            if inter else np.zeros((r, 0))
        proj_atoms = np.array([[pt[blk.index(v)] for v in inter]
                               for _, pt in meas.atoms]) \
            if inter else np.zeros((r, 0))
        if inter:
            dist = np.abs(proj_partial[:, None, :] - proj_atoms[None, :, :]).max(axis=2)
        else:
            dist = np.zeros((r, r))
        # greedy pass
        assign = [-1] * r
        used: set[int] = set()
        for a in range(r):
            jbest = min((j for j in range(r) if j not in used),
                        key=lambda j: (dist[a, j], j))
            assign[a] = jbest
            used.add(jbest)
        if any(dist[a, assign[a]] > match_tol for a in range(r)):
            # bipartite rematch before giving up
            from scipy.optimize import linear_sum_assignment
            rows, cols = linear_sum_assignment(dist)
            assign = [int(cols[list(rows).index(a)]) for a in range(r)]
            bad = [a for a in range(r) if dist[a, assign[a]] > match_tol]
            if bad:
                a = bad[0]
                return StitchResult(
                    "unstitchable", [],
                    f"block {bi}: atom projection mismatch "
                    f"{dist[a, assign[a]]:.2e} > {match_tol:g} on overlap {inter}")
        for a in range(r):
            _, pt = meas.atoms[assign[a]]
            for i, v in enumerate(blk):
                partial[a].setdefault(v, float(pt[i]))

    points = [np.array([p[v] for v in range(1, pattern.n + 1)]) for p in partial]
    return StitchResult("stitched", points)


def combine_candidates(measures: Sequence[AtomicMeasure], pattern: SparsityPattern,
                       match_tol: float = MATCH_TOL,
                       limit: int = 1000) -> list[np.ndarray]:
    """Candidate global points: every overlap-consistent combination picking
    one atom per block.  Sound only together with a feasibility/value check on
    each candidate; used when the matched-projection route does not apply.
    """
    cover = set()
    for b in pattern.blocks:
        cover |= set(b)
    if cover != set(range(1, pattern.n + 1)):
        return []
    partial: list[dict[int, float]] = [{}]
    for bi, blk in enumerate(pattern.blocks):
        meas = measures[bi]
        new: list[dict[int, float]] = []
        for p in partial:
            for _, pt in meas.atoms:
                ok = all(abs(p[v] - pt[i]) <= match_tol
                         for i, v in enumerate(blk) if v in p)
                if ok:
                    q = dict(p)
                    for i, v in enumerate(blk):
                        q.setdefault(v, float(pt[i]))
                    new.append(q)
            if len(new) > limit:
                raise ExtractionError(f"candidate combination exceeds limit {limit}")
        partial = new
        if not partial:
            return []
    pts = [np.array([p[v] for v in range(1, pattern.n + 1)]) for p in partial]
    # deduplicate near-identical candidates
    out: list[np.ndarray] = []
    for p in pts:
        if not any(np.abs(p - q).max() <= match_tol for q in out):
            out.append(p)
    return out


@dataclass
class ValueVerdict:
    verdict: str                 # tight-minimizer | infeasible-point | not-certified
    value: float
    violation: float
    gap: float
    order_gap_ok: bool = True


def certify_by_value(x: Sequence[float], pop: SparsePOP, bound: float,
                     tol: float = 1e-5,
                     order_values: tuple[float, float] | None = None) -> ValueVerdict:
    """Certify a candidate minimizer against the relaxation bound.

    tight-minimizer requires feasibility within tol and f(x) within
    tol*(1+|bound|) of the bound.  When extraction happened at an order t
    below the solved order k, pass order_values=(f_t, f_k); the verdict then
    also requires those to agree, per the two-level acceptance rule.
    """
    viol = pop.constraint_violation(x)
    val = pop.objective().eval(x)
    gap = val - bound
    order_ok = True
    if order_values is not None:
        ft, fk = order_values
        order_ok = abs(ft - fk) <= tol * (1.0 + abs(fk))
    if viol > tol:
        return ValueVerdict("infeasible-point", val, viol, gap, order_ok)
    if gap <= tol * (1.0 + abs(bound)) and order_ok:
        return ValueVerdict("tight-minimizer", val, viol, gap, order_ok)
    return ValueVerdict("not-certified", val, viol, gap, order_ok)
