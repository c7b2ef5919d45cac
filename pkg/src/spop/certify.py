"""Production and independent verification of decomposition certificates.

A tightness certificate at order k consists of a bound gamma, per-block
polynomials p_i summing to -gamma, and per-block Gram/multiplier data placing
each f_i + p_i (+ epsilon) in the block's truncated ideal-plus-cone.  All
verification is by explicit polynomial re-expansion of the stored data, never
by trusting solver residuals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .polyring import Exponent, Polynomial, prod_polys, support_check
from .relax import SdpProblem, SparsePOP, SparsityPattern, assemble, min_order
from .sdpcore import SdpSolution, SdpStandard, solve

GRAM_EIG_FLOOR = -1e-9
CERT_TOL = 1e-5


class CertificateError(RuntimeError):
    pass


def gram_to_poly(basis: Sequence[Exponent], Q: np.ndarray, n: int,
                 factor: Polynomial | None = None) -> Polynomial:
    """Expand basis' * Q * basis (optionally times a factor polynomial)."""
    acc: dict[Exponent, float] = {}
    side = len(basis)
    for a in range(side):
        for b in range(side):
            if Q[a, b] == 0.0:
                continue
            e = basis[a] + basis[b]
            acc[e] = acc.get(e, 0.0) + float(Q[a, b])
    p = Polynomial.from_terms(n, [(c, e) for e, c in acc.items()], drop_tol=0.0)
    if factor is not None:
        p = p * factor
    return p


def floor_gram(Q: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetrize and clip tiny negative eigenvalues; returns (floored, min eig)."""
    Qs = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Qs)
    lam_min = float(w.min())
    return (V * np.clip(w, 0.0, None)) @ V.T, lam_min


@dataclass
class TightnessCertificate:
    """Bound certificate: sum(p_i) + gamma = 0 and f_i + p_i (+eps) in cone_i."""

    k: int
    model: str
    gamma: float
    p: list[Polynomial]
    gram: dict[tuple, tuple[tuple[Exponent, ...], np.ndarray]]   # (i, kind...) -> data
    ideal_mult: dict[tuple[int, int], Polynomial]
    epsilon: float = 0.0
    identity_residual: float = 0.0
    membership_residuals: tuple[float, ...] = ()


@dataclass
class InfeasibilityCertificate:
    """Empty-set certificate: sum(p_i) = 0 and -1 + p_i in each block cone."""

    k: int
    p: list[Polynomial]
    gram: dict[tuple, tuple[tuple[Exponent, ...], np.ndarray]]
    ideal_mult: dict[tuple[int, int], Polynomial]
    linking_residual: float = 0.0
    membership_residuals: tuple[float, ...] = ()


def _block_generator(pop: SparsePOP, label: tuple) -> Polynomial:
    """Constraint polynomial a Gram block multiplies in the expansion."""
    kind = label[0]
    i = label[1]
    if kind == "moment":
        return Polynomial.constant(pop.n, 1.0)
    if kind == "localizer":
        return pop.ineq[i][label[2]]
    if kind == "localizer-product":
        return prod_polys([pop.ineq[i][j] for j in label[2]], pop.n)
    raise CertificateError(f"unexpected block label {label}")


def _expansions_from_dual(sol: SdpSolution, prob: SdpProblem,
                          scale: float = 1.0):
    """Per-block cone members s_i (expanded), Gram store and multipliers.

    The dual multiplier blocks of the moment form are the Gram matrices of the
    sum-of-squares side; equality-row multipliers aggregate into one
    polynomial per constraint (rows dropped by preprocessing carry zero).
    """
    pop = prob.pop
    grams: dict[tuple, tuple[tuple[Exponent, ...], np.ndarray]] = {}
    s = [Polynomial.zero(pop.n) for _ in range(pop.m)]
    for blk, X in zip(prob.blocks, sol.X):
        label = blk.label
        i = label[1]
        Q = scale * 0.5 * (X + X.T)
        grams[label] = (blk.basis, Q)
        s[i] = s[i] + gram_to_poly(blk.basis, Q, pop.n, _block_generator(pop, label))
    mults: dict[tuple[int, int], Polynomial] = {}
    for r, label in enumerate(prob.eqs.labels):
        if label[0] != "eq":
            continue
        _, i, l, alpha = label
        w = scale * float(sol.nu[r])
        if w == 0.0:
            continue
        key = (i, l)
        mono = Polynomial.from_terms(pop.n, [(w, alpha)])
        mults[key] = mults.get(key, Polynomial.zero(pop.n)) + mono
    for (i, l), phi in mults.items():
        s[i] = s[i] + phi * pop.eq[i][l]
    return s, grams, mults


def split_representation(sol: SdpSolution, prob: SdpProblem,
                         gap_tol: float = 1e-4) -> TightnessCertificate:
    """Recover the per-block decomposition of f - gamma from a solved moment
    relaxation: p_i is the block's cone member minus its objective part.

    Refuses when the solve did not close the duality gap well enough for the
    Gram data to mean anything.
    """
    if sol.status not in ("optimal", "near-optimal"):
        raise CertificateError(f"no certificate from a solve with status {sol.status}")
    pop = prob.pop
    norm_rows = [r for r, lab in enumerate(prob.eqs.labels) if lab[0] == "normalization"]
    gamma = float(sol.nu[norm_rows[0]])
    gap = abs(gamma - sol.pobj) / (1.0 + abs(sol.pobj))
    if gap > gap_tol:
        raise CertificateError(
            f"strong-duality gap {gap:.2e} too large to recover Gram data")
    s, grams, mults = _expansions_from_dual(sol, prob)
    p = [s[i] - pop.f_parts[i] for i in range(pop.m)]
    ident = Polynomial.constant(pop.n, gamma)
    for pi in p:
        ident = ident + pi
    memb = tuple((pop.f_parts[i] + p[i] - s[i]).coeff_inf_norm() for i in range(pop.m))
    return TightnessCertificate(prob.k, prob.model, gamma, p, grams, mults,
                                0.0, ident.coeff_inf_norm(), memb)


@dataclass
class CertificateReport:
    passed: bool
    identity_residual: float
    membership_residuals: tuple[float, ...]
    gram_min_eig: float
    epsilon: float
    value_residuals: tuple[float, ...] | None = None
    certifies_minimum: bool = False
    detail: str = ""


def verify_certificate(cert: TightnessCertificate, pop: SparsePOP,
                       minimizers: Sequence[Sequence[float]] | None = None,
                       tol: float = CERT_TOL) -> CertificateReport:
    """Re-check both certificate invariants from the stored data alone.

    Gram matrices are symmetrized and eigenvalue-floored; anything below the
    floor invalidates.  With candidate minimizers supplied, additionally
    checks that every f_i + p_i vanishes at them (up to epsilon), which is
    what upgrades a bound certificate to a certificate of the minimum.
    """
    n = pop.n
    ident = Polynomial.constant(n, cert.gamma)
    for i, pi in enumerate(cert.p):
        if not support_check(pi, pop.pattern.blocks[i]):
            return CertificateReport(False, np.inf, (), 0.0, cert.epsilon,
                                     detail=f"p_{i} leaves its block")
        ident = ident + pi
    identity_residual = ident.coeff_inf_norm()

    s = [Polynomial.zero(n) for _ in range(pop.m)]
    min_eig = np.inf
    for label, (basis, Q) in cert.gram.items():
        i = label[1]
        Qf, lam = floor_gram(np.asarray(Q))
        min_eig = min(min_eig, lam)
        s[i] = s[i] + gram_to_poly(basis, Qf, n, _block_generator(pop, label))
    for (i, l), phi in cert.ideal_mult.items():
        s[i] = s[i] + phi * pop.eq[i][l]
    memb = []
    for i in range(pop.m):
        target = pop.f_parts[i] + cert.p[i] + Polynomial.constant(n, cert.epsilon)
        memb.append((target - s[i]).coeff_inf_norm())

    scale = 1.0 + max(abs(cert.gamma), max((pi.coeff_inf_norm() for pi in cert.p),
                                           default=0.0))
    ok = (identity_residual <= tol * scale
          and all(rv <= tol * scale for rv in memb)
          and (min_eig == np.inf or min_eig >= GRAM_EIG_FLOOR))

    value_res = None
    certifies = False
    if minimizers is not None and len(minimizers) > 0:
        vals = []
        for x in minimizers:
            worst = 0.0
            for i in range(pop.m):
                worst = max(worst, abs(pop.f_parts[i].eval(x) + cert.p[i].eval(x)))
            vals.append(worst)
        value_res = tuple(vals)
        certifies = ok and all(v <= tol * scale + cert.epsilon for v in vals)
    return CertificateReport(ok, identity_residual, tuple(memb),
                             float(min_eig if min_eig != np.inf else 0.0),
                             cert.epsilon, value_res, certifies)


@dataclass
class MembershipResult:
    member: bool | None            # None = indeterminate (solver stall)
    bound: float
    residual: float
    gram: dict[tuple, tuple[tuple[Exponent, ...], np.ndarray]] | None
    ideal_mult: dict[tuple[int, int], Polynomial] | None
    separating_y: np.ndarray | None
    status: str


def check_membership(q: Polynomial, block: Sequence[int],
                     h: Sequence[Polynomial], g: Sequence[Polynomial], k: int,
                     cone: str = "qmodule", tol: float = 1e-7,
                     cap: int | None = None) -> MembershipResult:
    """Decide q in Ideal[h]_2k + QM[g]_2k (or the preordering variant) on a block.

    Runs the block's order-k moment program with objective q and normalized
    constant moment: a nonnegative optimum yields Gram data reconstructing q
    (up to the verified residual); a negative optimum yields the optimal
    moment vector itself as a separating functional with <q, y> < 0.
    """
    if cone not in ("qmodule", "preordering"):
        raise CertificateError(f"unknown cone {cone!r}")
    if not support_check(q, block):
        raise CertificateError(f"q is not supported on block {tuple(block)}")
    n = q.n
    pattern = SparsityPattern.make(n, [list(block)])
    mini = SparsePOP(n, pattern, (q,), (tuple(h),), (tuple(g),))
    model = "sparse-putinar" if cone == "qmodule" else "sparse-schmudgen"
    prob = assemble(mini, k, model)
    sol = solve(SdpStandard.from_problem(prob), cap=cap)
    scale = 1.0 + q.coeff_inf_norm()

    if sol.status == "unbounded-certificate" and sol.ray is not None:
        return MembershipResult(False, -np.inf, np.inf, None, None,
                                sol.ray["y"], sol.status)
    if sol.status not in ("optimal", "near-optimal"):
        return MembershipResult(None, sol.pobj, np.inf, None, None, None, sol.status)

    bound = sol.pobj
    if bound < -tol * scale:
        return MembershipResult(False, bound, np.inf, None, None, sol.y, sol.status)

    s, grams, mults = _expansions_from_dual(sol, prob)
    # q - bound is the reconstructed member; fold a nonnegative bound back
    # into the constant Gram entry so the data reconstructs q itself
    if bound > 0:
        key = ("moment", 0, k)
        basis, Q = grams[key]
        Q = Q.copy()
        Q[0, 0] += bound
        grams[key] = (basis, Q)
        s[0] = s[0] + Polynomial.constant(n, bound)
    residual = (q - s[0]).coeff_inf_norm()
    member = residual <= 1e-6 * scale
    if not member:
        return MembershipResult(None, bound, residual, None, None, None,
                                "residual-too-large")
    return MembershipResult(True, bound, residual, grams, mults, None, sol.status)


def epsilon_certificate(cert: TightnessCertificate, pop: SparsePOP,
                        epsilon: float,
                        cap: int | None = None) -> TightnessCertificate:
    """Re-derive the Gram data of a certificate with slack epsilon added to
    every block membership, keeping the same gamma and p_i.

    Useful when the plain membership is not attained but the relaxation is
    tight; the result is labeled as an epsilon-certificate.
    """
    if epsilon <= 0:
        raise CertificateError("epsilon must be positive")
    cone = "preordering" if cert.model.endswith("schmudgen") else "qmodule"
    grams: dict[tuple, tuple[tuple[Exponent, ...], np.ndarray]] = {}
    mults: dict[tuple[int, int], Polynomial] = {}
    memb = []
    for i in range(pop.m):
        target = pop.f_parts[i] + cert.p[i] + Polynomial.constant(pop.n, epsilon)
        res = check_membership(target, pop.pattern.blocks[i], pop.eq[i],
                               pop.ineq[i], cert.k, cone=cone, cap=cap)
        if not res.member:
            raise CertificateError(
                f"block {i}: f_i + p_i + {epsilon:g} not recovered "
                f"(status {res.status})")
        for label, data in res.gram.items():
            grams[(label[0], i) + label[2:]] = data
        for (_, l), phi in res.ideal_mult.items():
            mults[(i, l)] = phi
        memb.append(res.residual)
    return TightnessCertificate(cert.k, cert.model, cert.gamma, list(cert.p),
                                grams, mults, epsilon,
                                cert.identity_residual, tuple(memb))


def infeasibility_from_ray(sol: SdpSolution, prob: SdpProblem) -> InfeasibilityCertificate:
    """Turn an improving ray of a moment relaxation into an emptiness
    certificate: the normalized ray data satisfies 1 + sum_i s_i = 0 with each
    s_i in block i's cone, which splits as p_i := m*s_i + 1."""
    if sol.status != "infeasible-certificate" or sol.ray is None \
            or sol.ray.get("kind") != "dual-ray":
        raise CertificateError("solution carries no usable improving ray")
    pop = prob.pop
    ray_sol = SdpSolution(sol.status, sol.y, sol.ray["X"], sol.Z,
                          _expand_ray_nu(sol, prob), sol.pobj, 1.0,
                          sol.iterations, sol.residuals, sol.dropped_rows, [])
    m = pop.m
    s, grams, mults = _expansions_from_dual(ray_sol, prob, scale=float(m))
    p = [s[i] + Polynomial.constant(pop.n, 1.0) for i in range(m)]
    link = Polynomial.zero(pop.n)
    for pi in p:
        link = link + pi
    memb = tuple(((Polynomial.constant(pop.n, -1.0) + p[i]) - s[i]).coeff_inf_norm()
                 for i in range(m))
    return InfeasibilityCertificate(prob.k, p, grams, mults,
                                    link.coeff_inf_norm(), memb)


def sparse_infeasibility(pop: SparsePOP, k: int, cap: int | None = None):
    """Search for an order-k certificate that the feasible set is empty.

    The block preordering relaxation with zero objective is feasible exactly
    when no certificate exists at this order; an improving ray of its
    multiplier side normalizes to polynomials p_i with sum(p_i) = 0 and
    -1 + p_i in each block's truncated ideal + preordering.

    Returns (certificate or None, status-string).
    """
    zero = tuple(Polynomial.zero(pop.n) for _ in range(pop.m))
    pop0 = SparsePOP(pop.n, pop.pattern, zero, pop.eq, pop.ineq)
    prob = assemble(pop0, k, "sparse-schmudgen", force=True)
    sol = solve(SdpStandard.from_problem(prob), cap=cap)
    if sol.status in ("optimal", "near-optimal"):
        return None, f"not found at k={k} (relaxation feasible)"
    if sol.status != "infeasible-certificate" or sol.ray is None:
        return None, f"indeterminate (solver status {sol.status})"
    if sol.ray.get("kind") == "inconsistent-rows":
        # contradictory equality rows certify emptiness too, but carry no Gram
        # data to split; report instead of fabricating
        return None, "indeterminate (inconsistent equality rows)"
    return infeasibility_from_ray(sol, prob), "found"


def _expand_ray_nu(sol: SdpSolution, prob: SdpProblem) -> np.ndarray:
    nu = np.zeros(prob.eqs.n_rows)
    ray_nu = sol.ray["nu"]
    kept = [r for r in range(prob.eqs.n_rows) if r not in sol.dropped_rows]
    if len(ray_nu) == len(nu):
        return np.asarray(ray_nu)
    nu[kept] = ray_nu
    return nu


def verify_infeasibility(cert: InfeasibilityCertificate, pop: SparsePOP,
                         tol: float = CERT_TOL) -> CertificateReport:
    """Independent re-expansion check of an emptiness certificate."""
    n = pop.n
    link = Polynomial.zero(n)
    for pi in cert.p:
        link = link + pi
    s = [Polynomial.zero(n) for _ in range(pop.m)]
    min_eig = np.inf
    for label, (basis, Q) in cert.gram.items():
        i = label[1]
        Qf, lam = floor_gram(np.asarray(Q))
        min_eig = min(min_eig, lam)
        s[i] = s[i] + gram_to_poly(basis, Qf, n, _block_generator(pop, label))
    for (i, l), phi in cert.ideal_mult.items():
        s[i] = s[i] + phi * pop.eq[i][l]
    memb = tuple((Polynomial.constant(n, -1.0) + cert.p[i] - s[i]).coeff_inf_norm()
                 for i in range(pop.m))
    scale = 1.0 + max((pi.coeff_inf_norm() for pi in cert.p), default=0.0)
    ok = (link.coeff_inf_norm() <= tol * scale
          and all(rv <= tol * scale for rv in memb)
          and (min_eig == np.inf or min_eig >= GRAM_EIG_FLOOR))
    return CertificateReport(ok, link.coeff_inf_norm(), memb,
                             float(min_eig if min_eig != np.inf else 0.0), 0.0)
