"""Primal-dual interior-point solver for block-diagonal SDPs at desk scale.

The native problem shape is the vector form produced by the assembler:

    min  c'y + c0   s.t.   F0_j + sum_p y_p F_{j,p}  >= 0   (PSD blocks)
                           G y = d                          (equality rows)

The solver runs an infeasible-start HKM predictor-corrector with the Mehrotra
heuristic on the pair (y, S) / (X, nu), where S_j are the PSD slacks and X_j
the block multipliers.  At optimality the X_j are exactly the Gram matrices of
the dual sum-of-squares representation and nu carries the equality-row
multipliers, so one solve yields both the bound and the certificate data.

Everything is dense per block and fully deterministic: fixed starting point,
no randomized pivoting, same input gives a bit-identical iteration log.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .relax import SdpProblem

DEFAULT_PSD_CAP = 2000
CAP_ENV_VAR = "SPOP_PSD_CAP"

# separate knobs: feasibility tolerance is what `solve` drives to zero, the
# rank tolerance only governs the preprocessing row-rank decisions
DEFAULT_TOL = 1e-8
ROW_RANK_TOL = 1e-10

_FSTACK_BUDGET = 4 * 10 ** 7  # entries; above this the Schur build loops


class SolverError(RuntimeError):
    pass


class DimensionCapError(SolverError):
    """Problem dimension exceeds the configured cap (the out-of-memory analog)."""


def resolve_cap(cap: int | None = None) -> int:
    if cap is not None:
        return cap
    env = os.environ.get(CAP_ENV_VAR)
    return int(env) if env else DEFAULT_PSD_CAP


# ---------------------------------------------------------------------------
# dense symmetric kernels


def eig_sym(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition (ascending eigenvalues)."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12 * (1 + np.abs(A).max())):
        raise SolverError("eig_sym requires a symmetric matrix")
    return np.linalg.eigh(0.5 * (A + A.T))


def chol_spd(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises SolverError if not positive definite."""
    try:
        return np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise SolverError("matrix is not positive definite") from exc


def psd_project(A: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (eigenvalue clipping)."""
    w, V = eig_sym(A)
    return (V * np.clip(w, 0.0, None)) @ V.T


# ---------------------------------------------------------------------------
# standard-form container


@dataclass
class BlockData:
    side: int
    loc: np.ndarray            # global y positions this block reads
    A: sp.csr_matrix           # (n_loc, side*side); row l = vec(F at loc[l])
    label: tuple
    F0: np.ndarray | None = None

    def fstack(self) -> np.ndarray | None:
        if self.A.shape[0] * self.side * self.side > _FSTACK_BUDGET:
            return None
        return np.asarray(self.A.todense()).reshape(-1, self.side, self.side)


@dataclass
class SdpStandard:
    """Solver-native data plus provenance labels for certificate recovery."""

    N: int
    c: np.ndarray
    c0: float
    blocks: list[BlockData]
    G: sp.csr_matrix
    d: np.ndarray
    row_labels: tuple[tuple, ...]
    block_labels: tuple[tuple, ...]

    @staticmethod
    def from_problem(prob: SdpProblem) -> "SdpStandard":
        blocks = []
        for b in prob.blocks:
            loc = np.unique(b.poss)
            local = {int(p): i for i, p in enumerate(loc)}
            rows = np.fromiter((local[int(p)] for p in b.poss), dtype=np.int64,
                               count=len(b.poss))
            cols = b.rows.astype(np.int64) * b.side + b.cols.astype(np.int64)
            A = sp.csr_matrix((b.coefs, (rows, cols)),
                              shape=(len(loc), b.side * b.side))
            A.sum_duplicates()
            blocks.append(BlockData(b.side, loc, A, b.label))
        eqs = prob.eqs
        G = sp.csr_matrix((eqs.coefs, (eqs.row_idx, eqs.poss)),
                          shape=(eqs.n_rows, prob.n_vars))
        return SdpStandard(prob.n_vars, prob.c.copy(), 0.0, blocks, G,
                           eqs.rhs.copy(), eqs.labels,
                           tuple(b.label for b in prob.blocks))

    def total_side(self) -> int:
        return sum(b.side for b in self.blocks)


@dataclass
class SdpSolution:
    status: str                       # optimal | near-optimal | infeasible-certificate
    #                                 # | unbounded-certificate | stalled
    y: np.ndarray
    X: list[np.ndarray]               # block multipliers (Gram data at optimum)
    Z: list[np.ndarray]               # PSD slacks of the vector form
    nu: np.ndarray                    # multipliers for all original rows (dropped -> 0)
    pobj: float                       # c'y + c0
    dobj: float                       # -<F0, X> + d'nu
    iterations: int
    residuals: dict[str, float]
    dropped_rows: tuple[int, ...]
    log: list[dict] = field(default_factory=list)
    ray: dict | None = None

    @property
    def bound(self) -> float:
        return self.pobj


# ---------------------------------------------------------------------------
# preprocessing: equality-row rank pass


def _row_rank_pass(G: sp.csr_matrix, d: np.ndarray,
                   rank_tol: float = ROW_RANK_TOL):
    """Drop linearly dependent equality rows (duplicates are frequent since
    shared constraints produce identical rows across blocks).

    Returns (kept_idx, dropped_idx, inconsistent: bool, witness).  When a
    dropped row is inconsistent with the kept ones the witness is a row-space
    combination lam with lam'G = 0 but lam'd != 0.
    """
    R = G.shape[0]
    if R == 0:
        return np.array([], dtype=int), np.array([], dtype=int), False, None
    Gd = np.asarray(G.todense())
    Q, Rf, piv = sla.qr(Gd.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rf))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > rank_tol * diag[0]))
    kept = np.sort(piv[:rank])
    dropped = np.sort(piv[rank:])
    if len(dropped) == 0:
        return kept, dropped, False, None
    Gk = Gd[kept]
    dk = d[kept]
    # coefficients expressing each dropped row over the kept rows
    coefs, *_ = np.linalg.lstsq(Gk.T, Gd[dropped].T, rcond=None)
    pred = coefs.T @ dk
    gap = np.abs(pred - d[dropped])
    scale = 1.0 + float(np.abs(d).max(initial=0.0))
    bad = np.where(gap > 1e-8 * scale)[0]
    if len(bad):
        b = bad[0]
        lam = np.zeros(R)
        lam[dropped[b]] = -1.0
        lam[kept] = coefs[:, b]
        return kept, dropped, True, lam
    return kept, dropped, False, None


# ---------------------------------------------------------------------------
# the interior-point loop


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest step a with M + a*D staying PD, where L = chol(M)."""
    W = sla.solve_triangular(L, D, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T)).min()
    if lam >= -1e-14:
        return np.inf
    return -1.0 / lam


def solve(std: SdpStandard, tol: float = DEFAULT_TOL, max_iter: int = 200,
          cap: int | None = None, verbose: bool = False) -> SdpSolution:
    """Solve the vector-form SDP.

    On status "optimal", the two objective values agree to tol relatively and
    all block iterates are PSD up to the step-length safeguard.  Infeasible or
    unbounded problems are reported through normalized improving rays instead
    of an exception.
    """
    cap_val = resolve_cap(cap)
    if std.N > cap_val:
        raise DimensionCapError(
            f"SDP dimension {std.N} exceeds cap {cap_val}; "
            f"set {CAP_ENV_VAR} to override")

    N = std.N
    c = std.c
    kept, dropped, inconsistent, lam = _row_rank_pass(std.G, std.d)
    if inconsistent:
        nu = np.zeros(std.G.shape[0])
        return SdpSolution("infeasible-certificate", np.zeros(N),
                           [np.zeros((b.side, b.side)) for b in std.blocks],
                           [np.zeros((b.side, b.side)) for b in std.blocks],
                           nu, math.nan, math.nan, 0,
                           {"prim": math.inf, "dual": math.inf, "gap": math.inf},
                           tuple(int(i) for i in dropped),
                           ray={"kind": "inconsistent-rows", "lam": lam})
    Gk = np.asarray(std.G[kept].todense()) if len(kept) else np.zeros((0, N))
    dk = std.d[kept] if len(kept) else np.zeros(0)
    R = Gk.shape[0]

    blocks = std.blocks
    J = len(blocks)
    total_side = std.total_side()
    fstacks = [b.fstack() for b in blocks]

    scale = 1.0 + max(float(np.abs(c).max(initial=0.0)),
                      float(np.abs(dk).max(initial=0.0)))
    y = np.zeros(N)
    nu = np.zeros(R)
    S = [scale * np.eye(b.side) for b in blocks]
    X = [scale * np.eye(b.side) for b in blocks]

    d_scale = 1.0 + float(np.abs(dk).max(initial=0.0))
    c_scale = 1.0 + float(np.abs(c).max(initial=0.0))
    tau = 0.98
    log: list[dict] = []
    status = "stalled"
    tiny_steps = 0
    ray = None
    # degenerate problems (no strictly feasible moment vector, e.g. finite
    # equality varieties) let the multiplier iterates drift late while the
    # vector side keeps improving; track the two sides' best iterates
    # separately and fall back on them
    best_err = math.inf
    best_age = 0
    best_p_key = math.inf
    best_p = None              # (y, S, pobj)
    best_d_key = math.inf
    best_d = None              # (X, nu, dobj)

    def block_residuals():
        """R_prim_j = F0 + A_j(y) - S_j, plus linear and dual residuals."""
        Rp = []
        rd = c.copy()
        for j, b in enumerate(blocks):
            Ay = np.asarray(b.A.T @ y[b.loc]).reshape(b.side, b.side)
            if b.F0 is not None:
                Ay = Ay + b.F0
            Rp.append(Ay - S[j])
            rd[b.loc] -= b.A @ X[j].reshape(-1)
        if R:
            rd -= Gk.T @ nu
        rl = dk - Gk @ y if R else np.zeros(0)
        return Rp, rl, rd

    it = 0
    for it in range(1, max_iter + 1):
        Rp, rl, rd = block_residuals()
        mu = sum(float(np.tensordot(X[j], S[j])) for j in range(J)) / total_side
        pobj = float(c @ y) + std.c0
        dobj = float(dk @ nu) if R else 0.0
        for j, b in enumerate(blocks):
            if b.F0 is not None:
                dobj -= float(np.tensordot(b.F0, X[j]))
        err_prim = max(max((float(np.abs(M).max()) for M in Rp), default=0.0),
                       float(np.abs(rl).max(initial=0.0))) / d_scale
        err_dual = float(np.abs(rd).max(initial=0.0)) / c_scale
        err_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        log.append({"iter": it - 1, "mu": mu, "prim": err_prim,
                    "dual": err_dual, "gap": err_gap,
                    "pobj": pobj, "dobj": dobj})
        if verbose:
            print(f"  it {it - 1:3d}  mu {mu:9.2e}  prim {err_prim:8.2e}  "
                  f"dual {err_dual:8.2e}  gap {err_gap:8.2e}")

        err_now = max(err_prim, err_dual, err_gap)
        p_key = max(err_prim, mu / (1.0 + abs(pobj)))
        if p_key < best_p_key:
            best_p_key = p_key
            best_p = (y.copy(), [Sj.copy() for Sj in S], pobj)
        d_key = max(err_dual, err_gap)
        if d_key < best_d_key:
            best_d_key = d_key
            best_d = (nu.copy(), [Xj.copy() for Xj in X])
        if err_now < best_err:
            best_err = err_now
            best_age = 0
        else:
            best_age += 1
        if err_now <= tol:
            status = "optimal"
            break
        if best_age >= 5 and mu <= 1e-2 * tol * (1.0 + abs(pobj) + abs(dobj)):
            break  # thrashing on a degenerate face; best iterates stand

        # divergence checks: a large multiplier-side objective with a tight
        # homogeneous residual certifies infeasibility of the vector form;
        # the mirrored test certifies unboundedness
        if dobj > 1e8 * scale:
            hom = float(np.abs(c - rd).max()) / dobj
            if hom <= 1e-6:
                status = "infeasible-certificate"
                ray = {"kind": "dual-ray",
                       "X": [Xj / dobj for Xj in X],
                       "nu": nu / dobj if R else nu,
                       "residual": hom}
                break
        ynorm = float(np.abs(y).max(initial=0.0))
        if pobj < -1e8 * scale and ynorm > 0:
            feas = max(max((float(np.abs(M).max()) for M in Rp), default=0.0),
                       float(np.abs(rl).max(initial=0.0))) / ynorm
            if feas <= 1e-6:
                status = "unbounded-certificate"
                ray = {"kind": "primal-ray", "y": y / abs(pobj), "residual": feas}
                break

        # factor the iterates and assemble the Schur complement
        try:
            LX = [chol_spd(X[j]) for j in range(J)]
            LS = [chol_spd(S[j]) for j in range(J)]
        except SolverError:
            status = "stalled"
            break
        Sinv = [sla.cho_solve((LS[j], True), np.eye(blocks[j].side)) for j in range(J)]

        M = np.zeros((N, N))
        for j, b in enumerate(blocks):
            Rj = sla.solve_triangular(LS[j], np.eye(b.side), lower=True).T  # L_S^{-T}
            fs = fstacks[j]
            if fs is not None:
                Gm = np.matmul(LX[j].T[None, :, :], np.matmul(fs, Rj[None, :, :]))
                Gf = Gm.reshape(fs.shape[0], -1)
            else:
                nl = b.A.shape[0]
                Gf = np.empty((nl, b.side * b.side))
                for l in range(nl):
                    F = np.asarray(b.A[l].todense()).reshape(b.side, b.side)
                    Gf[l] = (LX[j].T @ F @ Rj).reshape(-1)
            M[np.ix_(b.loc, b.loc)] += Gf @ Gf.T

        reg = 0
        Lm = None
        bump = 1e-14 * (1.0 + np.trace(M) / N)
        while Lm is None and reg < 8:
            try:
                Lm = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                M[np.diag_indices_from(M)], bump = M.diagonal() + bump, bump * 100
                reg += 1
        if Lm is None:
            status = "stalled"
            break

        def schur_solve(rhs: np.ndarray) -> np.ndarray:
            z = sla.solve_triangular(Lm, rhs, lower=True)
            return sla.solve_triangular(Lm.T, z, lower=False)

        if R:
            GMG = Gk @ schur_solve(Gk.T)
            GMG[np.diag_indices_from(GMG)] += 1e-14 * (1.0 + np.trace(GMG) / R)
            Lk = np.linalg.cholesky(GMG)

        def kkt_solve(rhs1: np.ndarray, rl_: np.ndarray):
            """Solve M dy - G' dnu = rhs1, G dy = rl_ with iterative refinement;
            the Schur complement is badly conditioned near convergence."""
            dy = np.zeros(N)
            dnu = np.zeros(R)
            r1, r2 = rhs1.copy(), rl_.copy()
            for _ in range(3):
                if R:
                    t = sla.solve_triangular(Lk, r2 - Gk @ schur_solve(r1), lower=True)
                    ddnu = sla.solve_triangular(Lk.T, t, lower=False)
                    ddy = schur_solve(r1 + Gk.T @ ddnu)
                else:
                    ddnu = np.zeros(0)
                    ddy = schur_solve(r1)
                dy += ddy
                dnu += ddnu
                r1 = rhs1 - (M @ dy - (Gk.T @ dnu if R else 0.0))
                r2 = rl_ - (Gk @ dy if R else np.zeros(0))
                err = max(float(np.abs(r1).max(initial=0.0)),
                          float(np.abs(r2).max(initial=0.0)))
                if err <= 1e-11 * (1.0 + float(np.abs(rhs1).max(initial=0.0))):
                    break
            return dy, dnu

        def directions(sigma_mu: float, corr: list[np.ndarray] | None):
            h = np.zeros(N)
            W = []
            for j, b in enumerate(blocks):
                Wj = -X[j] - X[j] @ Rp[j] @ Sinv[j]
                if sigma_mu:
                    Wj = Wj + sigma_mu * Sinv[j]
                if corr is not None:
                    Wj = Wj - corr[j]
                Wj = 0.5 * (Wj + Wj.T)
                W.append(Wj)
                h[b.loc] += b.A @ Wj.reshape(-1)
            rhs1 = h - rd
            dy, dnu = kkt_solve(rhs1, rl)
            dS, dX = [], []
            for j, b in enumerate(blocks):
                dSj = np.asarray(b.A.T @ dy[b.loc]).reshape(b.side, b.side) + Rp[j]
                dSj = 0.5 * (dSj + dSj.T)
                # W already carries sigma*mu*Sinv, -X and the corrector term
                dXj = W[j] - X[j] @ dSj @ Sinv[j] + X[j] @ Rp[j] @ Sinv[j]
                dXj = 0.5 * (dXj + dXj.T)
                dS.append(dSj)
                dX.append(dXj)
            return dy, dnu, dS, dX

        # predictor
        dy_a, dnu_a, dS_a, dX_a = directions(0.0, None)
        a_aff = min(1.0, min((tau * _max_step(LS[j], dS_a[j]) for j in range(J)),
                             default=1.0))
        b_aff = min(1.0, min((tau * _max_step(LX[j], dX_a[j]) for j in range(J)),
                             default=1.0))
        mu_aff = sum(float(np.tensordot(X[j] + b_aff * dX_a[j],
                                        S[j] + a_aff * dS_a[j]))
                     for j in range(J)) / total_side
        sigma = min(1.0, max(0.0, (mu_aff / mu)) ** 3)

        # corrector
        corr = [dX_a[j] @ dS_a[j] @ Sinv[j] for j in range(J)]
        dy, dnu, dS, dX = directions(sigma * mu, corr)
        a_step = min(1.0, min((tau * _max_step(LS[j], dS[j]) for j in range(J)),
                              default=1.0))
        b_step = min(1.0, min((tau * _max_step(LX[j], dX[j]) for j in range(J)),
                              default=1.0))

        y = y + a_step * dy
        nu = nu + b_step * dnu
        for j in range(J):
            S[j] = S[j] + a_step * dS[j]
            X[j] = X[j] + b_step * dX[j]

        log[-1].update({"alpha": a_step, "beta": b_step, "sigma": sigma})
        tiny_steps = tiny_steps + 1 if max(a_step, b_step) < 1e-5 else 0
        if tiny_steps >= 4:
            status = "stalled"
            break
    else:
        status = "stalled"

    if status not in ("optimal", "infeasible-certificate", "unbounded-certificate"):
        if best_p is not None:
            y, S, _ = best_p[0], best_p[1], best_p[2]
        if best_d is not None:
            nu, X = best_d[0], best_d[1]
    Rp, rl, rd = block_residuals()
    pobj = float(c @ y) + std.c0
    dobj = float(dk @ nu) if R else 0.0
    for j, b in enumerate(blocks):
        if b.F0 is not None:
            dobj -= float(np.tensordot(b.F0, X[j]))
    res = {
        "prim": max(max((float(np.abs(Mx).max()) for Mx in Rp), default=0.0),
                    float(np.abs(rl).max(initial=0.0))) / d_scale,
        "dual": float(np.abs(rd).max(initial=0.0)) / c_scale,
        "gap": abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
        "mu": sum(float(np.tensordot(X[j], S[j])) for j in range(J)) / total_side,
    }
    if status not in ("optimal", "infeasible-certificate", "unbounded-certificate"):
        worst = max(res["prim"], res["dual"], res["gap"])
        if worst <= tol:
            status = "optimal"
        elif worst <= 1e-4:
            status = "near-optimal"
        else:
            status = "stalled"

    nu_full = np.zeros(std.G.shape[0])
    if R:
        nu_full[kept] = nu
    return SdpSolution(status, y, X, S, nu_full, pobj, dobj, it, res,
                       tuple(int(i) for i in dropped), log, ray=ray)
