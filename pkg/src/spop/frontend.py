"""Problem ingestion, the end-to-end solve pipeline, report emission and the
random instance generators used for benchmarking.

Problem files are JSON with extension .spop.json and fields
    version, n, blocks, objective, eq, ineq   (plus optional labels)
where every polynomial is a list of terms {"c": coefficient,
"e": [[variable, power], ...]} with 1-based variables.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Any, Sequence

import numpy as np

from .polyring import Exponent, FormatError, Polynomial
from .sparsity import SparsityPattern, check_rip, connected_cover
from .relax import (AssemblyError, SdpProblem, SparsePOP, assemble, densify,
                    min_order)
from .sdpcore import (DimensionCapError, SdpSolution, SdpStandard, resolve_cap,
                      solve)
from .extract import (AtomicMeasure, ExtractionError, FlatReport, MomentVector,
                      certify_by_value, combine_candidates, extract_atoms,
                      flat_truncation, stitch)
from . import certify as certify_mod

FILE_VERSION = "spop-1"
EXIT_TIGHT = 0
EXIT_ERROR = 1
EXIT_BOUND_ONLY = 2
EXIT_INFEASIBLE = 3


# ---------------------------------------------------------------------------
# problem files


def _poly_from_terms(n: int, terms: Any, where: str) -> Polynomial:
    if not isinstance(terms, list):
        raise FormatError(f"{where}: expected a list of terms")
    parsed = []
    for t in terms:
        if not isinstance(t, dict) or set(t) - {"c", "e"}:
            raise FormatError(f"{where}: term must be an object with fields c, e")
        if not isinstance(t.get("c"), (int, float)) or isinstance(t.get("c"), bool):
            raise FormatError(f"{where}: non-numeric coefficient {t.get('c')!r}")
        pairs = t.get("e", [])
        if not isinstance(pairs, list) or any(
                not isinstance(p, list) or len(p) != 2 for p in pairs):
            raise FormatError(f"{where}: exponent must be a list of [var, pow] pairs")
        parsed.append((float(t["c"]), Exponent.make([(int(v), int(p)) for v, p in pairs])))
    return Polynomial.from_terms(n, parsed)


def parse(source: str | dict) -> SparsePOP:
    """Parse a problem file (text or already-decoded object) into a problem.

    Syntax errors surface json's line/column diagnostics; semantic failures
    name the offending block and polynomial.
    """
    if isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    if not isinstance(data, dict):
        raise FormatError("problem file must be a JSON object")
    known = {"version", "n", "blocks", "objective", "eq", "ineq", "labels"}
    unknown = set(data) - known
    if unknown:
        raise FormatError(f"unknown field(s): {sorted(unknown)}")
    for fieldname in ("version", "n", "blocks", "objective", "eq", "ineq"):
        if fieldname not in data:
            raise FormatError(f"missing field {fieldname!r}")
    if data["version"] != FILE_VERSION:
        raise FormatError(f"unsupported version {data['version']!r}, "
                          f"expected {FILE_VERSION!r}")
    n = data["n"]
    if not isinstance(n, int) or n < 1:
        raise FormatError(f"n must be a positive integer, got {n!r}")
    blocks = data["blocks"]
    if not isinstance(blocks, list) or not blocks:
        raise FormatError("blocks must be a nonempty list of variable lists")
    pattern = SparsityPattern.make(n, blocks)
    m = pattern.m
    for name, want in (("objective", m), ("eq", m), ("ineq", m)):
        if not isinstance(data[name], list) or len(data[name]) != want:
            raise FormatError(f"{name} must be a list with one entry per block (m={m})")
    f_parts = tuple(_poly_from_terms(n, data["objective"][i], f"objective part {i}")
                    for i in range(m))
    eq = tuple(tuple(_poly_from_terms(n, hs, f"eq[{i}][{l}]")
                     for l, hs in enumerate(data["eq"][i])) for i in range(m))
    ineq = tuple(tuple(_poly_from_terms(n, gs, f"ineq[{i}][{l}]")
                       for l, gs in enumerate(data["ineq"][i])) for i in range(m))
    try:
        return SparsePOP(n, pattern, f_parts, eq, ineq)
    except FormatError as exc:
        raise FormatError(f"invalid problem: {exc}") from exc


def _poly_to_terms(p: Polynomial) -> list[dict]:
    return [{"c": c, "e": [[v, pw] for v, pw in e.powers]}
            for e, c in p.sorted_terms()]


def emit(pop: SparsePOP, labels: dict | None = None) -> dict:
    """Problem back to its file representation (canonical term order)."""
    out = {
        "version": FILE_VERSION,
        "n": pop.n,
        "blocks": [list(b) for b in pop.pattern.blocks],
        "objective": [_poly_to_terms(p) for p in pop.f_parts],
        "eq": [[_poly_to_terms(h) for h in hs] for hs in pop.eq],
        "ineq": [[_poly_to_terms(g) for g in gs] for gs in pop.ineq],
    }
    if labels:
        out["labels"] = labels
    return out


# ---------------------------------------------------------------------------
# certificates on disk


def certificate_to_dict(cert) -> dict:
    kind = "tightness" if isinstance(cert, certify_mod.TightnessCertificate) \
        else "infeasibility"
    out = {
        "kind": kind,
        "order": cert.k,
        "p": [_poly_to_terms(p) for p in cert.p],
        "gram": [{
            "label": list(_jsonable_label(label)),
            "basis": [[[v, pw] for v, pw in e.powers] for e in basis],
            "side": int(Q.shape[0]),
            "matrix": [float(v) for v in np.asarray(Q).reshape(-1)],  # row-major
        } for label, (basis, Q) in cert.gram.items()],
        "ideal_multipliers": [{
            "block": i, "constraint": l, "poly": _poly_to_terms(phi),
        } for (i, l), phi in cert.ideal_mult.items()],
    }
    if kind == "tightness":
        out.update({"model": cert.model, "gamma": cert.gamma,
                    "epsilon": cert.epsilon})
    return out


def _jsonable_label(label: tuple) -> tuple:
    return tuple(list(x) if isinstance(x, tuple) else x for x in label)


def certificate_from_dict(data: dict, n: int):
    gram = {}
    for g in data["gram"]:
        label = tuple(tuple(x) if isinstance(x, list) else x for x in g["label"])
        basis = tuple(Exponent.make([(v, pw) for v, pw in e]) for e in g["basis"])
        side = g["side"]
        Q = np.array(g["matrix"], dtype=float).reshape(side, side)
        gram[label] = (basis, Q)
    mults = {(im["block"], im["constraint"]): _poly_from_terms(n, im["poly"], "phi")
             for im in data["ideal_multipliers"]}
    p = [_poly_from_terms(n, terms, f"p_{i}") for i, terms in enumerate(data["p"])]
    if data["kind"] == "tightness":
        return certify_mod.TightnessCertificate(
            data["order"], data["model"], float(data["gamma"]), p, gram, mults,
            float(data.get("epsilon", 0.0)))
    return certify_mod.InfeasibilityCertificate(data["order"], p, gram, mults)


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    model: str
    order: int
    bound: float | None
    solver_status: str
    solver_residuals: dict[str, float]
    solver_iterations: int
    rip: dict
    flat: dict | None
    atoms: list[dict] | None
    minimizers: list[dict]
    certificate: dict | None
    infeasibility: dict | None
    outcome: str            # tight-certified | bound-only | infeasibility-certified | error
    timings: dict[str, float]
    config: dict
    messages: list[str] = field(default_factory=list)

    def to_dict(self, include_timings: bool = True) -> dict:
        out = asdict(self)
        if not include_timings:
            out.pop("timings")
        return _jsonable(out)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, **kw)

    @property
    def exit_code(self) -> int:
        return {"tight-certified": EXIT_TIGHT, "bound-only": EXIT_BOUND_ONLY,
                "infeasibility-certified": EXIT_INFEASIBLE}.get(self.outcome,
                                                                EXIT_ERROR)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return str(x)
    return x


def _flat_to_dict(fr: FlatReport) -> dict:
    return {
        "common_t": fr.common_t,
        "overlap_ok": fr.overlap_ok,
        "tolerance": fr.tol_rel,
        "blocks": [{
            "block": b.block, "d": b.d, "flat_t": b.flat_t, "r": b.r,
            "ranks": {str(t): list(r) for t, r in b.ranks.items()},
            "gaps": {str(t): (g if math.isfinite(g) else None)
                     for t, g in b.gaps.items()},
        } for b in fr.blocks],
        "overlap_ranks": {f"{i},{j}": list(r) for (i, j), r in fr.overlap.items()},
        "warnings": fr.warnings,
    }


def _measure_to_dict(m: AtomicMeasure) -> dict:
    return {"block": m.block, "t": m.t, "residual": m.residual,
            "atoms": [{"weight": w, "point": list(pt)} for w, pt in m.atoms]}


# ---------------------------------------------------------------------------
# the pipeline


def run_solve(pop: SparsePOP, k: int, model: str = "sparse-putinar",
              tol: float = 1e-8, extract: bool = True, certificate: bool = False,
              epsilon: float = 0.0, force: bool = False, cap: int | None = None,
              match_tol: float = 1e-5, rank_tol: float = 1e-6,
              value_tol: float = 1e-5, metadata: dict | None = None) -> Report:
    """Assemble, solve, detect flatness, extract and stitch minimizers, and
    (optionally) produce and verify a decomposition certificate.

    Minimizers are assembled by matched-projection stitching when the
    running-intersection route applies, and otherwise by overlap-consistent
    combination of per-block atoms; every candidate is accepted only on a
    direct feasibility-and-value check against the bound, with the order-t
    bound re-solved whenever extraction succeeded below the solved order.
    """
    t_all = time.perf_counter()
    config = {"model": model, "order": k, "tol": tol, "extract": extract,
              "certify": certificate, "epsilon": epsilon, "force": force,
              "cap": resolve_cap(cap), "match_tol": match_tol,
              "rank_tol": rank_tol, "value_tol": value_tol,
              "metadata": metadata or {}}
    timings: dict[str, float] = {}
    messages: list[str] = []

    t0 = time.perf_counter()
    rip = check_rip(pop.pattern)
    cover_ok, comps = rip.connected_cover, rip.components
    rip_dict = {"holds": rip.holds, "ordering": rip.ordering,
                "witnesses": rip.witnesses, "connected_cover": rip.connected_cover,
                "components": rip.components,
                "violation": rip.violation}
    timings["sparsity"] = time.perf_counter() - t0
    if not rip.holds:
        messages.append("running intersection property fails: stitching disabled, "
                        "tightness cannot be concluded from flatness alone")
    if not cover_ok and len(comps) > 1:
        messages.append(f"blocks split into {len(comps)} disconnected groups; "
                        "the problem separates into independent subproblems")

    def finish(outcome, bound=None, sol=None, flat=None, atoms=None,
               minimizers=None, cert_dict=None, infeas_dict=None):
        timings["total"] = time.perf_counter() - t_all
        return Report(model, k, bound,
                      sol.status if sol else "not-solved",
                      dict(sol.residuals) if sol else {},
                      sol.iterations if sol else 0,
                      rip_dict, flat, atoms, minimizers or [],
                      cert_dict, infeas_dict, outcome, timings, config, messages)

    t0 = time.perf_counter()
    try:
        prob = assemble(pop, k, model, force=force)
        std = SdpStandard.from_problem(prob)
    except (AssemblyError, FormatError) as exc:
        messages.append(f"assembly failed: {exc}")
        return finish("error")
    timings["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        sol = solve(std, tol=tol, cap=cap)
    except DimensionCapError as exc:
        messages.append(f"solve refused: {exc}")
        return finish("error")
    timings["solve"] = time.perf_counter() - t0

    if sol.status == "infeasible-certificate":
        infeas_dict = None
        try:
            icert = certify_mod.infeasibility_from_ray(sol, prob)
            rep = certify_mod.verify_infeasibility(icert, prob.pop)
            infeas_dict = {"order": k, "verified": rep.passed,
                           "linking_residual": rep.identity_residual,
                           "membership_residuals": rep.membership_residuals,
                           "certificate": certificate_to_dict(icert)}
            if rep.passed:
                messages.append("relaxation infeasible: emptiness certificate verified")
                return finish("infeasibility-certified", sol=sol,
                              infeas_dict=infeas_dict)
            messages.append("relaxation infeasible but the ray certificate did "
                            "not re-verify")
        except certify_mod.CertificateError as exc:
            messages.append(f"relaxation infeasible; no certificate recovered: {exc}")
        return finish("error", sol=sol, infeas_dict=infeas_dict)
    if sol.status == "unbounded-certificate":
        messages.append("relaxation unbounded below at this order")
        return finish("error", sol=sol)
    if sol.status not in ("optimal", "near-optimal"):
        messages.append(f"solver did not converge (status {sol.status})")
        return finish("error", sol=sol)

    bound = sol.pobj
    mv = MomentVector(k, sol.y, prob.index)

    flat_dict = None
    atoms_dicts = None
    minimizers: list[dict] = []
    certified_pts: list[np.ndarray] = []
    measures: list[AtomicMeasure] | None = None
    flat = None
    if extract:
        t0 = time.perf_counter()
        # flatness on the model actually solved (dense models pool blocks)
        fpop = densify(pop) if model.startswith("dense") else pop
        flat = flat_truncation(mv, fpop, k, tol_rel=rank_tol)
        flat_dict = _flat_to_dict(flat)
        timings["flat"] = time.perf_counter() - t0
        if flat.common_t is not None:
            t0 = time.perf_counter()
            try:
                measures = [extract_atoms(mv, i, flat.common_t,
                                          flat.blocks[i].ranks[flat.common_t][0])
                            for i in range(fpop.m)]
                atoms_dicts = [_measure_to_dict(m) for m in measures]
            except ExtractionError as exc:
                messages.append(f"atom extraction failed: {exc}")
                measures = None
            timings["extract"] = time.perf_counter() - t0

        if measures is not None:
            order_values = None
            if flat.common_t < k:
                t0 = time.perf_counter()
                sub = solve(SdpStandard.from_problem(
                    assemble(fpop, flat.common_t, model, force=True)),
                    tol=tol, cap=cap)
                order_values = (sub.pobj, bound)
                messages.append(f"order-{flat.common_t} bound re-solved for the "
                                f"two-level check: {sub.pobj:.10g}")
                timings["order_check"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            counts = {m.r for m in measures}
            route = None
            points: list[np.ndarray] = []
            if rip.holds and rip.connected_cover and len(counts) == 1 \
                    and flat.overlap_ok:
                st = stitch(measures, fpop.pattern, rip, match_tol=match_tol)
                if st.status == "stitched":
                    route = "matched-projection"
                    points = st.points
                else:
                    messages.append(f"stitching: {st.status} ({st.detail})")
            if route is None:
                try:
                    points = combine_candidates(measures, fpop.pattern,
                                                match_tol=match_tol)
                    route = "block-combination"
                except ExtractionError as exc:
                    messages.append(f"candidate combination failed: {exc}")
                    points, route = [], "none"
            for pt in points:
                v = certify_by_value(pt, pop, bound, tol=value_tol,
                                     order_values=order_values)
                minimizers.append({"point": list(pt), "route": route,
                                   "verdict": v.verdict, "value": v.value,
                                   "violation": v.violation, "gap": v.gap})
                if v.verdict == "tight-minimizer":
                    certified_pts.append(pt)
            timings["stitch"] = time.perf_counter() - t0

    cert_dict = None
    certifies_minimum = False
    if certificate:
        t0 = time.perf_counter()
        try:
            cert = certify_mod.split_representation(sol, prob)
            if epsilon > 0:
                cert = certify_mod.epsilon_certificate(cert, prob.pop, epsilon,
                                                       cap=cap)
            rep = certify_mod.verify_certificate(
                cert, prob.pop,
                minimizers=certified_pts if certified_pts else None)
            certifies_minimum = rep.certifies_minimum
            cert_dict = {
                "gamma": cert.gamma, "epsilon": cert.epsilon,
                "verified": rep.passed,
                "identity_residual": rep.identity_residual,
                "membership_residuals": rep.membership_residuals,
                "gram_min_eig": rep.gram_min_eig,
                "value_residuals": rep.value_residuals,
                "certifies_minimum": rep.certifies_minimum,
                "certificate": certificate_to_dict(cert),
            }
            if cert.epsilon > 0:
                messages.append(f"epsilon-certificate at epsilon={cert.epsilon:g}")
        except certify_mod.CertificateError as exc:
            messages.append(f"certificate recovery failed: {exc}")
        timings["certify"] = time.perf_counter() - t0

    outcome = "tight-certified" if (certifies_minimum and certified_pts) \
        else "bound-only"
    return finish(outcome, bound=bound, sol=sol, flat=flat_dict,
                  atoms=atoms_dicts, minimizers=minimizers, cert_dict=cert_dict)


# ---------------------------------------------------------------------------
# instance generators (documented PRNG: numpy default_rng / PCG64)


def _wrap_block(i: int, n: int, w: int) -> tuple[int, ...]:
    """1-based wrap-around window {i, ..., i+w-1} modulo n."""
    if i <= n - w + 1:
        return tuple(range(i, i + w))
    return tuple(range(i, n + 1)) + tuple(range(1, w - n + i))


def _quad_form(n: int, variables: Sequence[int], Q: np.ndarray, sq: bool = False) -> Polynomial:
    terms = []
    for a, va in enumerate(variables):
        for b, vb in enumerate(variables):
            if Q[a, b] == 0.0:
                continue
            pa, pb = (2, 2) if sq else (1, 1)
            e = Exponent.make({va: pa}) + Exponent.make({vb: pb})
            terms.append((float(Q[a, b]), e))
    return Polynomial.from_terms(n, terms)


def _lin_form(n: int, variables: Sequence[int], b: np.ndarray) -> Polynomial:
    return Polynomial.from_terms(n, [(float(b[a]), {v: 1})
                                     for a, v in enumerate(variables)])


def gen_qcqp(n: int, w: int, seed: int) -> SparsePOP:
    """Random convex quadratic instance on n wrap-around blocks of width w.

    Per block i (1-based, in order), the PCG64 stream emits: b_i (w normals),
    c_i (w normals), then row-major R entries for Q_i = R'R (w*w normals) and
    the same for B_i.  Objective part: x'Q_i x + b_i'x on the block; constraint:
    1 - x'B_i x - c_i'x >= 0.  Block variables follow the wrap-around window
    order, so every instance is fully determined by (n, w, seed).
    """
    if not (2 <= w <= n):
        raise FormatError(f"need 2 <= w <= n, got w={w}, n={n}")
    rng = np.random.default_rng(seed)
    blocks = [_wrap_block(i, n, w) for i in range(1, n + 1)]
    pattern = SparsityPattern.make(n, blocks)
    f_parts, ineq = [], []
    for variables in blocks:
        b = rng.standard_normal(w)
        c = rng.standard_normal(w)
        RQ = rng.standard_normal((w, w))
        RB = rng.standard_normal((w, w))
        f_parts.append(_quad_form(n, variables, RQ.T @ RQ) + _lin_form(n, variables, b))
        g = Polynomial.constant(n, 1.0) - _quad_form(n, variables, RB.T @ RB) \
            - _lin_form(n, variables, c)
        ineq.append((g,))
    return SparsePOP(n, pattern, tuple(f_parts),
                     tuple(() for _ in blocks), tuple(ineq))


def gen_quartic(n: int, w: int, seed: int) -> SparsePOP:
    """Random quartic instance: the qcqp stream per block, then row-major
    uniform-[0,1) R entries for D_i = R'R and H_i = R'R acting on the vector of
    squared block variables.  Objective part: b'x + x'Qx + (x^2)'D(x^2);
    constraint: 1 - c'x - x'Bx - (x^2)'H(x^2) >= 0.
    """
    if not (2 <= w <= n):
        raise FormatError(f"need 2 <= w <= n, got w={w}, n={n}")
    rng = np.random.default_rng(seed)
    blocks = [_wrap_block(i, n, w) for i in range(1, n + 1)]
    pattern = SparsityPattern.make(n, blocks)
    f_parts, ineq = [], []
    for variables in blocks:
        b = rng.standard_normal(w)
        c = rng.standard_normal(w)
        RQ = rng.standard_normal((w, w))
        RB = rng.standard_normal((w, w))
        RD = rng.random((w, w))
        RH = rng.random((w, w))
        f_parts.append(_lin_form(n, variables, b)
                       + _quad_form(n, variables, RQ.T @ RQ)
                       + _quad_form(n, variables, RD.T @ RD, sq=True))
        g = Polynomial.constant(n, 1.0) - _lin_form(n, variables, c) \
            - _quad_form(n, variables, RB.T @ RB) \
            - _quad_form(n, variables, RH.T @ RH, sq=True)
        ineq.append((g,))
    return SparsePOP(n, pattern, tuple(f_parts),
                     tuple(() for _ in blocks), tuple(ineq))


# ---------------------------------------------------------------------------
# sparse vs dense comparison


def run_compare(pop: SparsePOP, k: int, cap: int | None = None,
                tol: float = 1e-8, expect_equal: bool = False) -> dict:
    """One comparison row: bounds, SDP sizes and times for the sparse and
    dense relaxations.  A dense problem over the dimension cap is reported as
    the out-of-memory analog rather than attempted."""
    row: dict[str, Any] = {"order": k}
    for tag, model in (("sparse", "sparse-putinar"), ("dense", "dense-putinar")):
        t0 = time.perf_counter()
        try:
            prob = assemble(pop, k, model)
            std = SdpStandard.from_problem(prob)
            sol = solve(std, tol=tol, cap=cap)
            row[tag] = {"bound": sol.pobj, "status": sol.status,
                        "n_vars": prob.n_vars,
                        "max_psd_side": prob.max_psd_side(),
                        "iterations": sol.iterations,
                        "time": time.perf_counter() - t0}
        except DimensionCapError as exc:
            row[tag] = {"status": "oom-analog", "detail": str(exc),
                        "time": time.perf_counter() - t0}
    s, d = row["sparse"], row["dense"]
    if s.get("status") == "optimal" and d.get("status") == "optimal":
        gap = abs(s["bound"] - d["bound"]) / (1 + abs(d["bound"]))
        row["bound_gap"] = gap
        row["bounds_agree"] = bool(gap <= 1e-5)
        if expect_equal and not row["bounds_agree"]:
            row["flag"] = "bounds expected to agree but differ"
    return row
