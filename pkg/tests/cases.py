"""Shared problem fixtures, encoded through the problem-file format so every
test also exercises the parser."""

from __future__ import annotations

from spop.frontend import parse


def _t(c, *pairs):
    return {"c": c, "e": [list(p) for p in pairs]}


def chain_quintic():
    """Two overlapping blocks, quintic objective, unit-disc constraints.
    Known: sparse bound at k=3 is about -0.0666 with minimizers
    (+-0.5100, 0.4798, 0.3849)."""
    return parse({
        "version": "spop-1", "n": 3, "blocks": [[1, 2], [2, 3]],
        "objective": [
            # x1^2 x2 (x1^2 + x2 - 1) = x1^4 x2 + x1^2 x2^2 - x1^2 x2
            [_t(1.0, (1, 4), (2, 1)), _t(1.0, (1, 2), (2, 2)), _t(-1.0, (1, 2), (2, 1))],
            # x2^2 x3 (x2^2 + x3 - 1)
            [_t(1.0, (2, 4), (3, 1)), _t(1.0, (2, 2), (3, 2)), _t(-1.0, (2, 2), (3, 1))],
        ],
        "eq": [[], []],
        "ineq": [
            [[_t(1.0), _t(-1.0, (1, 2)), _t(-1.0, (2, 2))]],
            [[_t(1.0), _t(-1.0, (2, 2)), _t(-1.0, (3, 2))]],
        ],
        "labels": {"name": "chain-quintic"},
    })


def chain_quadratic():
    """Two overlapping blocks, indefinite quadratic objective on unit discs.
    Known: minimum -4.0000 at +-(0.7071, -0.7071, 0.7071), tight at k=2."""
    return parse({
        "version": "spop-1", "n": 3, "blocks": [[1, 2], [2, 3]],
        "objective": [
            [_t(1.0, (1, 2)), _t(4.0, (1, 1), (2, 1))],
            [_t(4.0, (2, 1), (3, 1)), _t(-1.0, (3, 2))],
        ],
        "eq": [[], []],
        "ineq": [
            [[_t(1.0), _t(-1.0, (1, 2)), _t(-1.0, (2, 2))]],
            [[_t(1.0), _t(-1.0, (2, 2)), _t(-1.0, (3, 2))]],
        ],
        "labels": {"name": "chain-quadratic"},
    })


def binary_four():
    """Two cubic blocks with 0/1 equalities and covering inequalities.
    Known: minimum -1.0000 with exactly four minimizers."""
    return parse({
        "version": "spop-1", "n": 4, "blocks": [[1, 2, 3], [2, 3, 4]],
        "objective": [
            [_t(1.0, (1, 1), (2, 1), (3, 1)), _t(-1.0, (1, 1), (2, 1))],
            [_t(1.0, (2, 1), (3, 1), (4, 1)), _t(-1.0, (3, 1), (4, 1))],
        ],
        "eq": [
            [[_t(1.0, (1, 2)), _t(-1.0, (1, 1))],
             [_t(1.0, (2, 2)), _t(-1.0, (2, 1))],
             [_t(1.0, (3, 2)), _t(-1.0, (3, 1))]],
            [[_t(1.0, (2, 2)), _t(-1.0, (2, 1))],
             [_t(1.0, (3, 2)), _t(-1.0, (3, 1))],
             [_t(1.0, (4, 2)), _t(-1.0, (4, 1))]],
        ],
        "ineq": [
            [[_t(1.0, (1, 1)), _t(1.0, (2, 1)), _t(1.0, (3, 1)), _t(-1.0)]],
            [[_t(1.0, (2, 1)), _t(1.0, (3, 1)), _t(1.0, (4, 1)), _t(-1.0)]],
        ],
        "labels": {"name": "binary-four"},
    })


def triangle_sextic():
    """Three pairwise-overlapping blocks (triangle pattern: the ordering test
    fails) with sextic convex-style parts.  Known: bound about -2.2561 with
    minimizer (-0.6036, 0.6852, -0.7092) at k=3."""
    return parse({
        "version": "spop-1", "n": 3, "blocks": [[1, 2], [2, 3], [1, 3]],
        "objective": [
            [_t(1.0, (1, 6)), _t(1.0, (2, 6)), _t(1.0, (1, 3), (2, 3)), _t(1.0, (1, 1))],
            [_t(1.0, (2, 6)), _t(1.0, (3, 6)), _t(1.0, (2, 3), (3, 3)), _t(-1.0, (2, 1))],
            [_t(1.0, (1, 6)), _t(1.0, (3, 6)), _t(1.0, (1, 3), (3, 3)), _t(2.0, (3, 1))],
        ],
        "eq": [[], [], []],
        "ineq": [
            [[_t(1.0), _t(-1.0, (1, 4)), _t(-1.0, (2, 4))]],
            [[_t(1.0), _t(-1.0, (2, 4)), _t(-1.0, (3, 4))]],
            [[_t(1.0), _t(-1.0, (1, 4)), _t(-1.0, (3, 4))]],
        ],
        "labels": {"name": "triangle-sextic"},
    })


def triangle_linear_gap():
    """Triangle pattern with per-block finite equality varieties; the sparse
    bound is 4.5 at every order while the true minimum is 9 at (3,3,3).  The
    negative control: flatness holds yet no consistent assembly exists."""
    def cubic(v, a, b):
        # (x_v - 1)(x_v - 2)(x_a + x_b - 6) expanded
        out = []
        for coef, e in [(1.0, [(v, 2)]), (-3.0, [(v, 1)]), (2.0, [])]:
            for coef2, e2 in [(1.0, [(a, 1)]), (1.0, [(b, 1)]), (-6.0, [])]:
                merged: dict[int, int] = {}
                for var, pw in e + e2:
                    merged[var] = merged.get(var, 0) + pw
                out.append(_t(coef * coef2, *sorted(merged.items())))
        return out
    # (x2 + x3 - 3)(x2 - 3) = x2^2 + x2 x3 - 6 x2 - 3 x3 + 9
    mid = [_t(1.0, (2, 2)), _t(1.0, (2, 1), (3, 1)), _t(-6.0, (2, 1)),
           _t(-3.0, (3, 1)), _t(9.0)]
    return parse({
        "version": "spop-1", "n": 3, "blocks": [[1, 2], [2, 3], [1, 3]],
        "objective": [
            [_t(1.0, (1, 1))], [_t(1.0, (2, 1))], [_t(1.0, (3, 1))],
        ],
        "eq": [
            [cubic(1, 1, 2), [_t(1.0, (1, 1)), _t(-1.0, (2, 1))]],
            [cubic(2, 2, 3), mid],
            [cubic(3, 1, 3), [_t(1.0, (1, 1)), _t(-1.0, (3, 1))]],
        ],
        "ineq": [[], [], []],
        "labels": {"name": "triangle-linear-gap"},
    })


def box_rational_gap():
    """Two-block problem whose sparse hierarchy is never tight (minimum 1,
    attained along a curve) while the dense order-2 relaxation is exact."""
    return parse({
        "version": "spop-1", "n": 3, "blocks": [[1, 2], [2, 3]],
        "objective": [
            # x1^2 + (x1 x2 - 1)^2
            [_t(1.0, (1, 2)), _t(1.0, (1, 2), (2, 2)), _t(-2.0, (1, 1), (2, 1)), _t(1.0)],
            # (x2 x3)^2 + (x3 - 1)^2
            [_t(1.0, (2, 2), (3, 2)), _t(1.0, (3, 2)), _t(-2.0, (3, 1)), _t(1.0)],
        ],
        "eq": [[], []],
        "ineq": [
            [[_t(1.0), _t(-1.0, (1, 2))], [_t(1.0), _t(-1.0, (2, 2))]],
            [[_t(1.0), _t(-1.0, (2, 2))], [_t(1.0), _t(-1.0, (3, 2))]],
        ],
        "labels": {"name": "box-rational-gap"},
    })
