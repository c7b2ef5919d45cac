"""Correlative sparsity analysis: CSP graph, running-intersection orderings,
connected covers and block overlaps.

Blocks are taken exactly as given and never enlarged; no chordal extension is
computed.  Block indices are 0-based throughout, variable indices 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .polyring import FormatError, _validate_block


@dataclass(frozen=True)
class SparsityPattern:
    """Variable count n and a list of m sorted variable blocks."""

    n: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise FormatError(f"need n >= 1, got {self.n}")
        if not self.blocks:
            raise FormatError("pattern needs at least one block")
        for b in self.blocks:
            _validate_block(b)
            if max(b) > self.n:
                raise FormatError(f"block {b} exceeds variable count n={self.n}")

    @property
    def m(self) -> int:
        return len(self.blocks)

    @staticmethod
    def make(n: int, blocks: Sequence[Sequence[int]]) -> "SparsityPattern":
        return SparsityPattern(n, tuple(tuple(sorted(b)) for b in blocks))


@dataclass(frozen=True)
class RipReport:
    """Result of the running-intersection test.

    When `holds`, `ordering` is a permutation of block indices and
    `witnesses[j]` (for position j >= 1) is an earlier *position* t whose block
    contains ordering[j]'s intersection with everything before it.  When the
    test fails, `violation` names an overlapping block pair whose intersection
    is not contained in any block on the path joining them.
    """

    holds: bool
    ordering: tuple[int, ...] | None
    witnesses: tuple[int | None, ...] | None
    connected_cover: bool
    components: tuple[tuple[int, ...], ...]
    violation: tuple[int, int] | None = None


def csp_graph(pattern: SparsityPattern) -> dict[int, set[int]]:
    """Adjacency of the correlative sparsity pattern graph on variables [n]."""
    adj: dict[int, set[int]] = {v: set() for v in range(1, pattern.n + 1)}
    for blk in pattern.blocks:
        for i, a in enumerate(blk):
            for b in blk[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
    return adj


def overlaps(pattern: SparsityPattern) -> dict[tuple[int, int], tuple[int, ...]]:
    """All nonempty pairwise block intersections, keyed by (i, j) with i < j."""
    out: dict[tuple[int, int], tuple[int, ...]] = {}
    for i in range(pattern.m):
        si = set(pattern.blocks[i])
        for j in range(i + 1, pattern.m):
            inter = tuple(sorted(si & set(pattern.blocks[j])))
            if inter:
                out[(i, j)] = inter
    return out


def _block_components(pattern: SparsityPattern) -> list[list[int]]:
    ov = overlaps(pattern)
    adj: dict[int, set[int]] = {i: set() for i in range(pattern.m)}
    for (i, j) in ov:
        adj[i].add(j)
        adj[j].add(i)
    seen: set[int] = set()
    comps: list[list[int]] = []
    for start in range(pattern.m):
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        stack = [start]
        while stack:
            v = stack.pop()
            for w in sorted(adj[v]):
                if w not in seen:
                    seen.add(w)
                    comp.append(w)
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def connected_cover(pattern: SparsityPattern) -> tuple[bool, tuple[tuple[int, ...], ...]]:
    """Whether the blocks form a connected cover of [n].

    Returns the flag together with the partition of block indices into
    overlap-connected components; a disconnected problem splits along it.
    """
    comps = _block_components(pattern)
    covered = set()
    for blk in pattern.blocks:
        covered |= set(blk)
    ok = len(comps) == 1 and covered == set(range(1, pattern.n + 1))
    return ok, tuple(tuple(c) for c in comps)


def _max_weight_spanning_forest(pattern: SparsityPattern) -> list[tuple[int, int]]:
    """Kruskal on the block intersection graph, weights |overlap|.

    Ties are broken by lexicographically smallest (i, j) so the forest, and
    hence the reported ordering, is deterministic.
    """
    ov = overlaps(pattern)
    edges = sorted(ov.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    parent = list(range(pattern.m))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    forest: list[tuple[int, int]] = []
    for (i, j), _ in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            forest.append((i, j))
    return forest


def _forest_adjacency(m: int, forest: list[tuple[int, int]]) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {i: set() for i in range(m)}
    for i, j in forest:
        adj[i].add(j)
        adj[j].add(i)
    return adj


def _tree_path(adj: dict[int, set[int]], src: int, dst: int) -> list[int] | None:
    prev = {src: src}
    stack = [src]
    while stack:
        v = stack.pop()
        if v == dst:
            path = [dst]
            while path[-1] != src:
                path.append(prev[path[-1]])
            return path[::-1]
        for w in adj[v]:
            if w not in prev:
                prev[w] = v
                stack.append(w)
    return None


def check_rip(pattern: SparsityPattern) -> RipReport:
    """Test whether some block ordering satisfies the running intersection
    property, and produce one (with witnesses) when it does.

    A maximum-weight spanning forest of the block intersection graph is a
    junction forest iff any ordering works, so the test verifies the
    clique-intersection property on that forest and, on success, reads the
    ordering off a root-first traversal.
    """
    cover_ok, comps = connected_cover(pattern)
    forest = _max_weight_spanning_forest(pattern)
    adj = _forest_adjacency(pattern.m, forest)
    blocks = [set(b) for b in pattern.blocks]

    # clique-intersection property: each pairwise overlap is contained in
    # every block on the forest path joining the pair
    for (i, j), inter in overlaps(pattern).items():
        path = _tree_path(adj, i, j)
        assert path is not None  # overlapping blocks share a forest tree
        for l in path[1:-1]:
            if not set(inter) <= blocks[l]:
                return RipReport(False, None, None, cover_ok, comps, violation=(i, j))

    # root-first traversal of each tree; trees in order of smallest member
    ordering: list[int] = []
    witnesses: list[int | None] = []
    position: dict[int, int] = {}
    for comp in comps:
        root = comp[0]
        ordering.append(root)
        witnesses.append(None if len(ordering) == 1 else 0)
        position[root] = len(ordering) - 1
        stack = [root]
        visited = {root}
        while stack:
            v = stack.pop()
            for w in sorted(adj[v], reverse=True):
                if w not in visited:
                    visited.add(w)
                    position[w] = len(ordering)
                    ordering.append(w)
                    witnesses.append(position[v])
                    stack.append(w)

    # the junction-forest parent is a valid witness; assert the subset
    # relation verbatim as a guard against construction bugs
    union: set[int] = set()
    for pos, bi in enumerate(ordering):
        if pos > 0:
            inter = blocks[bi] & union
            t = witnesses[pos]
            assert t is not None and inter <= blocks[ordering[t]], \
                f"witness violated at position {pos}"
        union |= blocks[bi]

    return RipReport(True, tuple(ordering), tuple(witnesses), cover_ok, comps)


def rip_holds_by_enumeration(pattern: SparsityPattern) -> bool:
    """Exhaustive ordering search; independent oracle for small m."""
    import itertools

    blocks = [set(b) for b in pattern.blocks]
    for perm in itertools.permutations(range(pattern.m)):
        ok = True
        for j in range(1, len(perm)):
            union = set().union(*(blocks[perm[t]] for t in range(j)))
            inter = blocks[perm[j]] & union
            if inter and not any(inter <= blocks[perm[t]] for t in range(j)):
                ok = False
                break
        if ok:
            return True
    return False


def mcs_is_chordal(adj: dict[int, set[int]]) -> bool:
    """Maximum cardinality search chordality test.

    Visits vertices by descending weight (ties to the smallest label); the
    graph is chordal iff for every vertex v, its earlier-visited neighbours
    minus the latest one are all adjacent to that latest one.
    """
    vertices = sorted(adj)
    weight = {v: 0 for v in vertices}
    order: list[int] = []
    numbered: set[int] = set()
    rank: dict[int, int] = {}
    for _ in vertices:
        v = max((u for u in vertices if u not in numbered), key=lambda u: (weight[u], -u))
        rank[v] = len(order)
        order.append(v)
        numbered.add(v)
        for w in adj[v]:
            if w not in numbered:
                weight[w] += 1
    for v in order:
        earlier = [u for u in adj[v] if rank[u] < rank[v]]
        if not earlier:
            continue
        u = max(earlier, key=lambda x: rank[x])
        for w in earlier:
            if w != u and w not in adj[u]:
                return False
    return True
