"""Constraint-based PAG search (RFCI flavour).

The search runs in two phases:

1. :func:`learn_skeleton` -- PC-style adjacency search with separating sets.
   Adjacencies are frozen at the start of each conditioning-set size, so the
   resulting skeleton does not depend on node order.
2. :func:`orient_pag` -- unshielded colliders, each confirmed by two extra
   dependence tests before it is oriented, then orientation rules R1-R4 to a
   fixed point. The discriminating-path rule also re-checks the adjacencies it
   relies on. Any edge removed by these checks restarts orientation from scratch.

All loops visit nodes, neighbours and conditioning subsets in ascending
(lexicographic) order and the first separating set found wins.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .graph import Mark, Pag

NONE, TAIL, ARROW, CIRCLE = int(Mark.NONE), int(Mark.TAIL), int(Mark.ARROW), int(Mark.CIRCLE)

Sepsets = Dict[Tuple[int, int], Tuple[int, ...]]


@dataclass(frozen=True)
class SearchConfig:
    alpha: float = 0.005
    max_conditioning_size: Optional[int] = None
    max_path_length: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_conditioning_size is not None and self.max_conditioning_size < 0:
            raise ValueError("max_conditioning_size must be non-negative")


@dataclass
class SearchStats:
    """Per-run diagnostics."""

    num_tests: int = 0
    clamp_count: int = 0
    skeleton_edges: int = 0
    removed_in_orientation: int = 0
    restarts: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def _key(i: int, j: int) -> Tuple[int, int]:
    return (i, j) if i < j else (j, i)


def learn_skeleton(tester, config: SearchConfig = SearchConfig()):
    """Adjacency search.

    Returns ``(adjacency, sepsets)`` where ``adjacency`` is a list of neighbour
    sets and ``sepsets`` maps every removed pair ``(i, j)``, ``i < j``, to the
    conditioning set that separated it.
    """
    n = tester.num_vars
    independent = tester.independent
    adj: List[Set[int]] = [set(range(n)) - {i} for i in range(n)]
    sepsets: Sepsets = {}
    limit = config.max_conditioning_size
    level = 0
    while limit is None or level <= limit:
        frozen = [sorted(a) for a in adj]
        if not any(len(frozen[i]) - 1 >= level for i in range(n) if frozen[i]):
            break
        for i in range(n):
            for j in frozen[i]:
                if j < i or j not in adj[i]:
                    continue
                found = None
                for side, other in ((i, j), (j, i)):
                    candidates = [v for v in frozen[side] if v != other]
                    if len(candidates) < level:
                        continue
                    for cond in combinations(candidates, level):
                        if independent(i, j, cond):
                            found = cond
                            break
                    if found is not None:
                        break
                if found is not None:
                    adj[i].discard(j)
                    adj[j].discard(i)
                    sepsets[(i, j)] = tuple(sorted(found))
        level += 1
    return adj, sepsets


def skeleton_matrix(adj: Sequence[Set[int]]) -> np.ndarray:
    n = len(adj)
    out = np.zeros((n, n), dtype=bool)
    for i, nbrs in enumerate(adj):
        out[i, list(nbrs)] = True
    return out


class _Orienter:
    def __init__(self, adj, sepsets: Sepsets, tester, config: SearchConfig, stats: SearchStats):
        self.adj = [set(a) for a in adj]
        self.sepsets = dict(sepsets)
        self.tester = tester
        self.config = config
        self.stats = stats
        self.n = len(adj)

    # -- edge removal ----------------------------------------------------
    def _minimal_sepset(self, x: int, y: int, pool: Sequence[int]) -> Tuple[int, ...]:
        pool = sorted(v for v in pool if v != x and v != y)
        for size in range(len(pool) + 1):
            for cond in combinations(pool, size):
                if self.tester.independent(x, y, cond):
                    return cond
        raise AssertionError("pool was expected to separate the pair")

    def _remove(self, x: int, y: int, pool: Sequence[int]):
        self.sepsets[_key(x, y)] = self._minimal_sepset(x, y, pool)
        self.adj[x].discard(y)
        self.adj[y].discard(x)
        self.stats.removed_in_orientation += 1

    def _check_and_remove(self, x: int, y: int, pool: Sequence[int]) -> bool:
        cond = tuple(sorted(v for v in pool if v != x and v != y))
        if self.tester.independent(x, y, cond):
            self._remove(x, y, cond)
            return True
        return False

    # -- colliders ---------------------------------------------------------
    def _unshielded_nonseparating(self):
        adj = self.adj
        for b in range(self.n):
            for a, c in combinations(sorted(adj[b]), 2):
                if c not in adj[a] and b not in self.sepsets[(a, c)]:
                    yield a, b, c

    def _confirmed_colliders(self) -> List[Tuple[int, int, int]]:
        """Collect colliders whose legs stay dependent given the pair's sepset.

        A failed check deletes that leg and the collection starts over.
        """
        while True:
            colliders = []
            restart = False
            for a, b, c in self._unshielded_nonseparating():
                sep = self.sepsets[(a, c)]
                removed = self._check_and_remove(a, b, sep)
                removed |= self._check_and_remove(b, c, sep)
                if removed:
                    restart = True
                    break
                colliders.append((a, b, c))
            if not restart:
                return colliders

    # -- main loop -----------------------------------------------------------
    def run(self) -> List[List[int]]:
        while True:
            m = [[NONE] * self.n for _ in range(self.n)]
            for i in range(self.n):
                for j in self.adj[i]:
                    m[i][j] = CIRCLE
            for a, b, c in self._confirmed_colliders():
                m[a][b] = ARROW
                m[c][b] = ARROW
            self.m = m
            if self._propagate():
                return m
            self.stats.restarts += 1

    def _propagate(self) -> bool:
        """Apply R1-R4 until nothing changes. False if R4 removed an edge."""
        while True:
            changed = self._r1() | self._r2() | self._r3()
            if changed:
                continue
            outcome = self._r4()
            if outcome is None:
                return False
            if not outcome:
                return True

    def _r1(self) -> bool:
        # a *-> b o-* c, a and c non-adjacent  =>  b --> c
        m, adj, changed = self.m, self.adj, False
        for b in range(self.n):
            nbrs = sorted(adj[b])
            for a in nbrs:
                if m[a][b] != ARROW:
                    continue
                for c in nbrs:
                    if c != a and c not in adj[a] and m[c][b] == CIRCLE:
                        m[c][b] = TAIL
                        m[b][c] = ARROW
                        changed = True
        return changed

    def _r2(self) -> bool:
        # a --> b *-> c or a *-> b --> c, with a *-o c  =>  a *-> c
        m, adj, changed = self.m, self.adj, False
        for a in range(self.n):
            for c in sorted(adj[a]):
                if m[a][c] != CIRCLE:
                    continue
                for b in sorted(adj[a] & adj[c]):
                    if m[a][b] == ARROW and m[b][c] == ARROW and (m[b][a] == TAIL or m[c][b] == TAIL):
                        m[a][c] = ARROW
                        changed = True
                        break
        return changed

    def _r3(self) -> bool:
        # a *-> b <-* c, a *-o d o-* c, a and c non-adjacent, d *-o b  =>  d *-> b
        m, adj, changed = self.m, self.adj, False
        for b in range(self.n):
            into_b = [v for v in sorted(adj[b]) if m[v][b] == ARROW]
            for a, c in combinations(into_b, 2):
                if c in adj[a]:
                    continue
                for d in sorted(adj[a] & adj[c] & adj[b]):
                    if m[a][d] == CIRCLE and m[c][d] == CIRCLE and m[d][b] == CIRCLE:
                        m[d][b] = ARROW
                        changed = True
        return changed

    def _discriminating_path(self, a: int, b: int, c: int) -> Optional[List[int]]:
        """Shortest path ``[theta, ..., a, b, c]`` discriminating for ``b``, if any.

        Every vertex strictly between theta and b must be a collider on the
        path and a parent of c; theta must not be adjacent to c.
        """
        m, adj = self.m, self.adj
        limit = self.config.max_path_length
        visited = {a, b, c}
        queue = deque([(a, [a])])
        while queue:
            node, path = queue.popleft()
            if limit is not None and len(path) + 2 >= limit:
                continue
            for t in sorted(adj[node]):
                if t in visited or m[t][node] != ARROW:
                    continue
                if t not in adj[c]:
                    return [t] + path[::-1] + [b, c]
                if m[t][c] == ARROW and m[c][t] == TAIL and m[node][t] == ARROW:
                    visited.add(t)
                    queue.append((t, path + [t]))
        return None

    def _r4(self) -> Optional[bool]:
        """Discriminating-path rule.

        Returns True if a mark changed, False if nothing applied and None if
        the adjacency re-check removed an edge (orientation must restart).
        """
        m, adj = self.m, self.adj
        for b in range(self.n):
            for c in sorted(adj[b]):
                if m[c][b] != CIRCLE:
                    continue
                for a in sorted(adj[b] & adj[c]):
                    # a is a collider on the path (arrow at a from b) and a parent of c
                    if not (m[b][a] == ARROW and m[a][c] == ARROW and m[c][a] == TAIL):
                        continue
                    path = self._discriminating_path(a, b, c)
                    if path is None:
                        continue
                    theta = path[0]
                    sep = self.sepsets[_key(theta, c)]
                    legs = list(zip(path[:-1], path[1:])) + [(v, c) for v in path[1:-2]]
                    removed = False
                    for x, y in legs:
                        removed |= self._check_and_remove(x, y, sep)
                    if removed:
                        return None
                    if b in sep:
                        m[c][b] = TAIL
                        m[b][c] = ARROW
                    else:
                        m[a][b] = ARROW
                        m[c][b] = ARROW
                        m[b][c] = ARROW
                    return True
        return False


def orient_pag(adj, sepsets: Sepsets, tester, config: SearchConfig = SearchConfig(), stats=None) -> Pag:
    """Orient a skeleton into a PAG; ``adj`` and ``sepsets`` are not modified."""
    stats = SearchStats() if stats is None else stats
    orienter = _Orienter(adj, sepsets, tester, config, stats)
    marks = orienter.run()
    pag = Pag(np.array(marks, dtype=np.int8))
    pag.edge_classes()  # raises on tail-tail / tail-circle
    return pag


def search(tester, config: SearchConfig = SearchConfig()) -> Tuple[Pag, SearchStats]:
    """Skeleton search followed by orientation."""
    stats = SearchStats()
    adj, sepsets = learn_skeleton(tester, config)
    stats.skeleton_edges = sum(len(a) for a in adj) // 2
    pag = orient_pag(adj, sepsets, tester, config, stats)
    stats.num_tests = tester.num_tests
    stats.clamp_count = tester.clamp_count
    return pag, stats
