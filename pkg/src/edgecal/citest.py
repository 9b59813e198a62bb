"""Conditional-independence decisions.

Two testers share one interface, ``independent(i, j, S) -> bool``:

* :class:`FisherZ` runs Fisher's Z test on partial correlations computed from
  a precomputed correlation matrix.
* :class:`DSeparation` answers from a known DAG (d-separation), optionally over
  a subset of observed nodes. It is the ground-truth oracle for the search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Sequence, Set, Tuple

import numpy as np

from .graph import CausalDag

CLAMP = 1.0 - 1e-12


class SingularConditioningSet(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CiDecision:
    independent: bool
    p_value: float
    statistic: float


@dataclass(frozen=True)
class CorrelationContext:
    correlation: np.ndarray
    sample_size: int

    @property
    def num_vars(self) -> int:
        return self.correlation.shape[0]


def build_context(data, column_names: Sequence[str] = None) -> CorrelationContext:
    """Pearson correlation of the columns of ``data`` (array or Dataset)."""
    if hasattr(data, "values") and hasattr(data, "provenance"):
        column_names = data.column_names
        data = data.values
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D array with at least two rows")
    centred = x - x.mean(axis=0)
    sd = np.sqrt(np.einsum("ij,ij->j", centred, centred))
    const = np.flatnonzero(sd <= 1e-12 * (1.0 + np.abs(x).max(axis=0)) * math.sqrt(x.shape[0]))
    if const.size:
        k = int(const[0])
        name = column_names[k] if column_names is not None else f"column {k}"
        raise ValueError(f"{name} is constant; correlation undefined")
    z = centred / sd
    corr = z.T @ z
    np.clip(corr, -1.0, 1.0, out=corr)
    np.fill_diagonal(corr, 1.0)
    corr = (corr + corr.T) / 2
    corr.setflags(write=False)
    return CorrelationContext(corr, x.shape[0])


def partial_correlation(corr: np.ndarray, i: int, j: int, cond: Sequence[int] = ()) -> float:
    """Partial correlation of ``i`` and ``j`` given ``cond`` by inverting the sub-matrix."""
    if not cond:
        return float(corr[i, j])
    idx = [i, j, *cond]
    try:
        prec = np.linalg.inv(corr[np.ix_(idx, idx)])
    except np.linalg.LinAlgError:
        raise SingularConditioningSet(f"singular correlation sub-matrix for {idx}") from None
    denom = prec[0, 0] * prec[1, 1]
    if not denom > 0 or not np.isfinite(denom):
        raise SingularConditioningSet(f"singular correlation sub-matrix for {idx}")
    return float(-prec[0, 1] / math.sqrt(denom))


def two_sided_p(z: float) -> float:
    """``2 * (1 - Phi(|z|))`` computed as ``erfc(|z| / sqrt 2)`` to avoid cancellation."""
    return math.erfc(abs(z) / math.sqrt(2.0))


def fisher_z_statistic(r: float, n: int, cond_size: int) -> Tuple[float, bool]:
    """Return ``(z, clamped)`` for partial correlation ``r``."""
    clamped = bool(abs(r) >= CLAMP)
    if clamped:
        r = math.copysign(CLAMP, r)
    return math.atanh(r) * math.sqrt(n - cond_size - 3), clamped


def fisher_z_test(
    ctx: CorrelationContext, i: int, j: int, cond: Iterable[int], alpha: float
) -> CiDecision:
    cond = tuple(cond)
    _check_query(i, j, cond)
    if ctx.sample_size <= len(cond) + 3:
        raise ValueError(f"sample size {ctx.sample_size} too small for |S| = {len(cond)}")
    r = partial_correlation(ctx.correlation, i, j, cond)
    z, _ = fisher_z_statistic(r, ctx.sample_size, len(cond))
    p = two_sided_p(z)
    return CiDecision(p > alpha, p, z)


def _check_query(i, j, cond):
    if i == j:
        raise ValueError("i and j must differ")
    if i in cond or j in cond:
        raise ValueError("conditioning set must exclude i and j")


class FisherZ:
    """Cached Fisher's Z tester over one correlation context.

    ``clamp_count`` counts tests where ``|r|`` had to be clamped below 1 and
    ``num_tests`` counts distinct (uncached) tests.
    """

    def __init__(self, ctx: CorrelationContext, alpha: float):
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        self.ctx = ctx
        self.alpha = alpha
        self.num_vars = ctx.num_vars
        self.clamp_count = 0
        self.num_tests = 0
        self._cache: Dict[Tuple, bool] = {}
        self._corr = ctx.correlation
        self._n = ctx.sample_size

    def p_value(self, i: int, j: int, cond: Sequence[int] = ()) -> float:
        return fisher_z_test(self.ctx, i, j, cond, self.alpha).p_value

    def independent(self, i: int, j: int, cond: Sequence[int] = ()) -> bool:
        if i > j:
            i, j = j, i
        cond = tuple(sorted(cond))
        key = (i, j, cond)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        _check_query(i, j, cond)
        k = len(cond)
        if self._n <= k + 3:
            raise ValueError(f"sample size {self._n} too small for |S| = {k}")
        if k == 0:
            r = self._corr[i, j]
        elif k == 1:
            c = self._corr
            s = cond[0]
            r_is, r_js = c[i, s], c[j, s]
            denom = (1.0 - r_is * r_is) * (1.0 - r_js * r_js)
            if denom <= 0.0:
                raise SingularConditioningSet(f"singular correlation sub-matrix for {[i, j, s]}")
            r = (c[i, j] - r_is * r_js) / math.sqrt(denom)
        else:
            r = partial_correlation(self._corr, i, j, cond)
        z, clamped = fisher_z_statistic(r, self._n, k)
        self.clamp_count += clamped
        self.num_tests += 1
        result = two_sided_p(z) > self.alpha
        self._cache[key] = result
        return result


def d_connected_set(dag: CausalDag, source: int, cond: Iterable[int]) -> Set[int]:
    """Nodes reachable from ``source`` along trails that are active given ``cond``.

    Reachability over (node, direction) states: a trail may pass a collider only
    if the collider is in ``cond`` or has a descendant there.
    """
    cond = set(cond)
    opens_collider = dag.ancestors(cond)
    reached = set()
    visited = set()
    # direction True: arrived from a child (moving up); False: from a parent
    stack = [(source, True)]
    while stack:
        node, up = stack.pop()
        if (node, up) in visited:
            continue
        visited.add((node, up))
        if node not in cond:
            reached.add(node)
        if up and node not in cond:
            stack.extend((p, True) for p in dag.parents(node))
            stack.extend((c, False) for c in dag.children(node))
        elif not up:
            if node not in cond:
                stack.extend((c, False) for c in dag.children(node))
            if node in opens_collider:
                stack.extend((p, True) for p in dag.parents(node))
    reached.discard(source)
    return reached


def d_separated(dag: CausalDag, i: int, j: int, cond: Iterable[int]) -> bool:
    cond = set(cond)
    _check_query(i, j, cond)
    return j not in d_connected_set(dag, i, cond)


class DSeparation:
    """Oracle tester: observed column ``k`` stands for DAG node ``observed[k]``.

    Each query only explores the ancestral subgraph of ``{i, j} | S``, which is
    sufficient for d-separation and small in sparse graphs.
    """

    def __init__(self, dag: CausalDag, observed: Sequence[int] = None):
        self.dag = dag
        self.observed = list(range(dag.num_nodes)) if observed is None else [int(v) for v in observed]
        self.num_vars = len(self.observed)
        self.num_tests = 0
        self.clamp_count = 0
        self._anc = [None] * dag.num_nodes
        for v in dag.topological_order():
            anc = {v}
            for p in dag.parents(v):
                anc |= self._anc[p]
            self._anc[v] = frozenset(anc)
        self._cache: Dict[Tuple, bool] = {}

    def independent(self, i: int, j: int, cond: Sequence[int] = ()) -> bool:
        if i > j:
            i, j = j, i
        cond = tuple(sorted(cond))
        key = (i, j, cond)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        _check_query(i, j, cond)
        obs = self.observed
        result = not self._connected(obs[i], obs[j], {obs[c] for c in cond})
        self._cache[key] = result
        self.num_tests += 1
        return result

    def _connected(self, x: int, y: int, cond: Set[int]) -> bool:
        anc_cond = set().union(*(self._anc[c] for c in cond)) if cond else set()
        scope = anc_cond | self._anc[x] | self._anc[y]
        dag = self.dag
        visited = set()
        stack = [(x, True)]
        while stack:
            state = stack.pop()
            if state in visited:
                continue
            visited.add(state)
            node, up = state
            if node == y:
                return True
            blocked = node in cond
            if up and not blocked:
                stack.extend((p, True) for p in dag.parents(node))
                stack.extend((c, False) for c in dag.children(node) if c in scope)
            elif not up:
                if not blocked:
                    stack.extend((c, False) for c in dag.children(node) if c in scope)
                if node in anc_cond:
                    stack.extend((p, True) for p in dag.parents(node))
        return False
