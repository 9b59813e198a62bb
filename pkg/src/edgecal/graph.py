"""Graph types: ground-truth DAGs, PAG endpoint marks and the seven edge classes.

A pair of nodes ``(a, b)`` is always canonicalised so that ``a < b``. The edge
class is read off the two endpoint marks of the ``a``--``b`` edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np


class Mark(enum.IntEnum):
    NONE = 0
    TAIL = 1
    ARROW = 2
    CIRCLE = 3


class EdgeClass(enum.IntEnum):
    NO_EDGE = 0
    A_TO_B = 1  # a --> b
    B_TO_A = 2  # a <-- b
    A_CIRCLE_ARROW_B = 3  # a o-> b
    B_CIRCLE_ARROW_A = 4  # a <-o b
    CIRCLE_CIRCLE = 5  # a o-o b
    BIDIRECTED = 6  # a <-> b


NUM_CLASSES = 7

_CLASS_OF_MARKS = {
    (Mark.NONE, Mark.NONE): EdgeClass.NO_EDGE,
    (Mark.TAIL, Mark.ARROW): EdgeClass.A_TO_B,
    (Mark.ARROW, Mark.TAIL): EdgeClass.B_TO_A,
    (Mark.CIRCLE, Mark.ARROW): EdgeClass.A_CIRCLE_ARROW_B,
    (Mark.ARROW, Mark.CIRCLE): EdgeClass.B_CIRCLE_ARROW_A,
    (Mark.CIRCLE, Mark.CIRCLE): EdgeClass.CIRCLE_CIRCLE,
    (Mark.ARROW, Mark.ARROW): EdgeClass.BIDIRECTED,
}
_MARKS_OF_CLASS = {c: m for m, c in _CLASS_OF_MARKS.items()}

# Relabelling of classes when the two endpoints of a pair are swapped.
SWAP_CLASS = (0, 2, 1, 4, 3, 5, 6)


class IllegalMarksError(ValueError):
    """Raised for endpoint combinations outside the seven edge classes.

    Tail--tail and tail--circle edges only arise with selection bias, which
    the search never models, so seeing one means an orientation rule is wrong.
    """


def classify_edge(mark_at_a, mark_at_b) -> EdgeClass:
    """Map the endpoint marks at ``a`` and ``b`` (with ``a < b``) to an edge class."""
    try:
        return _CLASS_OF_MARKS[(Mark(mark_at_a), Mark(mark_at_b))]
    except KeyError:
        raise IllegalMarksError(
            f"illegal endpoint marks ({Mark(mark_at_a).name}, {Mark(mark_at_b).name})"
        ) from None


def marks_of_class(cls) -> Tuple[Mark, Mark]:
    """Inverse of :func:`classify_edge`."""
    return _MARKS_OF_CLASS[EdgeClass(cls)]


def num_pairs(num_nodes: int) -> int:
    return num_nodes * (num_nodes - 1) // 2


def pair_index(i: int, j: int, num_nodes: int) -> int:
    """Ordinal of the unordered pair ``{i, j}`` in row-major upper-triangle order."""
    if i == j:
        raise ValueError(f"pair_index needs two distinct nodes, got {i} twice")
    if not (0 <= i < num_nodes and 0 <= j < num_nodes):
        raise ValueError(f"nodes ({i}, {j}) out of range for {num_nodes} nodes")
    a, b = (i, j) if i < j else (j, i)
    return a * (2 * num_nodes - a - 1) // 2 + (b - a - 1)


def pair_from_index(k: int, num_nodes: int) -> Tuple[int, int]:
    """Inverse of :func:`pair_index`; returns ``(a, b)`` with ``a < b``."""
    total = num_pairs(num_nodes)
    if not 0 <= k < total:
        raise ValueError(f"pair ordinal {k} out of range [0, {total})")
    # Largest a with pair_index(a, a+1) <= k, via the quadratic formula.
    n = num_nodes
    a = int((2 * n - 1 - math.sqrt((2 * n - 1) ** 2 - 8 * k)) // 2)
    while a > 0 and a * (2 * n - a - 1) // 2 > k:
        a -= 1
    while (a + 1) * (2 * n - a - 2) // 2 <= k:
        a += 1
    b = k - a * (2 * n - a - 1) // 2 + a + 1
    return a, b


def all_pairs(num_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Arrays ``(a, b)`` of every canonical pair, ordered by pair index."""
    return np.triu_indices(num_nodes, k=1)


@dataclass(frozen=True)
class CausalDag:
    """A linear-Gaussian structural equation model over a DAG.

    ``edges`` holds ``(parent, child)`` tuples, ``coefficients`` maps each edge
    to its linear weight and ``noise_variances[v]`` is the variance of node
    ``v``'s error term.
    """

    num_nodes: int
    edges: Tuple[Tuple[int, int], ...]
    coefficients: Dict[Tuple[int, int], float]
    noise_variances: np.ndarray
    _parents: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _children: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = tuple(sorted((int(u), int(v)) for u, v in self.edges))
        object.__setattr__(self, "edges", edges)
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        parents: List[List[int]] = [[] for _ in range(self.num_nodes)]
        children: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in edges:
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u}, {v}) out of range")
            if (u, v) not in self.coefficients:
                raise ValueError(f"edge ({u}, {v}) has no coefficient")
            parents[v].append(u)
            children[u].append(v)
        if len(self.coefficients) != len(edges):
            raise ValueError("coefficients must match edges one-to-one")
        variances = np.asarray(self.noise_variances, dtype=float)
        if variances.shape != (self.num_nodes,) or np.any(variances <= 0):
            raise ValueError("need one positive noise variance per node")
        object.__setattr__(self, "noise_variances", variances)
        object.__setattr__(self, "_parents", tuple(tuple(p) for p in parents))
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))
        self.topological_order()  # raises on cycles

    def parents(self, v: int) -> Tuple[int, ...]:
        return self._parents[v]

    def children(self, v: int) -> Tuple[int, ...]:
        return self._children[v]

    def topological_order(self) -> List[int]:
        indegree = [len(p) for p in self._parents]
        ready = [v for v in range(self.num_nodes) if indegree[v] == 0]
        order = []
        while ready:
            v = ready.pop()
            order.append(v)
            for c in self._children[v]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    ready.append(c)
        if len(order) != self.num_nodes:
            raise ValueError("graph contains a directed cycle")
        return order

    def ancestors(self, nodes: Iterable[int]) -> set:
        """All ancestors of ``nodes``, the nodes themselves included."""
        seen = set(nodes)
        stack = list(seen)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def implied_covariance(self) -> np.ndarray:
        """Population covariance ``(I - B)^-1 diag(noise) (I - B)^-T``."""
        b = np.zeros((self.num_nodes, self.num_nodes))
        for (u, v), w in self.coefficients.items():
            b[v, u] = w
        a = np.linalg.inv(np.eye(self.num_nodes) - b)
        return a @ np.diag(self.noise_variances) @ a.T


class Pag:
    """Partial ancestral graph stored as a dense endpoint-mark matrix.

    ``marks[i, j]`` is the mark at ``j``'s end of the ``i``--``j`` edge, so an
    edge ``i --> j`` has ``marks[i, j] == ARROW`` and ``marks[j, i] == TAIL``.
    """

    def __init__(self, marks: np.ndarray):
        marks = np.array(marks, dtype=np.int8)
        if marks.ndim != 2 or marks.shape[0] != marks.shape[1]:
            raise ValueError("marks must be a square matrix")
        present = marks != Mark.NONE
        if np.any(present != present.T):
            raise ValueError("edge presence must be symmetric")
        if np.any(np.diag(present)):
            raise ValueError("self-loops are not allowed")
        if marks.min(initial=0) < 0 or marks.max(initial=0) > Mark.CIRCLE:
            raise ValueError("unknown mark value")
        marks.setflags(write=False)
        self.marks = marks

    @property
    def num_nodes(self) -> int:
        return self.marks.shape[0]

    def edge_classes(self) -> np.ndarray:
        """Edge class of every canonical pair, ordered by pair index."""
        a, b = all_pairs(self.num_nodes)
        at_a = self.marks[b, a].astype(np.int64)
        at_b = self.marks[a, b].astype(np.int64)
        table = np.full((4, 4), -1, dtype=np.int64)
        for (ma, mb), c in _CLASS_OF_MARKS.items():
            table[ma, mb] = c
        classes = table[at_a, at_b]
        bad = np.flatnonzero(classes < 0)
        if bad.size:
            k = bad[0]
            raise IllegalMarksError(
                f"illegal endpoint marks ({Mark(at_a[k]).name}, {Mark(at_b[k]).name}) "
                f"on pair ({a[k]}, {b[k]})"
            )
        return classes

    def edge_class(self, i: int, j: int) -> EdgeClass:
        a, b = (i, j) if i < j else (j, i)
        return classify_edge(self.marks[b, a], self.marks[a, b])

    def skeleton(self) -> np.ndarray:
        return self.marks != Mark.NONE

    def __eq__(self, other):
        return isinstance(other, Pag) and np.array_equal(self.marks, other.marks)

    def __repr__(self):
        return f"Pag(num_nodes={self.num_nodes}, edges={int(self.skeleton().sum()) // 2})"


_LEFT = {Mark.TAIL: "-", Mark.ARROW: "<", Mark.CIRCLE: "o"}
_RIGHT = {Mark.TAIL: "-", Mark.ARROW: ">", Mark.CIRCLE: "o"}
_LEFT_INV = {v: k for k, v in _LEFT.items()}
_RIGHT_INV = {v: k for k, v in _RIGHT.items()}


def format_pag(pag: Pag) -> str:
    """Edge-list text, one ``i <marks> j`` line per present edge sorted by ``(i, j)``."""
    lines = [f"# nodes: {pag.num_nodes}"]
    a, b = np.nonzero(np.triu(pag.skeleton(), k=1))
    for i, j in zip(a.tolist(), b.tolist()):
        left = _LEFT[Mark(pag.marks[j, i])]
        right = _RIGHT[Mark(pag.marks[i, j])]
        lines.append(f"{i} {left}-{right} {j}")
    return "\n".join(lines) + "\n"


def _read_header(lines: List[str]) -> int:
    for line in lines:
        if line.startswith("# nodes:"):
            return int(line.split(":", 1)[1])
    raise ValueError("missing '# nodes:' header")


def parse_pag(text: str) -> Pag:
    lines = text.splitlines()
    n = _read_header(lines)
    marks = np.zeros((n, n), dtype=np.int8)
    for line in lines:
        if not line.strip() or line.startswith("#"):
            continue
        i, edge, j = line.split()
        i, j = int(i), int(j)
        if len(edge) != 3 or edge[1] != "-":
            raise ValueError(f"malformed edge {edge!r}")
        marks[j, i] = _LEFT_INV[edge[0]]
        marks[i, j] = _RIGHT_INV[edge[2]]
    return Pag(marks)


def format_dag(dag: CausalDag) -> str:
    """Edge list with coefficients, followed by the per-node noise variances."""
    lines = [f"# nodes: {dag.num_nodes}", "# edges: parent --> child coefficient"]
    for u, v in dag.edges:
        lines.append(f"{u} --> {v} {dag.coefficients[(u, v)]!r}")
    lines.append("# variances: node variance")
    for v, var in enumerate(dag.noise_variances.tolist()):
        lines.append(f"{v} {var!r}")
    return "\n".join(lines) + "\n"


def parse_dag(text: str) -> CausalDag:
    lines = text.splitlines()
    n = _read_header(lines)
    edges, coefs, variances = [], {}, np.zeros(n)
    section = None
    for line in lines:
        if line.startswith("# edges"):
            section = "edges"
        elif line.startswith("# variances"):
            section = "variances"
        elif line.strip() and not line.startswith("#"):
            parts = line.split()
            if section == "edges":
                u, v = int(parts[0]), int(parts[2])
                edges.append((u, v))
                coefs[(u, v)] = float(parts[3])
            elif section == "variances":
                variances[int(parts[0])] = float(parts[1])
    return CausalDag(n, tuple(edges), coefs, variances)
