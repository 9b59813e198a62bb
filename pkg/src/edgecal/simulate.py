"""Random linear-Gaussian causal networks with hidden confounders."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .graph import CausalDag, num_pairs


@dataclass(frozen=True)
class SimConfig:
    num_nodes: int = 200
    num_edges: int = 200
    sample_size: int = 1000
    hidden_fraction: float = 0.1
    variance_range: Tuple[float, float] = (1.0, 3.0)
    coeff_magnitude_range: Tuple[float, float] = (0.2, 1.5)
    seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 2:
            raise ValueError("need at least two nodes")
        if not 0 <= self.num_edges <= num_pairs(self.num_nodes):
            raise ValueError(
                f"{self.num_edges} edges exceed the {num_pairs(self.num_nodes)} "
                f"forward edges possible over {self.num_nodes} nodes"
            )
        if not 0 <= self.hidden_fraction < 1:
            raise ValueError("hidden_fraction must lie in [0, 1)")
        lo, hi = self.variance_range
        if not 0 < lo <= hi:
            raise ValueError("variance_range must be positive and ordered")
        lo, hi = self.coeff_magnitude_range
        if not 0 < lo <= hi:
            raise ValueError("coeff_magnitude_range must be positive and ordered")
        if self.sample_size < 2:
            raise ValueError("sample_size must be at least 2")

    @property
    def num_latents(self) -> int:
        return latent_count(self.hidden_fraction, self.num_nodes)


def latent_count(h: float, num_nodes: int) -> int:
    # round half up, independent of banker's rounding
    return int(math.floor(h * num_nodes + 0.5))


@dataclass
class Dataset:
    """Observed samples. ``provenance[k]`` is the original node of column ``k``."""

    values: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.provenance = np.asarray(self.provenance, dtype=np.int64)
        if self.values.ndim != 2 or self.values.shape[1] != self.provenance.size:
            raise ValueError("values must be a (samples, columns) matrix matching provenance")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset contains non-finite values")

    @property
    def column_names(self) -> List[str]:
        return [f"X{v}" for v in self.provenance.tolist()]

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_columns(self) -> int:
        return self.values.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.column_names)
        for row in self.values.tolist():
            writer.writerow([repr(x) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if not all(name.startswith("X") for name in header):
            raise ValueError("column names must look like X<node>")
        provenance = [int(name[1:]) for name in header]
        values = np.array([[float(x) for x in row] for row in rows[1:]], dtype=float)
        return cls(values.reshape(len(rows) - 1, len(header)), provenance)


def generate_dag(config: SimConfig, rng: np.random.Generator) -> CausalDag:
    """Random DAG with exactly ``num_edges`` edges pointing forward in a random order.

    Edges are distinct pairs of positions drawn uniformly without replacement;
    each points from the earlier to the later position.
    """
    v, e = config.num_nodes, config.num_edges
    if e > num_pairs(v):
        raise ValueError(f"{e} edges exceed the {num_pairs(v)} possible forward edges")
    order = rng.permutation(v)
    chosen = np.sort(rng.choice(num_pairs(v), size=e, replace=False))
    first, second = np.triu_indices(v, k=1)
    parents = order[first[chosen]]
    children = order[second[chosen]]

    lo, hi = config.coeff_magnitude_range
    magnitude = rng.uniform(lo, hi, size=e)
    sign = np.where(rng.random(e) < 0.5, -1.0, 1.0)
    weights = magnitude * sign
    lo, hi = config.variance_range
    variances = rng.uniform(lo, hi, size=v)

    edges = tuple(zip(parents.tolist(), children.tolist()))
    coefficients = {edge: float(w) for edge, w in zip(edges, weights.tolist())}
    return CausalDag(v, edges, coefficients, variances)


def sample_dataset(dag: CausalDag, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` joint samples of every node, shape ``(n, num_nodes)``.

    Noise is ``sqrt(var) * standard_normal`` from ``rng`` (numpy's ziggurat
    transform over PCG64), drawn column by column in topological order.
    """
    data = np.zeros((n, dag.num_nodes))
    scale = np.sqrt(dag.noise_variances)
    for v in dag.topological_order():
        col = scale[v] * rng.standard_normal(n)
        for p in dag.parents(v):
            col += dag.coefficients[(p, v)] * data[:, p]
        data[:, v] = col
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("simulated data overflowed")
    return data


def confounders(dag: CausalDag) -> List[int]:
    """Nodes with at least two children."""
    return [v for v in range(dag.num_nodes) if len(dag.children(v)) >= 2]


class NotEnoughConfounders(ValueError):
    pass


def mask_latents(
    dag: CausalDag, data: np.ndarray, h: float, rng: np.random.Generator
) -> Dataset:
    """Hide ``round(h * V)`` confounders chosen uniformly at random."""
    k = latent_count(h, dag.num_nodes)
    pool = confounders(dag)
    if len(pool) < k:
        raise NotEnoughConfounders(
            f"need {k} latent confounders but the DAG has only {len(pool)} nodes with >= 2 children"
        )
    hidden = set(rng.choice(pool, size=k, replace=False).tolist()) if k else set()
    keep = np.array([v for v in range(dag.num_nodes) if v not in hidden], dtype=np.int64)
    return Dataset(data[:, keep], keep)


def latent_nodes(dag: CausalDag, dataset: Dataset) -> List[int]:
    observed = set(dataset.provenance.tolist())
    return [v for v in range(dag.num_nodes) if v not in observed]


def simulate(config: SimConfig, rng: np.random.Generator, max_attempts: int = 10):
    """Generate, sample and mask; regenerate the DAG if it lacks confounders.

    Returns ``(dag, dataset)``.
    """
    for attempt in range(max_attempts):
        dag = generate_dag(config, rng)
        if len(confounders(dag)) >= config.num_latents:
            break
    else:
        raise NotEnoughConfounders(
            f"no DAG with {config.num_latents} confounders after {max_attempts} attempts"
        )
    data = sample_dataset(dag, config.sample_size, rng)
    return dag, mask_latents(dag, data, config.hidden_fraction, rng)


def error_variance_share(dag: CausalDag, nodes: Sequence[int] = None) -> np.ndarray:
    """Fraction of each node's population variance owed to its own error term."""
    cov = dag.implied_covariance()
    share = dag.noise_variances / np.diag(cov)
    return share if nodes is None else share[list(nodes)]
