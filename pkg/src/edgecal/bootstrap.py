"""Bootstrap edge-class probabilities.

The dataset is resampled with replacement ``num_replicates`` times, a PAG is
learned on each resample and, for every node pair, the fraction of PAGs showing
each of the seven edge classes becomes that pair's probability vector.

Replicate ``k`` draws its rows from ``seeding.rng(seed, k)``, so the result does
not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import seeding
from .citest import FisherZ, build_context
from .graph import NUM_CLASSES, Pag, all_pairs, format_pag, num_pairs, pair_index, parse_pag
from .search import SearchConfig, search
from .simulate import Dataset


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    num_replicates: int = 50
    search: SearchConfig = field(default_factory=SearchConfig)
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.num_replicates < 1:
            raise ValueError("num_replicates must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


def resample(data: Dataset, rng: np.random.Generator) -> Dataset:
    """Draw ``num_samples`` rows uniformly with replacement."""
    if data.num_samples == 0:
        raise ValueError("cannot resample an empty dataset")
    rows = rng.integers(0, data.num_samples, size=data.num_samples)
    return Dataset(data.values[rows], data.provenance)


def fisher_z_search(data: Dataset, config: SearchConfig) -> Pag:
    """Default per-replicate search: Fisher's Z tests on the resample."""
    pag, _ = search(FisherZ(build_context(data), config.alpha), config)
    return pag


class DistributionTable:
    """Per-pair edge-class counts over bootstrap replicates.

    ``counts[k, c]`` is the number of replicates that gave pair ``k`` (ordered
    by :func:`edgecal.graph.pair_index`) class ``c``.
    """

    def __init__(self, num_nodes: int, counts: np.ndarray, num_replicates: int):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_pairs(num_nodes), NUM_CLASSES):
            raise ValueError("counts must have one row per pair and 7 columns")
        if np.any(counts.sum(axis=1) != num_replicates):
            raise ValueError("every pair's counts must add up to num_replicates")
        self.num_nodes = num_nodes
        self.counts = counts
        self.num_replicates = num_replicates

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.num_replicates

    def distribution(self, i: int, j: int) -> np.ndarray:
        return self.probs[pair_index(i, j, self.num_nodes)]

    def to_csv(self) -> str:
        return format_distribution_csv(self.num_nodes, self.probs)


def format_distribution_csv(num_nodes: int, probs: np.ndarray) -> str:
    """``i,j,p0,...,p6`` rows in pair-index order with round-trip decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j"] + [f"p{c}" for c in range(NUM_CLASSES)])
    a, b = all_pairs(num_nodes)
    for i, j, row in zip(a.tolist(), b.tolist(), np.asarray(probs).tolist()):
        writer.writerow([i, j] + [repr(p) for p in row])
    return buf.getvalue()


def parse_distribution_csv(text: str):
    """Return ``(num_nodes, probs)`` from :func:`format_distribution_csv` output."""
    rows = list(csv.reader(io.StringIO(text)))[1:]
    probs = np.array([[float(x) for x in r[2:]] for r in rows], dtype=float).reshape(-1, NUM_CLASSES)
    num_nodes = max(int(r[1]) for r in rows) + 1 if rows else 1
    if probs.shape[0] != num_pairs(num_nodes):
        raise ValueError("distribution table is missing pairs")
    for k, r in enumerate(rows):
        if pair_index(int(r[0]), int(r[1]), num_nodes) != k:
            raise ValueError("distribution rows must be in pair-index order")
    return num_nodes, probs


def dataset_hash(data: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.values).tobytes())
    h.update(np.ascontiguousarray(data.provenance).tobytes())
    return h.hexdigest()


def _replicate(data: Dataset, config: BootstrapConfig, index: int, search_fn, checkpoint_dir) -> np.ndarray:
    path = None
    if checkpoint_dir is not None:
        path = os.path.join(checkpoint_dir, f"pag_{index:04d}.txt")
        if os.path.exists(path):
            with open(path) as fh:
                return parse_pag(fh.read()).edge_classes()
    try:
        sample = resample(data, seeding.rng(config.seed, index))
        pag = search_fn(sample, config.search)
        classes = pag.edge_classes()
    except Exception as exc:
        raise BootstrapError(f"bootstrap replicate {index} failed: {exc}") from exc
    if path is not None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(format_pag(pag))
        os.replace(tmp, path)
    return classes


def _replicate_star(args):
    return _replicate(*args)


def estimate_distributions(
    data: Dataset,
    config: BootstrapConfig,
    search_fn: Callable[[Dataset, SearchConfig], Pag] = fisher_z_search,
    checkpoint_dir: Optional[str] = None,
) -> DistributionTable:
    """Run the bootstrap ensemble and count edge classes per pair.

    ``search_fn`` must be picklable when ``config.jobs > 1``. With a
    ``checkpoint_dir`` each replicate's PAG is written there and reused on a
    later call, so interrupted runs resume.
    """
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    n = data.num_columns
    counts = np.zeros(num_pairs(n) * NUM_CLASSES, dtype=np.int64)
    offsets = np.arange(num_pairs(n), dtype=np.int64) * NUM_CLASSES
    tasks = [(data, config, k, search_fn, checkpoint_dir) for k in range(config.num_replicates)]
    if config.jobs == 1:
        results = map(_replicate_star, tasks)
        for classes in results:
            counts += np.bincount(offsets + classes, minlength=counts.size)
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for classes in pool.map(_replicate_star, tasks):
                counts += np.bincount(offsets + classes, minlength=counts.size)
    return DistributionTable(n, counts.reshape(-1, NUM_CLASSES), config.num_replicates)


def metadata(table: DistributionTable, data: Dataset, config: BootstrapConfig) -> str:
    return json.dumps(
        {
            "num_replicates": table.num_replicates,
            "alpha": config.search.alpha,
            "max_conditioning_size": config.search.max_conditioning_size,
            "seed": config.seed,
            "dataset_sha256": dataset_hash(data),
            "num_nodes": table.num_nodes,
        },
        indent=2,
        sort_keys=True,
    )
