"""Post-hoc calibration of seven-class edge probabilities.

The calibrator is an ensemble of ten one-hidden-layer networks (hidden width
drawn from 4..7, logistic hidden units, softmax output) fitted by mini-batch
Adagrad on cross-entropy. Its prediction is the mean of the member outputs.
A single-layer softmax regression is provided as the linear baseline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import seeding
from .citest import DSeparation
from .graph import NUM_CLASSES, CausalDag, EdgeClass, num_pairs, pair_index
from .search import SearchConfig, search

NUM_BINS = 5
BIN_EDGES = (0.2, 0.4, 0.6, 0.8)


# -- ground truth ---------------------------------------------------------------


class TruthOracle:
    """True edge class of every observed pair.

    The truth is the PAG the search itself produces when its independence
    tests are answered by d-separation in the generating DAG, restricted to
    the observed nodes. This makes circle-mark classes well defined.
    """

    def __init__(self, classes: np.ndarray, num_nodes: int):
        classes = np.asarray(classes, dtype=np.int64)
        if classes.shape != (num_pairs(num_nodes),):
            raise ValueError("need one class per pair")
        if classes.min(initial=0) < 0 or classes.max(initial=0) >= NUM_CLASSES:
            raise ValueError("classes must lie in 0..6")
        self.classes = classes
        self.num_nodes = num_nodes

    @classmethod
    def from_dag(cls, dag: CausalDag, observed: Sequence[int], config: SearchConfig = SearchConfig()):
        pag, _ = search(DSeparation(dag, observed), config)
        return cls(pag.edge_classes(), len(observed))

    def label(self, i: int, j: int) -> EdgeClass:
        return EdgeClass(self.classes[pair_index(i, j, self.num_nodes)])


def true_edge_class(dag: CausalDag, latents, a: int, b: int) -> EdgeClass:
    """True class of the pair of DAG nodes ``(a, b)`` with ``latents`` hidden.

    The class is reported for the canonical orientation (smaller node first).
    """
    latents = set(latents)
    if a in latents or b in latents or a == b:
        raise ValueError("a and b must be distinct observed nodes")
    observed = [v for v in range(dag.num_nodes) if v not in latents]
    oracle = TruthOracle.from_dag(dag, observed)
    return oracle.label(observed.index(a), observed.index(b))


# -- calibration split -------------------------------------------------------------


def probability_bin(p: np.ndarray) -> np.ndarray:
    """Bin of each probability in {[0,.2), [.2,.4), [.4,.6), [.6,.8), [.8,1]}."""
    return np.searchsorted(BIN_EDGES, p, side="right")


def _allocate(quota: int, sizes: np.ndarray) -> np.ndarray:
    """Split ``quota`` evenly over bins; a bin's shortfall goes to the others
    in proportion to their populations (largest remainder, ties to lower bins)."""
    alloc = np.minimum(quota // len(sizes), sizes)
    while True:
        deficit = quota - int(alloc.sum())
        spare = sizes - alloc
        if deficit <= 0 or spare.sum() == 0:
            return alloc
        weights = np.where(spare > 0, sizes, 0).astype(float)
        exact = deficit * weights / weights.sum()
        share = np.floor(exact).astype(np.int64)
        leftover = deficit - int(share.sum())
        order = np.lexsort((np.arange(len(sizes)), -(exact - share)))
        for b in order[:leftover]:
            share[b] += 1
        alloc = alloc + np.minimum(share, spare)


def stratified_sample(
    probs: np.ndarray,
    truth: np.ndarray,
    n_train: int,
    rng: np.random.Generator,
    strata: str = "score",
) -> Tuple[np.ndarray, np.ndarray]:
    """Choose ``n_train`` calibration pairs, ``n_train / 7`` per edge class.

    For each class ``c`` the candidate pairs are binned into five probability
    bins by their bootstrap probability of ``c`` and every bin contributes an
    equal share; a bin's shortfall is spread over the class's other bins.

    ``strata="score"`` draws class ``c``'s share from all pairs, binned on the
    ``c`` column of ``probs``, so truth is only needed for the chosen pairs. A
    pair already drawn for an earlier class is not drawn again.
    ``strata="true_class"`` draws it only from pairs whose true class is
    ``c``; a class with fewer pairs than its share contributes all of them.

    Returns sorted ``(train, test)`` pair indices; ``test`` is the complement.
    """
    probs = np.asarray(probs, dtype=float)
    truth = np.asarray(truth, dtype=np.int64)
    if n_train % NUM_CLASSES:
        raise ValueError(f"calibration size {n_train} is not divisible by 7")
    if strata not in ("score", "true_class"):
        raise ValueError(f"unknown strata {strata!r}")
    quota = n_train // NUM_CLASSES
    available = np.ones(truth.size, dtype=bool)
    for c in range(NUM_CLASSES):
        if strata == "true_class":
            members = np.flatnonzero(truth == c)
            if members.size == 0:
                raise ValueError(f"no pair has true class {c}; cannot stratify")
        else:
            members = np.flatnonzero(available)
        bins = probability_bin(probs[members, c])
        sizes = np.bincount(bins, minlength=NUM_BINS)
        alloc = _allocate(quota, sizes)
        for b in range(NUM_BINS):
            if alloc[b]:
                pool = members[bins == b]
                available[rng.choice(pool, size=int(alloc[b]), replace=False)] = False
    return np.flatnonzero(~available), np.flatnonzero(available)


# -- networks ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingMeta:
    learning_rate: float = 0.1
    batch_size: int = 10
    max_epochs: int = 500
    patience: int = 25
    min_improvement: float = 1e-6
    epsilon: float = 1e-8
    num_members: int = 10
    hidden_sizes: Tuple[int, ...] = (4, 5, 6, 7)
    seed: int = 0


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


class ShallowNet:
    """7 -> hidden (logistic) -> 7 (softmax). ``hidden_size == 0`` means no hidden layer."""

    def __init__(self, params: dict):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    @property
    def hidden_size(self) -> int:
        return self.params["w_in"].shape[1] if "w_in" in self.params else 0

    @classmethod
    def initialise(cls, hidden_size: int, rng: np.random.Generator) -> "ShallowNet":
        if hidden_size == 0:
            return cls({"w_out": _glorot(rng, NUM_CLASSES, NUM_CLASSES), "b_out": np.zeros(NUM_CLASSES)})
        return cls(
            {
                "w_in": _glorot(rng, NUM_CLASSES, hidden_size),
                "b_in": np.zeros(hidden_size),
                "w_out": _glorot(rng, hidden_size, NUM_CLASSES),
                "b_out": np.zeros(NUM_CLASSES),
            }
        )

    def _forward(self, x):
        p = self.params
        if "w_in" in p:
            hidden = _sigmoid(x @ p["w_in"] + p["b_in"])
        else:
            hidden = x
        return hidden, _softmax(hidden @ p["w_out"] + p["b_out"])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.atleast_2d(x))[1]

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        out = self.predict(x)
        return float(-np.mean(np.log(out[np.arange(len(y)), y])))

    def gradients(self, x: np.ndarray, y: np.ndarray) -> dict:
        """Gradients of mean cross-entropy over the batch."""
        p = self.params
        hidden, out = self._forward(x)
        delta = out.copy()
        delta[np.arange(len(y)), y] -= 1.0
        delta /= len(y)
        grads = {"w_out": hidden.T @ delta, "b_out": delta.sum(axis=0)}
        if "w_in" in p:
            back = (delta @ p["w_out"].T) * hidden * (1.0 - hidden)
            grads["w_in"] = x.T @ back
            grads["b_in"] = back.sum(axis=0)
        return grads

    def to_dict(self) -> dict:
        return {"hidden_size": self.hidden_size, **{k: v.tolist() for k, v in sorted(self.params.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "ShallowNet":
        return cls({k: np.array(v, dtype=float) for k, v in d.items() if k != "hidden_size"})


def fit_adagrad(
    net: ShallowNet, x: np.ndarray, y: np.ndarray, meta: TrainingMeta, rng: np.random.Generator
) -> List[float]:
    """Train ``net`` in place; returns the full-data loss before training and after each epoch."""
    accum = {k: np.zeros_like(v) for k, v in net.params.items()}
    losses = [net.loss(x, y)]
    n = len(y)
    for epoch in range(meta.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, meta.batch_size):
            batch = order[start : start + meta.batch_size]
            for k, g in net.gradients(x[batch], y[batch]).items():
                accum[k] += g * g
                net.params[k] -= meta.learning_rate * g / np.sqrt(accum[k] + meta.epsilon)
        loss = net.loss(x, y)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite training loss at epoch {epoch} (hidden size {net.hidden_size})"
            )
        losses.append(loss)
        if epoch + 1 >= meta.patience and losses[-1 - meta.patience] - loss < meta.min_improvement:
            break
    return losses


def _check_examples(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != NUM_CLASSES or x.shape[0] != y.size:
        raise ValueError("inputs must be (n, 7) with one label each")
    if y.size < NUM_CLASSES:
        raise ValueError("need at least 7 calibration examples")
    if y.min() < 0 or y.max() >= NUM_CLASSES:
        raise ValueError("labels must lie in 0..6")
    if np.any(np.abs(x.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("each input must sum to 1")
    return x, y


class CalibrationModel:
    """Ensemble of shallow networks; prediction is the mean member output."""

    def __init__(self, members: List[ShallowNet], meta: TrainingMeta, history: Optional[List[List[float]]] = None):
        self.members = members
        self.meta = meta
        self.history = history or []

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.mean([m.predict(x) for m in self.members], axis=0)
        drift = np.abs(out.sum(axis=1) - 1.0)
        if np.any(drift > 1e-9):
            out = out / out.sum(axis=1, keepdims=True)
        return out

    def member_predictions(self, x: np.ndarray) -> np.ndarray:
        return np.stack([m.predict(np.atleast_2d(x)) for m in self.members])

    def to_json(self) -> str:
        meta = asdict(self.meta)
        meta["hidden_sizes"] = list(meta["hidden_sizes"])
        return json.dumps(
            {"training_meta": meta, "members": [m.to_dict() for m in self.members]},
            indent=1,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationModel":
        d = json.loads(text)
        meta = d["training_meta"]
        meta["hidden_sizes"] = tuple(meta["hidden_sizes"])
        return cls([ShallowNet.from_dict(m) for m in d["members"]], TrainingMeta(**meta))


def train(x, y, meta: TrainingMeta = TrainingMeta()) -> CalibrationModel:
    """Fit the shallow-network ensemble on ``(x, y)`` calibration examples.

    Member widths come from ``seeding.rng(meta.seed)``; member ``k`` is
    initialised and shuffled by ``seeding.rng(meta.seed, k + 1)``.
    """
    x, y = _check_examples(x, y)
    widths = seeding.rng(meta.seed).choice(meta.hidden_sizes, size=meta.num_members)
    members, history = [], []
    for k, width in enumerate(widths.tolist()):
        rng = seeding.rng(meta.seed, k + 1)
        net = ShallowNet.initialise(width, rng)
        history.append(fit_adagrad(net, x, y, meta, rng))
        members.append(net)
    return CalibrationModel(members, meta, history)


def train_softmax_baseline(x, y, meta: TrainingMeta = TrainingMeta()) -> CalibrationModel:
    """Softmax regression (no hidden layer), a single-member model."""
    x, y = _check_examples(x, y)
    rng = seeding.rng(meta.seed, 1)
    net = ShallowNet.initialise(0, rng)
    history = [fit_adagrad(net, x, y, meta, rng)]
    return CalibrationModel([net], meta, history)


def calibrate(model: CalibrationModel, probs: np.ndarray) -> np.ndarray:
    """Map one 7-vector (or an ``(n, 7)`` batch) to calibrated probabilities."""
    probs = np.asarray(probs, dtype=float)
    single = probs.ndim == 1
    batch = np.atleast_2d(probs)
    if np.any(np.abs(batch.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("inputs must sum to 1")
    out = model.predict(batch)
    return out[0] if single else out
