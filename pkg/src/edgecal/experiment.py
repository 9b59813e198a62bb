"""Experiment driver: simulate, bootstrap, split, calibrate, evaluate, report.

Every stage reads its inputs from and writes its outputs to a replication
directory, so stages can be run one at a time (see :mod:`edgecal.cli`) or all
together by :func:`run_experiment`. Seeds form a tree::

    master_seed -> replication seed -> stage seed (-> alpha, calibration size)

built with :func:`edgecal.seeding.mix`, so any stage can be replayed alone.

Layout under ``output_dir``::

    config.ini  manifest.json  metrics.csv  summary.csv  significance.csv
    rep_00/dag.txt  dataset.csv  truth.csv
    rep_00/alpha_0.005/pags/pag_0000.txt ...  distributions.csv  distributions.json
    rep_00/alpha_0.005/N_70/split.json  model.json  calibrated.csv
                           metrics_before.json  metrics_after.json
                           reliability_before.csv  reliability_after.csv
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__, seeding
from .bootstrap import BootstrapConfig, dataset_hash, estimate_distributions, metadata, parse_distribution_csv
from .calibrate import TrainingMeta, TruthOracle, stratified_sample, train
from .graph import all_pairs, format_dag
from .metrics import MetricsReport, TYPES, evaluate, reliability_csv, wilcoxon_signed_rank
from .search import SearchConfig
from .simulate import Dataset, SimConfig, simulate

log = logging.getLogger(__name__)

METRICS = ("precision", "recall", "f1", "mce")
METHODS = ("before", "after")


@dataclass(frozen=True)
class ExperimentConfig:
    num_nodes: int = 200
    num_edges: int = 200
    sample_size: int = 1000
    hidden_fraction: float = 0.1
    variance_range: Tuple[float, float] = (1.0, 3.0)
    coeff_magnitude_range: Tuple[float, float] = (0.2, 1.5)
    alphas: Tuple[float, ...] = (0.001, 0.005)
    max_conditioning_size: Optional[int] = None
    num_bootstrap: int = 50
    calibration_sizes: Tuple[int, ...] = (70, 140, 210)
    stratify_on: str = "score"
    learning_rate: float = 0.1
    batch_size: int = 10
    max_epochs: int = 500
    bin_capacity: int = 100
    replications: int = 10
    master_seed: int = 0
    jobs: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.alphas or not self.calibration_sizes:
            raise ValueError("need at least one alpha and one calibration size")
        for n_cal in self.calibration_sizes:
            if n_cal % 7:
                raise ValueError(f"calibration size {n_cal} is not divisible by 7")
        if self.stratify_on not in ("score", "true_class"):
            raise ValueError(f"stratify_on must be 'score' or 'true_class', got {self.stratify_on!r}")
        for alpha in self.alphas:
            SearchConfig(alpha, self.max_conditioning_size)
        self.sim_config(0)
        BootstrapConfig(self.num_bootstrap, jobs=self.jobs)

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(
            self.num_nodes, self.num_edges, self.sample_size, self.hidden_fraction,
            tuple(self.variance_range), tuple(self.coeff_magnitude_range), seed,
        )

    def replication_seed(self, rep: int) -> int:
        return seeding.mix(self.master_seed, rep)

    def identity_hash(self) -> str:
        """Hash of everything that affects results (not jobs or output_dir)."""
        text = to_ini(replace(self, jobs=1, output_dir=""))
        return hashlib.sha256(text.encode()).hexdigest()


# -- config files ------------------------------------------------------------------------

_SECTIONS = {
    "simulation": ("num_nodes", "num_edges", "sample_size", "hidden_fraction", "variance_range",
                   "coeff_magnitude_range"),
    "search": ("alphas", "max_conditioning_size"),
    "bootstrap": ("num_bootstrap",),
    "calibration": ("calibration_sizes", "stratify_on", "learning_rate", "batch_size", "max_epochs"),
    "evaluation": ("bin_capacity",),
    "experiment": ("replications", "master_seed", "jobs", "output_dir"),
}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def to_ini(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {k: _format_value(getattr(config, k)) for k in keys}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _parse_value(name: str, text: str, default):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(default, tuple):
        kind = type(default[0])
        return tuple(kind(x.strip()) for x in text.split(",") if x.strip())
    if name == "max_conditioning_size":
        return int(text)
    return type(default)(text)


def load_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Read an INI config (sections as in :func:`to_ini`); ``overrides`` win."""
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    values = dict(defaults)
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        known = {k for keys in _SECTIONS.values() for k in keys}
        for section in parser.sections():
            for key, text in parser[section].items():
                if key not in known:
                    raise ValueError(f"unknown config key [{section}] {key}")
                values[key] = _parse_value(key, text, defaults[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# -- file helpers -------------------------------------------------------------------------


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _read(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def rep_dir(config: ExperimentConfig, rep: int) -> str:
    return os.path.join(config.output_dir, f"rep_{rep:02d}")


def alpha_dir(config: ExperimentConfig, rep: int, alpha: float) -> str:
    return os.path.join(rep_dir(config, rep), f"alpha_{alpha!r}")


def size_dir(config: ExperimentConfig, rep: int, alpha: float, n_cal: int) -> str:
    return os.path.join(alpha_dir(config, rep, alpha), f"N_{n_cal}")


def truth_csv(truth: TruthOracle) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j", "class"])
    a, b = all_pairs(truth.num_nodes)
    writer.writerows(zip(a.tolist(), b.tolist(), truth.classes.tolist()))
    return buf.getvalue()


def load_truth(path: str) -> TruthOracle:
    rows = list(csv.reader(io.StringIO(_read(path))))[1:]
    num_nodes = max(int(r[1]) for r in rows) + 1
    return TruthOracle(np.array([int(r[2]) for r in rows]), num_nodes)


def calibrated_csv(num_nodes: int, pairs: np.ndarray, probs: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j"] + [f"p{c}" for c in range(7)])
    a, b = all_pairs(num_nodes)
    for k, row in zip(pairs.tolist(), probs.tolist()):
        writer.writerow([int(a[k]), int(b[k])] + [repr(p) for p in row])
    return buf.getvalue()


# -- stages ---------------------------------------------------------------------------------


def stage_simulate(config: ExperimentConfig, rep: int) -> Dict[str, str]:
    """Generate the network, sample and mask data, and derive the true PAG classes."""
    seed = config.replication_seed(rep)
    dag, data = simulate(config.sim_config(seed), seeding.rng(seed, seeding.SIMULATION))
    truth = TruthOracle.from_dag(dag, data.provenance.tolist())
    d = rep_dir(config, rep)
    paths = {
        "dag": os.path.join(d, "dag.txt"),
        "dataset": os.path.join(d, "dataset.csv"),
        "truth": os.path.join(d, "truth.csv"),
    }
    _write(paths["dag"], format_dag(dag))
    _write(paths["dataset"], data.to_csv())
    _write(paths["truth"], truth_csv(truth))
    return paths


def _bootstrap_config(config: ExperimentConfig, rep: int, alpha: float) -> BootstrapConfig:
    seed = seeding.mix(config.replication_seed(rep), seeding.BOOTSTRAP, config.alphas.index(alpha))
    return BootstrapConfig(
        config.num_bootstrap, SearchConfig(alpha, config.max_conditioning_size), seed, config.jobs
    )


def stage_bootstrap(config: ExperimentConfig, rep: int, alpha: float) -> Dict[str, str]:
    """Bootstrap edge-class probabilities; PAGs are checkpointed for resumption."""
    data = Dataset.from_csv(_read(os.path.join(rep_dir(config, rep), "dataset.csv")))
    bconf = _bootstrap_config(config, rep, alpha)
    d = alpha_dir(config, rep, alpha)
    pag_dir = os.path.join(d, "pags")
    stamp = os.path.join(pag_dir, "checkpoint.json")
    ident = json.dumps({"dataset": dataset_hash(data), "seed": bconf.seed, "alpha": alpha,
                        "max_conditioning_size": config.max_conditioning_size})
    if os.path.exists(stamp) and _read(stamp) != ident:
        shutil.rmtree(pag_dir)
    _write(stamp, ident)
    table = estimate_distributions(data, bconf, checkpoint_dir=pag_dir)
    paths = {
        "distributions": os.path.join(d, "distributions.csv"),
        "distributions_meta": os.path.join(d, "distributions.json"),
    }
    _write(paths["distributions"], table.to_csv())
    _write(paths["distributions_meta"], metadata(table, data, bconf))
    return paths


def stage_split(config: ExperimentConfig, rep: int, alpha: float, n_cal: int) -> Dict[str, str]:
    _, probs = parse_distribution_csv(_read(os.path.join(alpha_dir(config, rep, alpha), "distributions.csv")))
    truth = load_truth(os.path.join(rep_dir(config, rep), "truth.csv"))
    rng = seeding.rng(config.replication_seed(rep), seeding.SPLIT, config.alphas.index(alpha), n_cal)
    train_idx, test_idx = stratified_sample(probs, truth.classes, n_cal, rng, config.stratify_on)
    path = os.path.join(size_dir(config, rep, alpha, n_cal), "split.json")
    _write(path, json.dumps({"train": train_idx.tolist(), "test": test_idx.tolist()}))
    return {"split": path}


def _load_split(config, rep, alpha, n_cal):
    split = json.loads(_read(os.path.join(size_dir(config, rep, alpha, n_cal), "split.json")))
    return np.array(split["train"], dtype=np.int64), np.array(split["test"], dtype=np.int64)


def stage_calibrate(config: ExperimentConfig, rep: int, alpha: float, n_cal: int) -> Dict[str, str]:
    """Train the calibrator on the split's training pairs and calibrate the test pairs."""
    num_nodes, probs = parse_distribution_csv(
        _read(os.path.join(alpha_dir(config, rep, alpha), "distributions.csv"))
    )
    truth = load_truth(os.path.join(rep_dir(config, rep), "truth.csv"))
    train_idx, test_idx = _load_split(config, rep, alpha, n_cal)
    seed = seeding.mix(config.replication_seed(rep), seeding.TRAINING, config.alphas.index(alpha), n_cal)
    meta = TrainingMeta(
        learning_rate=config.learning_rate, batch_size=config.batch_size,
        max_epochs=config.max_epochs, seed=seed,
    )
    model = train(probs[train_idx], truth.classes[train_idx], meta)
    d = size_dir(config, rep, alpha, n_cal)
    paths = {"model": os.path.join(d, "model.json"), "calibrated": os.path.join(d, "calibrated.csv")}
    _write(paths["model"], model.to_json())
    _write(paths["calibrated"], calibrated_csv(num_nodes, test_idx, model.predict(probs[test_idx])))
    return paths


def stage_evaluate(config: ExperimentConfig, rep: int, alpha: float, n_cal: int) -> Dict[str, str]:
    _, probs = parse_distribution_csv(_read(os.path.join(alpha_dir(config, rep, alpha), "distributions.csv")))
    truth = load_truth(os.path.join(rep_dir(config, rep), "truth.csv"))
    _, test_idx = _load_split(config, rep, alpha, n_cal)
    d = size_dir(config, rep, alpha, n_cal)
    rows = list(csv.reader(io.StringIO(_read(os.path.join(d, "calibrated.csv")))))[1:]
    after = np.array([[float(x) for x in r[2:]] for r in rows]).reshape(-1, 7)
    labels = truth.classes[test_idx]
    paths = {}
    for method, table in (("before", probs[test_idx]), ("after", after)):
        report = evaluate(table, labels, config.bin_capacity)
        paths[f"metrics_{method}"] = os.path.join(d, f"metrics_{method}.json")
        paths[f"reliability_{method}"] = os.path.join(d, f"reliability_{method}.csv")
        _write(paths[f"metrics_{method}"], report.to_json())
        _write(paths[f"reliability_{method}"], reliability_csv(report))
    return paths


def load_report(config: ExperimentConfig, rep: int, alpha: float, n_cal: int, method: str) -> MetricsReport:
    path = os.path.join(size_dir(config, rep, alpha, n_cal), f"metrics_{method}.json")
    return MetricsReport.from_dict(json.loads(_read(path)))


# -- aggregation -----------------------------------------------------------------------------


def compare_before_after(
    reports_before: Sequence[MetricsReport], reports_after: Sequence[MetricsReport], level: float = 0.05
) -> List[dict]:
    """Paired two-sided signed-rank test per (merged type, metric).

    Pairs where either value is absent are dropped. ``better`` names the
    method with the better mean (lower for MCE) and is only set when the test
    is significant at ``level``.
    """
    if len(reports_before) != len(reports_after):
        raise ValueError("reports must be paired by replication")
    out = []
    keys = [(t.label, m) for t in TYPES for m in METRICS] + [("overall", "mce")]
    for merged, metric in keys:
        pairs = [
            (b.value(merged, metric), a.value(merged, metric))
            for b, a in zip(reports_before, reports_after)
        ]
        pairs = [(b, a) for b, a in pairs if b is not None and a is not None]
        row = {"type": merged, "metric": metric, "n": len(pairs), "p_value": None,
               "significant": False, "better": None, "status": "ok"}
        if len(pairs) < 5:
            row["status"] = "insufficient-data"
            out.append(row)
            continue
        before = np.array([b for b, _ in pairs])
        after = np.array([a for _, a in pairs])
        diffs = after - before
        if np.count_nonzero(diffs) and 0 < np.count_nonzero(diffs) < 5:
            row["status"] = "insufficient-data"
            out.append(row)
            continue
        result = wilcoxon_signed_rank(after, before)
        row["p_value"] = result.p_value
        if result.degenerate:
            row["status"] = "degenerate"
        elif result.p_value < level:
            row["significant"] = True
            gain = -diffs.mean() if metric == "mce" else diffs.mean()
            row["better"] = "after" if gain > 0 else "before"
        out.append(row)
    return out


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def write_reports(config: ExperimentConfig) -> Dict[str, str]:
    """Collect per-replication metrics into metrics.csv, summary.csv and significance.csv."""
    flat = io.StringIO()
    fw = csv.writer(flat, lineterminator="\n")
    fw.writerow(["alpha", "N", "E", "replication", "method", "type", "precision", "recall", "f1", "mce"])
    summary = io.StringIO()
    sw = csv.writer(summary, lineterminator="\n")
    sw.writerow(["alpha", "N", "E", "method", "type", "precision", "recall", "f1", "mce",
                 "n_precision", "n_recall", "n_f1", "n_mce"])
    sig = io.StringIO()
    gw = csv.writer(sig, lineterminator="\n")
    gw.writerow(["alpha", "N", "E", "type", "metric", "n", "p_value", "significant", "better", "status"])
    for alpha in config.alphas:
        for n_cal in config.calibration_sizes:
            reps = [r for r in range(config.replications)
                    if os.path.exists(os.path.join(size_dir(config, r, alpha, n_cal), "metrics_after.json"))]
            reports = {m: [load_report(config, r, alpha, n_cal, m) for r in reps] for m in METHODS}
            for method in METHODS:
                for r, report in zip(reps, reports[method]):
                    for name, t in report.types.items():
                        fw.writerow([alpha, n_cal, config.num_edges, r, method, name,
                                     _cell(t.precision), _cell(t.recall), _cell(t.f1), _cell(t.mce)])
                    fw.writerow([alpha, n_cal, config.num_edges, r, method, "overall", "", "", "",
                                 _cell(report.overall_mce)])
                for name in [t.label for t in TYPES] + ["overall"]:
                    means, counts = [], []
                    for metric in METRICS:
                        vals = [rep.value(name, metric) for rep in reports[method]]
                        vals = [v for v in vals if v is not None]
                        means.append(_cell(np.mean(vals)) if vals else "")
                        counts.append(len(vals))
                    sw.writerow([alpha, n_cal, config.num_edges, method, name, *means, *counts])
            for row in compare_before_after(reports["before"], reports["after"]):
                gw.writerow([alpha, n_cal, config.num_edges, row["type"], row["metric"], row["n"],
                             _cell(row["p_value"]), row["significant"], row["better"] or "", row["status"]])
    paths = {
        "metrics": os.path.join(config.output_dir, "metrics.csv"),
        "summary": os.path.join(config.output_dir, "summary.csv"),
        "significance": os.path.join(config.output_dir, "significance.csv"),
    }
    _write(paths["metrics"], flat.getvalue())
    _write(paths["summary"], summary.getvalue())
    _write(paths["significance"], sig.getvalue())
    return paths


# -- driver -------------------------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    replication_seeds: Dict[int, int]
    artifacts: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def run_replication(config: ExperimentConfig, rep: int, manifest: RunManifest):
    def timed(stage: str, fn, *args):
        start = time.perf_counter()
        try:
            paths = fn(config, rep, *args)
        except Exception as exc:
            raise RuntimeError(f"stage {stage} failed: {exc}") from exc
        manifest.timings[stage] = time.perf_counter() - start
        manifest.artifacts.extend(sorted(paths.values()))

    timed(f"rep_{rep:02d}/simulate", stage_simulate)
    for alpha in config.alphas:
        timed(f"rep_{rep:02d}/alpha_{alpha!r}/bootstrap", stage_bootstrap, alpha)
        for n_cal in config.calibration_sizes:
            tag = f"rep_{rep:02d}/alpha_{alpha!r}/N_{n_cal}"
            timed(f"{tag}/split", stage_split, alpha, n_cal)
            timed(f"{tag}/calibrate", stage_calibrate, alpha, n_cal)
            timed(f"{tag}/evaluate", stage_evaluate, alpha, n_cal)


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Run every replication, then aggregate. A failing replication is recorded and skipped."""
    os.makedirs(config.output_dir, exist_ok=True)
    config_path = os.path.join(config.output_dir, "config.ini")
    _write(config_path, to_ini(config))
    manifest = RunManifest(
        config.identity_hash(),
        {r: config.replication_seed(r) for r in range(config.replications)},
        artifacts=[config_path],
    )
    for rep in range(config.replications):
        log.info("replication %d/%d", rep + 1, config.replications)
        try:
            run_replication(config, rep, manifest)
        except RuntimeError as exc:
            log.error("replication %d: %s", rep, exc)
            manifest.failures[f"rep_{rep:02d}"] = str(exc)
    manifest.artifacts.extend(sorted(write_reports(config).values()))
    manifest_path = os.path.join(config.output_dir, "manifest.json")
    manifest.artifacts.append(manifest_path)
    _write(manifest_path, manifest.to_json())
    return manifest
