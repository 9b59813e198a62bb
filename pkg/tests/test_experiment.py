import filecmp
import json
import os

import numpy as np
import pytest

from edgecal.calibrate import probability_bin
from edgecal.cli import main
from edgecal.experiment import (
    ExperimentConfig,
    compare_before_after,
    load_config,
    load_truth,
    run_experiment,
    to_ini,
)
from edgecal.metrics import MetricsReport, TypeMetrics

TINY = dict(
    num_nodes=30, num_edges=30, sample_size=300, alphas=(0.01,), num_bootstrap=4,
    calibration_sizes=(70,), max_epochs=30, replications=2, bin_capacity=50,
)


def tree(root):
    out = []
    for d, _, files in os.walk(root):
        out.extend(os.path.relpath(os.path.join(d, f), root) for f in files)
    return sorted(out)


def same_tree(a, b, skip=("manifest.json", "config.ini")):
    files = [f for f in tree(a) if os.path.basename(f) not in skip]
    assert files == [f for f in tree(b) if os.path.basename(f) not in skip]
    for f in files:
        assert filecmp.cmp(os.path.join(a, f), os.path.join(b, f), shallow=False), f


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = ExperimentConfig(**TINY, output_dir=str(out))
    return config, run_experiment(config)


def test_run_produces_manifest_artifacts(tiny_run):
    config, manifest = tiny_run
    assert manifest.failures == {}
    assert all(os.path.exists(p) for p in manifest.artifacts)
    on_disk = json.load(open(os.path.join(config.output_dir, "manifest.json")))
    assert on_disk["config_hash"] == config.identity_hash()
    assert set(on_disk["replication_seeds"]) == {"0", "1"}
    for name in ("metrics.csv", "summary.csv", "significance.csv", "config.ini"):
        assert os.path.join(config.output_dir, name) in manifest.artifacts


def test_split_is_disjoint_and_complete(tiny_run):
    config, _ = tiny_run
    d = os.path.join(config.output_dir, "rep_00")
    split = json.load(open(os.path.join(d, "alpha_0.01", "N_70", "split.json")))
    train, test = set(split["train"]), set(split["test"])
    assert not train & test
    truth = load_truth(os.path.join(d, "truth.csv"))
    assert len(train | test) == truth.classes.size


def test_summary_rows(tiny_run):
    config, _ = tiny_run
    lines = open(os.path.join(config.output_dir, "summary.csv")).read().splitlines()
    assert lines[0].startswith("alpha,N,E,method,type,precision,recall,f1,mce")
    assert len(lines) == 1 + 2 * 6  # (before, after) x (5 types + overall)
    rows = open(os.path.join(config.output_dir, "metrics.csv")).read().splitlines()
    assert len(rows) == 1 + 2 * 2 * 6


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    config, _ = tiny_run
    again = ExperimentConfig(**TINY, output_dir=str(tmp_path), jobs=2)
    run_experiment(again)
    same_tree(config.output_dir, str(tmp_path))


def test_cli_stages_match_run_all(tiny_run, tmp_path):
    config, _ = tiny_run
    ini = tmp_path / "tiny.ini"
    ini.write_text(to_ini(config))
    out = tmp_path / "staged"
    for stage in ("simulate", "bootstrap", "split", "calibrate", "evaluate", "report"):
        assert main([stage, "--config", str(ini), "--output", str(out)]) == 0
    same_tree(config.output_dir, str(out), skip=("manifest.json", "config.ini"))


def test_cli_print_config_and_overrides(tmp_path, capsys):
    assert main(["run-all", "--seed", "7", "--output", str(tmp_path), "--jobs", "3", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert "master_seed = 7" in text and "jobs = 3" in text
    ini = tmp_path / "c.ini"
    ini.write_text(text)
    assert load_config(str(ini)) == ExperimentConfig(master_seed=7, jobs=3, output_dir=str(tmp_path))


def test_cli_reports_failing_stage(tmp_path, capsys):
    ini = tmp_path / "tiny.ini"
    ini.write_text(to_ini(ExperimentConfig(**TINY, output_dir=str(tmp_path / "none"))))
    assert main(["bootstrap", "--config", str(ini), "--rep", "0"]) == 1
    assert "stage bootstrap failed" in capsys.readouterr().err
    assert main(["split", "--config", str(ini), "--alpha", "0.5"]) == 2
    assert "not in the config" in capsys.readouterr().err


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[simulation]\nnum_nodez = 3\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "num_nodez" in capsys.readouterr().err


def test_config_round_trip_and_validation():
    cfg = ExperimentConfig(alphas=(0.001,), calibration_sizes=(70, 140), max_conditioning_size=3)
    assert to_ini(cfg) == to_ini(load_config(None, **{f: getattr(cfg, f) for f in ("alphas", "calibration_sizes", "max_conditioning_size")}))
    with pytest.raises(ValueError):
        ExperimentConfig(calibration_sizes=(71,))
    with pytest.raises(ValueError):
        ExperimentConfig(replications=0)
    with pytest.raises(ValueError):
        ExperimentConfig(stratify_on="other")
    assert cfg.identity_hash() == ExperimentConfig(**{**cfg.__dict__, "jobs": 8}).identity_hash()


# -- significance table -----------------------------------------------------------------------


def report(mce, recall=0.5):
    types = {
        name: TypeMetrics(0.5, recall, 0.5, mce, 10)
        for name in ("directed", "partially_directed", "circle_circle", "bidirected", "no_edge")
    }
    return MetricsReport(types, mce, 100)


def test_identical_reports_are_never_significant():
    reps = [report(0.2 + 0.01 * k) for k in range(10)]
    rows = compare_before_after(reps, reps)
    assert not any(r["significant"] for r in rows)
    assert {r["status"] for r in rows} == {"degenerate"}


def test_uniform_improvement_is_flagged():
    before = [report(0.3 + 0.01 * k) for k in range(10)]
    after = [report(0.2 + 0.01 * k) for k in range(10)]
    row = next(r for r in compare_before_after(before, after) if r["type"] == "overall")
    assert row["p_value"] == pytest.approx(2 / 1024)
    assert row["significant"] and row["better"] == "after"


def test_absent_values_are_dropped_pairwise():
    before = [report(0.3, recall=None if k < 6 else 0.2) for k in range(10)]
    after = [report(0.2, recall=0.9) for k in range(10)]
    row = next(r for r in compare_before_after(before, after) if r["type"] == "directed" and r["metric"] == "recall")
    assert row["n"] == 4 and row["status"] == "insufficient-data" and row["p_value"] is None
