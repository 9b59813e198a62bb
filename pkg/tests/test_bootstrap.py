import json
import os

import numpy as np
import pytest

from edgecal import seeding
from edgecal.bootstrap import (
    BootstrapConfig,
    BootstrapError,
    DistributionTable,
    estimate_distributions,
    format_distribution_csv,
    metadata,
    parse_distribution_csv,
    resample,
)
from edgecal.graph import Pag, format_pag, marks_of_class, pair_index
from edgecal.search import SearchConfig
from edgecal.simulate import Dataset

from conftest import make_dag


def pag_with(num_nodes, classes):
    """PAG whose pair (a, b) has class ``classes[(a, b)]``; all other pairs are absent."""
    marks = np.zeros((num_nodes, num_nodes), dtype=np.int8)
    for (a, b), c in classes.items():
        at_a, at_b = marks_of_class(c)
        marks[b, a], marks[a, b] = at_a, at_b
    return Pag(marks)


def row_ids(n_rows, n_cols=3):
    """Dataset whose first column is the row number, so a resample reveals which rows it drew."""
    rng = np.random.default_rng(0)
    values = rng.normal(size=(n_rows, n_cols))
    values[:, 0] = np.arange(n_rows)
    return Dataset(values, list(range(n_cols)))


class ScriptedSearch:
    """Picklable stand-in for the search: looks the resample up in a fixed script."""

    def __init__(self, script):
        self.script = script

    def __call__(self, sample, config):
        return self.script[sample.values[:, 0].astype(np.int64).tobytes()]


class FailingSearch:
    def __init__(self, bad_key):
        self.bad_key = bad_key

    def __call__(self, sample, config):
        if sample.values[:, 0].astype(np.int64).tobytes() == self.bad_key:
            raise RuntimeError("boom")
        return pag_with(sample.num_columns, {})


def script_for(data, config, pags):
    """Map replicate k's resample to ``pags[k]`` using the documented per-replicate stream."""
    script = {}
    for k, pag in enumerate(pags):
        key = resample(data, seeding.rng(config.seed, k)).values[:, 0].astype(np.int64).tobytes()
        assert key not in script
        script[key] = pag
    return script


# -- resample ---------------------------------------------------------------------------


def test_resample_single_row():
    ds = Dataset(np.array([[1.0, 2.0]]), [0, 1])
    assert np.array_equal(resample(ds, np.random.default_rng(0)).values, ds.values)


def test_resample_distinct_fraction():
    ds = row_ids(1000)
    out = resample(ds, np.random.default_rng(1))
    assert out.values.shape == ds.values.shape
    frac = np.unique(out.values[:, 0]).size / 1000
    assert 0.60 <= frac <= 0.67  # 1 - (1 - 1/n)^n ~ 0.632


def test_resample_is_seeded():
    ds = row_ids(50)
    a = resample(ds, seeding.rng(5, 1)).values
    b = resample(ds, seeding.rng(5, 1)).values
    assert np.array_equal(a, b)


# -- counting ---------------------------------------------------------------------------


def test_counts_120_of_200():
    data = row_ids(40)
    config = BootstrapConfig(num_replicates=200, seed=9)
    pags = [pag_with(3, {(0, 1): 1 if k < 120 else 3}) for k in range(200)]
    table = estimate_distributions(data, config, ScriptedSearch(script_for(data, config, pags)))
    np.testing.assert_array_equal(table.distribution(0, 1), [0, 0.6, 0, 0.4, 0, 0, 0])
    np.testing.assert_array_equal(table.distribution(1, 0), [0, 0.6, 0, 0.4, 0, 0, 0])
    # pairs never seen with an edge keep all mass on class 0
    np.testing.assert_array_equal(table.distribution(0, 2), [1, 0, 0, 0, 0, 0, 0])
    assert table.counts[pair_index(0, 1, 3)].tolist() == [0, 120, 0, 80, 0, 0, 0]


def test_single_replicate_is_one_hot():
    data = row_ids(30, 4)
    config = BootstrapConfig(num_replicates=1, seed=2)
    pag = pag_with(4, {(0, 1): 2, (1, 3): 6, (2, 3): 5})
    table = estimate_distributions(data, config, ScriptedSearch(script_for(data, config, [pag])))
    assert np.array_equal(table.probs.argmax(axis=1), pag.edge_classes())
    assert np.all(table.probs.max(axis=1) == 1.0)


@pytest.mark.parametrize("jobs", [4, 8])
def test_identical_across_worker_counts(jobs):
    data = row_ids(60, 5)
    rng = np.random.default_rng(3)
    config = BootstrapConfig(num_replicates=24, seed=4)
    pags = []
    for _ in range(24):
        pags.append(pag_with(5, {(a, b): int(rng.integers(0, 7)) for a in range(5) for b in range(a + 1, 5)}))
    search_fn = ScriptedSearch(script_for(data, config, pags))
    serial = estimate_distributions(data, config, search_fn)
    parallel = estimate_distributions(data, BootstrapConfig(24, seed=4, jobs=jobs), search_fn)
    assert serial.to_csv() == parallel.to_csv()


def test_replicate_order_does_not_matter(tmp_path):
    data = row_ids(20)
    rng = np.random.default_rng(5)
    pags = [pag_with(3, {(0, 1): int(rng.integers(0, 7)), (1, 2): int(rng.integers(0, 7))}) for _ in range(10)]
    tables = []
    for name, order in (("a", range(10)), ("b", rng.permutation(10))):
        d = tmp_path / name
        d.mkdir()
        for slot, k in enumerate(order):
            (d / f"pag_{slot:04d}.txt").write_text(format_pag(pags[k]))
        tables.append(estimate_distributions(data, BootstrapConfig(10), checkpoint_dir=str(d)))
    assert np.array_equal(tables[0].counts, tables[1].counts)


def test_failure_names_replicate():
    data = row_ids(25)
    config = BootstrapConfig(num_replicates=5, seed=1)
    bad = resample(data, seeding.rng(1, 3)).values[:, 0].astype(np.int64).tobytes()
    with pytest.raises(BootstrapError, match="replicate 3"):
        estimate_distributions(data, config, FailingSearch(bad))


def test_checkpoints_resume(tmp_path):
    dag = make_dag(4, [(0, 1), (1, 2), (3, 2)], coef=0.9)
    from edgecal.simulate import sample_dataset

    data = Dataset(sample_dataset(dag, 200, np.random.default_rng(6)), [0, 1, 2, 3])
    config = BootstrapConfig(num_replicates=6, search=SearchConfig(alpha=0.01), seed=3)
    first = estimate_distributions(data, config, checkpoint_dir=str(tmp_path))
    assert sorted(os.listdir(tmp_path)) == [f"pag_{k:04d}.txt" for k in range(6)]
    os.remove(tmp_path / "pag_0002.txt")
    again = estimate_distributions(data, config, checkpoint_dir=str(tmp_path))
    assert first.to_csv() == again.to_csv()
    assert first.to_csv() == estimate_distributions(data, config).to_csv()


def test_fisher_z_bootstrap_distributions_are_count_fractions():
    dag = make_dag(5, [(0, 1), (1, 2), (3, 2), (2, 4)], coef=0.8)
    from edgecal.simulate import sample_dataset

    data = Dataset(sample_dataset(dag, 300, np.random.default_rng(7)), list(range(5)))
    table = estimate_distributions(data, BootstrapConfig(num_replicates=8, seed=1))
    np.testing.assert_allclose(table.probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(table.probs * 8, np.round(table.probs * 8))


# -- persistence ---------------------------------------------------------------------------


def test_csv_round_trip_and_metadata():
    counts = np.zeros((3, 7), dtype=np.int64)
    counts[:, 0] = 3
    counts[1] = [0, 1, 0, 2, 0, 0, 0]
    table = DistributionTable(3, counts, 3)
    text = table.to_csv()
    assert text.splitlines()[0] == "i,j,p0,p1,p2,p3,p4,p5,p6"
    assert text.splitlines()[2] == "0,2,0.0,0.3333333333333333,0.0,0.6666666666666666,0.0,0.0,0.0"
    n, probs = parse_distribution_csv(text)
    assert n == 3 and np.array_equal(probs, table.probs)
    assert format_distribution_csv(n, probs) == text
    meta = json.loads(metadata(table, row_ids(4), BootstrapConfig(3, seed=7)))
    assert meta["num_replicates"] == 3 and meta["seed"] == 7 and len(meta["dataset_sha256"]) == 64


def test_table_validation():
    with pytest.raises(ValueError):
        DistributionTable(3, np.zeros((3, 7)), 1)
    with pytest.raises(ValueError):
        BootstrapConfig(num_replicates=0)
