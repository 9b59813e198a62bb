import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from edgecal.metrics import (
    MergedType,
    MetricsReport,
    evaluate,
    mce,
    merged_probabilities,
    overall_mce,
    predict_class,
    prf1,
    reliability_bins,
    reliability_csv,
    wilcoxon_signed_rank,
)


# -- predictions and P/R/F1 -------------------------------------------------------------------


def test_predict_class_examples():
    assert predict_class(np.eye(7)[0]) == 0
    assert predict_class(np.array([0, 0.6, 0, 0.4, 0, 0, 0])) == 1
    assert predict_class(np.array([0.5, 0.5, 0, 0, 0, 0, 0])) == 0


def test_merged_type_map():
    covered = sorted(c for t in MergedType for c in t.classes)
    assert covered == list(range(7))


def test_prf1_fixtures():
    truths = np.array([0, 1, 2, 3, 5, 6])
    for t in MergedType:
        assert prf1(truths, truths, t) == (1.0, 1.0, 1.0)
    # merging makes 1 and 2 indistinct
    assert prf1([1, 1, 2], [1, 2, 2], MergedType.DIRECTED) == (1.0, 1.0, 1.0)
    # no predicted and no true positives: undefined, not zero
    assert prf1([0, 0], [0, 0], MergedType.BIDIRECTED) == (None, None, None)
    # TP=1, FP=1, FN=2
    p, r, f = prf1([3, 3, 0, 0], [3, 0, 4, 4], MergedType.PARTIALLY_DIRECTED)
    assert (p, r) == (0.5, pytest.approx(1 / 3))
    assert f == pytest.approx(0.4)
    # positives exist but none are found: precision undefined, recall 0
    assert prf1([0, 0], [6, 0], MergedType.BIDIRECTED) == (None, 0.0, None)
    # predictions all wrong: P = R = 0, F1 = 0
    assert prf1([6, 0], [0, 6], MergedType.BIDIRECTED) == (0.0, 0.0, 0.0)


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=40))
def test_prf1_directed_invariant_to_swapping_directions(pairs):
    pred, truth = map(np.array, zip(*pairs))
    swap = np.array([0, 2, 1, 4, 3, 5, 6])
    for t in (MergedType.DIRECTED, MergedType.PARTIALLY_DIRECTED):
        assert prf1(pred, truth, t) == prf1(swap[pred], swap[truth], t)


# -- MCE ---------------------------------------------------------------------------------------------


def test_mce_fixtures():
    assert mce([0.8, 0.9], [1, 1], 2) == pytest.approx(0.15)
    assert mce([0.5] * 4, [1, 0, 0, 1], 4) == 0.0
    # two bins of 2: {0.1, 0.2} vs labels {0, 1}, {0.7, 0.9} vs {1, 1}
    assert mce([0.9, 0.1, 0.7, 0.2], [1, 0, 1, 1], 2) == pytest.approx(max(abs(0.15 - 0.5), abs(0.8 - 1.0)))
    # remainder goes to the last bin: 5 items, capacity 2 -> bins of 2 and 3
    assert mce([0.0, 0.0, 1.0, 1.0, 1.0], [0, 0, 1, 1, 0], 2) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        mce([], [], 10)
    with pytest.raises(ValueError):
        mce([0.5], [1], 0)


@given(
    st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=60),
    st.integers(1, 20),
    st.randoms(use_true_random=False),
)
def test_mce_bounds_and_permutation_invariance(items, cap, rnd):
    p, z = map(np.array, zip(*items))
    value = mce(p, z, cap)
    assert 0.0 <= value <= 1.0
    if np.unique(p).size == p.size:
        order = list(range(p.size))
        rnd.shuffle(order)
        assert mce(p[order], z[order], cap) == pytest.approx(value, abs=1e-12)


def test_overall_mce_fixtures():
    assert overall_mce([np.eye(7)[2]], [2], 7) == 0.0
    assert overall_mce([np.eye(7)[2]], [3], 1) == 1.0
    assert overall_mce(np.full((2, 7), 1 / 7), [0, 5], 100) == pytest.approx(0.0, abs=1e-15)


def test_overall_mce_constant_predictor_full_bin():
    truths = np.array([0, 0, 0, 1, 6, 0, 3])
    freq = np.bincount(truths, minlength=7) / truths.size
    table = np.tile(freq, (truths.size, 1))
    assert overall_mce(table, truths, bin_capacity=table.size) == pytest.approx(0.0, abs=1e-15)


def test_merged_probabilities_sum_members():
    p = np.array([[0.1, 0.2, 0.3, 0.05, 0.05, 0.2, 0.1]])
    assert merged_probabilities(p, MergedType.DIRECTED)[0] == pytest.approx(0.5)
    assert merged_probabilities(p, MergedType.PARTIALLY_DIRECTED)[0] == pytest.approx(0.1)
    total = sum(merged_probabilities(p, t)[0] for t in MergedType)
    assert total == pytest.approx(1.0)


# -- reliability bins --------------------------------------------------------------------------


def test_reliability_fixtures():
    bins = reliability_bins([0.1] * 4, [0] * 4)
    assert (bins[0].mean_prediction, bins[0].frequency, bins[0].count) == (pytest.approx(0.1), 0.0, 4)
    assert all(b.count == 0 and b.mean_prediction is None and b.frequency is None for b in bins[1:])
    bins = reliability_bins([1.0, 0.8, 0.2, 0.19999], [1, 0, 1, 0])
    assert [b.count for b in bins] == [1, 1, 0, 0, 2]
    assert bins[4].frequency == 0.5 and bins[4].mean_prediction == pytest.approx(0.9)
    assert [(b.lo, b.hi) for b in bins][:2] == [(0.0, 0.2), (0.2, 0.4)]


def test_reliability_of_calibrated_predictions():
    rng = np.random.default_rng(0)
    p = rng.random(10_000)
    z = (rng.random(10_000) < p).astype(float)
    for b in reliability_bins(p, z):
        assert abs(b.mean_prediction - b.frequency) < 0.05


# -- Wilcoxon ------------------------------------------------------------------------------------


def brute_force_p(d):
    """Two-sided p by enumerating all 2^n sign patterns of the midranks."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    observed = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    total = ranks.sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=d.size):
        w = float(np.dot(signs, ranks))
        if min(w, total - w) <= observed + 1e-9:
            hits += 1
    return hits / 2**d.size


def test_wilcoxon_fixtures():
    x = np.arange(1.0, 7.0)
    res = wilcoxon_signed_rank(x, x + 10)
    assert res.statistic == 0 and res.p_value == 0.03125 and not res.degenerate
    assert wilcoxon_signed_rank(x + 10, x).p_value == 0.03125

    same = wilcoxon_signed_rank(x, x)
    assert same.degenerate and same.p_value == 1.0

    before = np.linspace(0.3, 0.5, 10)
    res = wilcoxon_signed_rank(before - 0.1, before)
    assert res.p_value == pytest.approx(2 / 1024, abs=1e-15)
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2, 3], [2, 3, 4])


def test_wilcoxon_matches_scipy_exact():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(5, 21))
        x, y = rng.normal(size=n), rng.normal(0.3, 1, size=n)
        ours = wilcoxon_signed_rank(x, y)
        ref = stats.wilcoxon(x, y, method="exact")
        assert ours.statistic == ref.statistic
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-12)


def test_wilcoxon_with_ties_matches_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(5, 13))
        d = rng.integers(-3, 4, size=n).astype(float)
        if np.count_nonzero(d) < 5:
            continue
        assert wilcoxon_signed_rank(d, np.zeros(n)).p_value == pytest.approx(brute_force_p(d), rel=1e-12)


def test_wilcoxon_normal_approximation_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(26, 80))
        d = np.round(rng.normal(0.2, 1, size=n), 1)  # rounding creates ties
        ours = wilcoxon_signed_rank(d, np.zeros(n))
        ref = stats.wilcoxon(d, method="approx", correction=False)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


@given(st.lists(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), min_size=5, max_size=15))
@settings(max_examples=50)
def test_wilcoxon_symmetric(d):
    d = np.array(d)
    assert wilcoxon_signed_rank(d, np.zeros_like(d)).p_value == pytest.approx(
        wilcoxon_signed_rank(np.zeros_like(d), d).p_value
    )
    assert 0.0 < wilcoxon_signed_rank(d, np.zeros_like(d)).p_value <= 1.0


# -- reports ---------------------------------------------------------------------------------


def test_evaluate_report_round_trip():
    rng = np.random.default_rng(4)
    truths = rng.integers(0, 7, size=300)
    table = rng.dirichlet(np.ones(7), size=300)
    report = evaluate(table, truths, bin_capacity=50)
    assert report.num_instances == 300
    assert set(report.types) == {t.label for t in MergedType}
    for t in report.types.values():
        assert 0 <= t.mce <= 1
        if t.precision is not None and t.recall is not None and t.precision + t.recall > 0:
            assert t.f1 == pytest.approx(2 * t.precision * t.recall / (t.precision + t.recall))
    back = MetricsReport.from_dict(report.to_dict())
    assert back.to_json() == report.to_json()
    assert back.value("overall", "mce") == report.overall_mce
    assert back.value("overall", "recall") is None
    lines = reliability_csv(report).splitlines()
    assert lines[0] == "type,bin_lo,bin_hi,mean_pred,frequency,count"
    assert len(lines) == 1 + 5 * 5
