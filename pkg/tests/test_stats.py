import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import wilcoxon_enumeration
from specdapt.errors import DegenerateStatisticsError, ValidationError
from specdapt.stats import aggregate, format_p, rank_architectures, signed_rank_distribution, wilcoxon_signed_rank


def test_all_positive_ten():
    one = wilcoxon_signed_rank(np.arange(1.0, 11), np.zeros(10))
    assert one.p_value == pytest.approx(0.0009765625, abs=1e-15) and format_p(one.p_value) == "0.001"
    two = wilcoxon_signed_rank(np.arange(1.0, 11), np.zeros(10), "two_sided")
    assert two.p_value == pytest.approx(0.001953125, abs=1e-15) and format_p(two.p_value) == "0.002"
    assert one.statistic == 55.0 and one.exact


def test_three_point_example_by_enumeration():
    # sign patterns of ranks (1,2,3) with positive-rank sum >= 3: {3}, {1,2}, {1,3}, {2,3}, {1,2,3}
    res = wilcoxon_signed_rank([1.0, 2.0, -3.0], [0.0, 0.0, 0.0])
    assert res.statistic == 3.0
    assert res.p_value == pytest.approx(5 / 8)
    assert res.p_value == pytest.approx(wilcoxon_enumeration([1.0, 2.0, -3.0]))


def test_zero_differences_are_degenerate():
    res = wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])
    assert res.degenerate and res.p_value == 1.0 and res.n_effective == 0


def test_zeros_dropped_and_ties_averaged():
    res = wilcoxon_signed_rank([1.0, 2.0, 2.0, 0.0, -1.0], [0.0] * 5)
    assert res.n_effective == 4
    # |d| = 1, 2, 2, 1 -> ranks 1.5, 3.5, 3.5, 1.5; W = 1.5 + 3.5 + 3.5
    assert res.statistic == 8.5


def test_distribution_counts_sum():
    dist = signed_rank_distribution([2, 4, 6])
    assert dist.sum() == 8 and dist[0] == 1 and dist[12] == 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-30, 30).filter(bool), min_size=1, max_size=10), st.sampled_from(["one_sided_greater", "two_sided"]))
def test_exact_matches_enumeration_with_ties(d, side):
    d = np.array(d, dtype=float)
    # oracle with ties: enumerate signs over average ranks directly
    from scipy.stats import rankdata

    ranks = rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    signs = np.array(np.meshgrid(*[[0, 1]] * len(d))).reshape(len(d), -1).T
    ws = signs @ ranks
    upper = np.mean(ws >= w - 1e-9)
    oracle = upper if side == "one_sided_greater" else min(1.0, 2 * min(upper, np.mean(ws <= w + 1e-9)))
    assert wilcoxon_signed_rank(d, np.zeros(len(d)), side).p_value == pytest.approx(oracle, abs=1e-12)


def test_normal_approximation_large_n():
    from scipy.stats import wilcoxon

    rng = np.random.default_rng(0)
    d = rng.normal(0.3, 1.0, 40)
    res = wilcoxon_signed_rank(d, np.zeros(40))
    ref = wilcoxon(d, alternative="greater", method="approx", correction=True)
    assert not res.exact and res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_validation():
    with pytest.raises(ValidationError):
        wilcoxon_signed_rank([1.0], [1.0, 2.0])
    with pytest.raises(ValidationError):
        wilcoxon_signed_rank([1.0], [0.0], "left")


def test_aggregate():
    s = aggregate([0.0, 1.0])
    assert s.mean == 0.5 and s.std == pytest.approx(np.sqrt(0.5)) and s.uncertainty == s.std
    s = aggregate([0.8, 0.8, 0.8], n_test=100, binomial=True)
    assert s.std == pytest.approx(0.0, abs=1e-12) and s.uncertainty == pytest.approx(np.sqrt(0.8 * 0.2 / 100))
    big = aggregate([0.7, 0.9], n_test=10**12, binomial=True)
    assert big.uncertainty == pytest.approx(big.std, rel=1e-9)
    with pytest.raises(DegenerateStatisticsError):
        aggregate([1.0])


def test_letters():
    same = list(np.linspace(0.5, 0.9, 10))
    assert rank_architectures({a: same for a in "ABCD"}) == {a: "A" for a in "ABCD"}
    assert rank_architectures({"MLP": same}) == {"MLP": "A"}
    base = np.linspace(0.5, 0.9, 10)
    scores = {
        "w": base + 0.30, "x": base + 0.30 + np.r_[1, -1] .repeat(5) * 1e-3,
        "y": base, "z": base + np.r_[1, -1].repeat(5) * 1e-3,
    }
    letters = rank_architectures(scores, alpha=0.01)
    assert letters == {"w": "A", "x": "A", "y": "B", "z": "B"}
    lower = rank_architectures({k: -v for k, v in scores.items()}, higher_is_better=False)
    assert lower == letters
