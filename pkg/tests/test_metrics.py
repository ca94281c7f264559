import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ape_bruteforce
from specdapt.errors import ValidationError
from specdapt.metrics import (
    accuracy,
    ape_score,
    calibration_suite,
    entropy_mean,
    evaluate,
    input_gradients,
    jacobian_norm_mean,
    knn_edges,
    knn_smoothness,
    margins,
    sample_margins,
)
from specdapt.models import ArchSpec, build, small_spec
from specdapt.spectra import EnergyGrid, LabeledDataset


def test_ape_examples():
    y = np.array([[0.2, 0.8], [1.0, 0.0]])
    assert ape_score(y, y) == 1.0
    assert ape_score(np.eye(3)[[1, 2, 0]], np.eye(3)) == 0.0
    assert ape_score([[0.7, 0.3]], [[1.0, 0.0]]) == pytest.approx(0.7, abs=1e-15)
    with pytest.raises(ValidationError):
        ape_score([[0.5, 0.6]], [[1.0, 0.0]])


@given(st.integers(1, 16), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_ape_matches_oracle(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(m), n), rng.dirichlet(np.ones(m), n)
    assert abs(ape_score(a, b) - ape_bruteforce(a, b)) <= 1e-12


def test_accuracy_examples():
    labels = np.eye(3)[[0, 1, 2, 1]]
    assert accuracy(labels, labels) == 1.0
    assert accuracy(np.full((4, 3), 1 / 3), labels) == 0.25  # ties go to class 0
    probs = np.eye(3)[[0, 1, 0, 0]]
    assert accuracy(probs, labels) == 0.5


def test_calibration_examples():
    labels = np.eye(2)[[0, 1, 1]]
    assert calibration_suite(labels, labels) == (0.0, 0.0, 0.0)
    nll, brier, _ = calibration_suite(np.full((1, 2), 0.5), np.eye(2)[[0]])
    assert nll == pytest.approx(np.log(2)) and brier == pytest.approx(0.5)
    _, _, ece = calibration_suite(np.eye(2)[[1, 0]], np.eye(2)[[0, 1]])
    assert ece == 1.0


def test_ece_by_hand():
    probs = np.array([[0.9, 0.1], [0.9, 0.1], [0.6, 0.4], [0.3, 0.7]])
    labels = np.eye(2)[[0, 1, 0, 1]]
    # bins (15 equal): 0.9 -> bin 13 (acc 0.5), 0.6 -> bin 8 (acc 1), 0.7 -> bin 10 (acc 1)
    expected = 0.5 * abs(0.5 - 0.9) + 0.25 * abs(1 - 0.6) + 0.25 * abs(1 - 0.7)
    assert calibration_suite(probs, labels)[2] == pytest.approx(expected, abs=1e-12)


def test_margins():
    assert sample_margins([[3.0, 1.0]], [[1, 0]])[0] == 2.0
    assert sample_margins([[3.0, 1.0]], [[0, 1]])[0] == -2.0
    mean, p10 = margins(np.array([[3.0, 1.0]] * 9 + [[1.0, 3.0]]), np.eye(2)[[0] * 10])
    assert mean == pytest.approx(1.6) and p10 == pytest.approx(-2 + 0.9 * 4)
    with pytest.raises(ValidationError):
        margins([[1.0, 0.0]], [[1, 0]], space="bogus")


def test_entropy():
    assert entropy_mean(np.eye(4)) == 0.0
    assert entropy_mean(np.full((2, 4), 0.25)) == pytest.approx(np.log(4))
    assert entropy_mean([[0.5, 0.5, 0.0, 0.0]]) == pytest.approx(np.log(2))


def test_jacobian_zero_model():
    model = build(small_spec("MLP"), 0)
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    x = np.random.default_rng(0).standard_normal((5, 64))
    assert jacobian_norm_mean(model, x, np.eye(4)[[0, 1, 2, 3, 0]]) == 0.0


def test_jacobian_logistic_closed_form():
    rng = np.random.default_rng(1)
    spec = ArchSpec("MLP", n_bins=3, n_classes=2, hidden_units=())
    model = build(spec, rng)
    w, b = model.params["out.w"], model.params["out.b"]
    x = rng.standard_normal((6, 3))
    y = np.eye(2)[[0, 1, 1, 0, 1, 0]]
    z = x @ w + b
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    grads = (p - y) @ w.T  # d CE / d x for a linear softmax model
    assert np.allclose(input_gradients(model, x, y), grads, atol=1e-12)
    expected = np.mean(np.sum(grads**2, axis=1))
    assert abs(jacobian_norm_mean(model, x, y) - expected) < 1e-8


def test_knn_three_point_line():
    spectra = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 3.0]])
    probs = np.eye(2)[[0, 1, 0]]
    # brute force: l1-normalize, take each point's nearest neighbour, dedupe undirected edges
    x = spectra / spectra.sum(axis=1, keepdims=True)
    edges = set()
    for i in range(3):
        d = [(np.linalg.norm(x[i] - x[j]), j) for j in range(3) if j != i]
        j = min(d)[1]
        edges.add((min(i, j), max(i, j)))
    assert sorted(edges) == [tuple(e) for e in knn_edges(spectra, k=1)]
    tv_expected = np.mean([probs[u].argmax() != probs[v].argmax() for u, v in edges])
    tv, l2, dconf, _ = knn_smoothness(probs, spectra, probs, k=1)
    assert tv == tv_expected == 1.0
    assert l2 == pytest.approx(2.0) and dconf == 0.0


def test_knn_constant_predictions_and_clusters():
    rng = np.random.default_rng(2)
    a = rng.random((6, 4)) * 0.01 + np.array([1, 0, 0, 0])
    b = rng.random((6, 4)) * 0.01 + np.array([0, 0, 0, 1])
    spectra = np.vstack([a, b])
    same = np.tile([0.3, 0.7], (12, 1))
    assert knn_smoothness(same, spectra, np.eye(2)[[0] * 12], k=3)[:3] == (0.0, 0.0, 0.0)
    opposite = np.eye(2)[[0] * 6 + [1] * 6]
    assert knn_smoothness(opposite, spectra, opposite, k=3)[0] == 0.0


def test_knn_edges_brute_force():
    rng = np.random.default_rng(3)
    x = rng.random((15, 5))
    k = 3
    xn = x / x.sum(axis=1, keepdims=True)
    expected = set()
    for i in range(15):
        d = sorted((np.linalg.norm(xn[i] - xn[j]), j) for j in range(15) if j != i)
        for _, j in d[:k]:
            expected.add((min(i, j), max(i, j)))
    assert sorted(expected) == [tuple(e) for e in knn_edges(x, k)]


def test_evaluate_switches_on_label_type():
    grid = EnergyGrid(n_bins=64)
    rng = np.random.default_rng(4)
    model = build(small_spec("MLP"), rng)
    counts = rng.poisson(20, (12, 64)).astype(float)
    one_hot = LabeledDataset(counts, np.eye(4)[rng.integers(0, 4, 12)], np.ones(12), list("abcd"), grid)
    out = evaluate(model, one_hot)
    assert out["score"] == out["acc"] and np.isfinite(out["jacobian_norm_mean"])
    mixed = LabeledDataset(counts, rng.dirichlet(np.ones(4), 12), np.ones(12), list("abcd"), grid)
    out = evaluate(model, mixed)
    assert out["score"] == out["ape"] and "acc" not in out


def test_brute_force_enumeration_of_small_ape():
    # every one-hot prediction against a fixed truth: APE equals the fraction correct
    truth = np.eye(3)[[0, 1, 2]]
    for pred in itertools.product(range(3), repeat=3):
        p = np.eye(3)[list(pred)]
        assert ape_score(p, truth) == pytest.approx(accuracy(p, truth))
