import numpy as np
import pytest

from specdapt.errors import ValidationError
from specdapt.explain import brute_force_shapley, explain_report, kernel_shap, save_report
from specdapt.models import build, small_spec
from specdapt.spectra import EnergyGrid

GRID = EnergyGrid(n_bins=64)


def _linear_model(weights):
    def f(z):
        s = z @ weights
        p = 1 / (1 + np.exp(-s))
        return np.stack([p, 1 - p], axis=1)

    return f


def test_matches_brute_force_on_a_game():
    rng = np.random.default_rng(0)
    x, base = rng.random(24), rng.random(24)
    f = _linear_model(rng.standard_normal(24))
    ex = kernel_shap(f, x, base, n_groups=6, class_index=0)

    def v(s):
        mask = np.repeat([g in s for g in range(6)], 4)
        return f(np.where(mask, x, base)[None])[0, 0]

    assert np.allclose(ex.phi, brute_force_shapley(v, 6), atol=1e-10)
    assert ex.exact and abs(ex.residual) < 1e-12


def test_dummy_and_symmetry():
    x, base = np.ones(16), np.zeros(16)
    ex = kernel_shap(lambda z: np.tile([0.25, 0.75], (len(z), 1)), x, base, n_groups=4)
    assert np.allclose(ex.phi, 0.0, atol=1e-12)
    # groups 0 and 1 contribute identically, 2 and 3 not at all
    w = np.r_[np.ones(8), np.zeros(8)]
    ex = kernel_shap(_linear_model(w), x, base, n_groups=4)
    assert ex.phi[0] == pytest.approx(ex.phi[1], abs=1e-10)
    assert np.allclose(ex.phi[2:], 0.0, atol=1e-10)


def test_single_group_is_total_effect():
    model = build(small_spec("MLP"), 1)
    rng = np.random.default_rng(1)
    x, base = rng.poisson(40, 64).astype(float), rng.poisson(10, 64).astype(float)
    ex = kernel_shap(model, x, base, n_groups=1, class_index=2)
    assert ex.phi[0] == ex.output - ex.base_value


def test_sampled_mode_efficiency_and_accuracy():
    rng = np.random.default_rng(2)
    x, base = rng.random(64), rng.random(64)
    f = _linear_model(rng.standard_normal(64) * 0.1)
    ex = kernel_shap(f, x, base, n_groups=16, n_coalitions=3000, rng=np.random.default_rng(0))
    assert not ex.exact and abs(ex.residual) < 1e-12
    # a near-linear game: sampled values stay close to the exact ones from full enumeration
    ref = kernel_shap(f, x, base, n_groups=8)
    coarse = ex.phi.reshape(8, 2).sum(axis=1)
    assert np.allclose(coarse, ref.phi, atol=2e-3)


def test_errors():
    with pytest.raises(ValidationError):
        kernel_shap(_linear_model(np.ones(10)), np.ones(10), np.ones(10), n_groups=3)
    with pytest.raises(ValidationError):
        kernel_shap(_linear_model(np.ones(64)), np.ones(64), np.ones(64), n_groups=16)  # no rng
    with pytest.raises(ValidationError):
        kernel_shap(build(small_spec("MLP"), 0), np.ones(64), np.ones(64), n_groups=4, class_index=9)


def test_report_identical_models(tmp_path):
    model = build(small_spec("TBNN_OURS"), 3)
    rng = np.random.default_rng(3)
    x, base = rng.poisson(40, 64).astype(float), rng.poisson(10, 64).astype(float)
    rep = explain_report(model, model.copy(), x, base, GRID, n_groups=8, top=2)
    assert rep["model_a"]["phi"] == rep["model_b"]["phi"]
    assert len(rep["model_a"]["top_salient_keV"]) == 2
    save_report(rep, tmp_path / "e.json")
    assert (tmp_path / "e.svg").read_text().startswith("<svg")
