import numpy as np
import pytest

from specdapt.autodiff import Tensor
from specdapt.errors import ValidationError
from specdapt.models import (
    ARCH_KINDS,
    ArchSpec,
    build,
    default_spec,
    forward,
    frozen_layers,
    load_model,
    predict_proba,
    small_spec,
)


def test_mlp_parameter_count():
    spec = ArchSpec("MLP", n_bins=1024, n_classes=8, hidden_units=(4096, 2048))
    model = build(spec, 0)
    expected = 1024 * 4096 + 4096 + 4096 * 2048 + 2048 + 2048 * 8 + 8
    assert model.params.n_values() == expected
    assert model.layer_names == ["dense0", "dense1", "out"]


def test_token_shapes():
    assert default_spec("TBNN_OURS").token_shape() == (17, 256)
    assert default_spec("TBNN_LI").token_shape() == (32, 32)
    with pytest.raises(ValidationError):
        default_spec("MLP").token_shape()


@pytest.mark.parametrize("kind", ARCH_KINDS)
def test_probabilities_and_determinism(kind):
    spec = small_spec(kind)
    model = build(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((5, spec.n_bins))
    p = predict_proba(model, x)
    assert p.shape == (5, spec.n_classes)
    assert np.all(np.isfinite(p)) and np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert predict_proba(model, x).tobytes() == p.tobytes()
    # rows do not interact in eval mode
    perm = np.array([3, 0, 4, 1, 2])
    assert np.allclose(predict_proba(model, x[perm]), p[perm], atol=1e-12)
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    if kind == "TBNN_OURS" or kind == "TBNN_LI":
        for name in model.params:
            if name.endswith("gamma"):
                model.params[name] = np.ones_like(model.params[name])
    assert np.allclose(predict_proba(model, x), 1.0 / spec.n_classes)


@pytest.mark.parametrize("kind", ARCH_KINDS)
def test_dropout_only_in_training(kind):
    spec = small_spec(kind).replace(dropout=0.5)
    model = build(spec, 0)
    p = {n: Tensor(v) for n, v in model.params.items()}
    x = Tensor(np.random.default_rng(2).standard_normal((3, spec.n_bins)))
    a = forward(spec, p, x, train=True, rng=np.random.default_rng(0)).data
    b = forward(spec, p, x, train=True, rng=np.random.default_rng(1)).data
    assert not np.allclose(a, b)
    assert np.array_equal(forward(spec, p, x).data, forward(spec, p, x).data)


def test_build_is_seeded():
    a, b = build(small_spec("CNN"), 5), build(small_spec("CNN"), 5)
    assert a.params.equal(b.params)
    assert not a.params.equal(build(small_spec("CNN"), 6).params)


def test_freeze_indexing():
    names = ["a", "b", "c", "d"]
    assert frozen_layers(names, "none") == set()
    assert frozen_layers(names, "all") == set(names)
    assert frozen_layers(names, "first:1") == {"a"}
    assert frozen_layers(names, "last:2") == {"c", "d"}
    for bad in ("last:4", "first:9", "middle:1", "last:x"):
        with pytest.raises(ValidationError):
            frozen_layers(names, bad)


def test_spec_validation():
    with pytest.raises(ValidationError):
        ArchSpec("RNN")
    with pytest.raises(ValidationError):
        ArchSpec("TBNN_OURS", n_bins=1000, patch_size=64)
    with pytest.raises(ValidationError):
        ArchSpec("TBNN_LI", seq_len=32, n_heads=5)
    assert ArchSpec.from_dict(default_spec("CNN").to_dict()) == default_spec("CNN")


def test_model_save_load(tmp_path):
    model = build(small_spec("TBNN_LI"), 3)
    model.meta["note"] = "x"
    path = model.save(tmp_path / "m.spdw")
    back = load_model(path)
    assert back.spec == model.spec and back.layers == model.layers and back.meta["note"] == "x"
    assert back.params.equal(model.params)
