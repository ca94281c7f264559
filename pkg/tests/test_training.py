import numpy as np
import pytest

from specdapt.errors import NonFiniteError, ValidationError
from specdapt.models import ArchSpec, build, predict_proba, small_spec
from specdapt.spectra import EnergyGrid, LabeledDataset, Scenario, ScenarioConfig
from specdapt.training import (
    NoFiniteTrialError,
    SearchSpace,
    TrainConfig,
    draw_subset,
    finetune,
    random_search,
    run_paired_trials,
    search_space,
    train,
)

GRID = EnergyGrid(n_bins=16)


def _toy(n=64, seed=0, shift=0.0):
    """Two classes separated by which half of the spectrum is bright."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    counts = rng.poisson(5, (n, 16)).astype(float)
    counts[y == 0, :8] += 30 + shift
    counts[y == 1, 8:] += 30 + shift
    return LabeledDataset(counts, np.eye(2)[y], np.ones(n), ["a", "b"], GRID)


def _mlp():
    return build(ArchSpec("MLP", n_bins=16, n_classes=2, hidden_units=(8,)), 0)


def test_separable_toy_reaches_full_accuracy():
    data = _toy()
    # a hand-fit linear rule separates the classes perfectly
    z = data.counts[:, :8].sum(1) - data.counts[:, 8:].sum(1)
    assert np.all((z > 0) == (data.hard_labels == 0))
    model, history = train(_mlp(), data, data, TrainConfig(learning_rate=1e-2, max_epochs=200, patience=200))
    acc = np.mean(predict_proba(model, model.prepare(data.counts)).argmax(1) == data.hard_labels)
    assert acc == 1.0 and len(history) <= 200


def test_patience_zero_returns_first_epoch():
    data = _toy()
    model, history = train(_mlp(), data, data, TrainConfig(patience=0, max_epochs=50))
    assert len(history) == 1 and model.meta["best_epoch"] == 1


def test_best_checkpoint_is_restored():
    data, val = _toy(seed=1), _toy(seed=2)
    model, history = train(_mlp(), data, val, TrainConfig(learning_rate=5e-2, max_epochs=30, patience=5))
    best = min(history, key=lambda h: (h["val_loss"], h["epoch"]))
    assert model.meta["best_epoch"] == best["epoch"]
    from specdapt.training import eval_loss

    loss = eval_loss(model, model.prepare(val.counts), val.labels)
    assert loss == pytest.approx(best["val_loss"], rel=1e-12)


def test_training_is_deterministic():
    data = _toy()
    cfg = TrainConfig(max_epochs=5, seed=3, dropout=0.2)
    a, _ = train(_mlp(), data, data, cfg)
    b, _ = train(_mlp(), data, data, cfg)
    assert a.params.equal(b.params)


def test_train_does_not_mutate_input():
    data, model = _toy(), _mlp()
    before = model.params.copy()
    train(model, data, data, TrainConfig(max_epochs=3))
    assert model.params.equal(before)


def test_freeze_semantics():
    data = _toy()
    src = _mlp()
    frozen, _ = finetune(src, data, data, TrainConfig(freeze="all", max_epochs=3))
    assert all(np.array_equal(frozen.params[n], src.params[n]) for n in src.params)
    last, _ = finetune(src, data, data, TrainConfig(freeze="last:1", max_epochs=3))
    assert np.array_equal(last.params["out.w"], src.params["out.w"])
    assert not np.array_equal(last.params["dense0.w"], src.params["dense0.w"])
    still, _ = finetune(src, data, data, TrainConfig(learning_rate=0.0, max_epochs=3))
    assert still.params.equal(src.params)
    with pytest.raises(ValidationError):
        train(src, data, data, TrainConfig(freeze="all"))


def test_incompatible_data_rejected():
    data = _toy()
    with pytest.raises(ValidationError):
        train(build(small_spec("MLP"), 0), data, data, TrainConfig(max_epochs=1))


def test_divergence_is_reported():
    data = _toy()
    with pytest.raises(NonFiniteError):
        train(_mlp(), data, data, TrainConfig(learning_rate=1e200, max_epochs=3, weight_decay=1e200))


def test_subsets():
    a = draw_subset(512, 64, 7, 3)
    assert len(set(a)) == 64 and np.array_equal(a, draw_subset(512, 64, 7, 3))
    assert not np.array_equal(a, draw_subset(512, 64, 7, 4))
    with pytest.raises(ValidationError):
        draw_subset(10, 11, 0, 0)


def test_paired_trial_cardinality_and_pairing():
    cfg = ScenarioConfig(isotopes=["Cs137", "Co60"], grid=dict(n_bins=16, e_min=0.0, e_max=3000.0))
    splits = {s: _toy(24, seed=i) for i, s in enumerate(("train", "val", "test"))}
    scenario = Scenario(cfg, dict(splits), dict(splits))
    arch = ArchSpec("MLP", n_bins=16, n_classes=2, hidden_units=(4,))
    quick = TrainConfig(max_epochs=2, patience=1)
    recs = run_paired_trials(scenario, arch, [4, 8], 3, quick, quick, quick, jacobian=False)
    for protocol in ("source_only", "target_only", "domain_adapted"):
        for size in (4, 8):
            cell = [r for r in recs if r.protocol == protocol and r.size == size]
            assert sorted(r.trial for r in cell) == [0, 1, 2]
    for t in range(3):
        for size in (4, 8):
            fps = {r.fingerprint for r in recs if r.trial == t and r.size == size and r.protocol != "source_only"}
            seeds = {r.seed for r in recs if r.trial == t}
            assert len(fps) == 1 and len(seeds) == 1
    again = run_paired_trials(scenario, arch, [4, 8], 3, quick, quick, quick, jacobian=False, workers=2)
    assert [r.to_json() for r in recs] == [r.to_json() for r in again]
    with pytest.raises(ValidationError):
        run_paired_trials(scenario, arch, [64], 2, quick, quick, quick)


def test_random_search():
    space = SearchSpace()
    best, trials = random_search(space, 1, lambda c: 1.0, seed=0)
    assert len(trials) == 1 and best == trials[0][0]
    losses = iter([3.0, 1.0, 1.0, float("nan")])
    best, trials = random_search(space, 4, lambda c: next(losses), seed=1)
    assert best == trials[1][0]
    with pytest.raises(NoFiniteTrialError, match="no finite trial"):
        random_search(space, 3, lambda c: float("inf"))

    def boom(c):
        raise NonFiniteError("diverged")

    with pytest.raises(NoFiniteTrialError):
        random_search(space, 2, boom)


def test_search_spaces():
    rng = np.random.default_rng(0)
    cfg = search_space("finetune", ["a", "b", "c"]).sample(rng, TrainConfig())
    assert cfg.freeze in {"none", "first:1", "first:2", "last:1", "last:2"}
    for _ in range(50):
        c = search_space("target").sample(rng, TrainConfig())
        assert 1e-6 <= c.learning_rate <= 1e-3 and c.batch_size in (32, 64, 128, 256, 512)
    with pytest.raises(ValidationError):
        search_space("pretrain")
