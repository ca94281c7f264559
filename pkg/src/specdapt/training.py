"""Training protocols: source-only, target-only and domain-adapted (fine-tuned).

Optimization is Adam with decoupled weight decay on soft-label cross-entropy,
with per-epoch shuffling, early stopping on validation loss and restoration of
the best-validation parameters.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from specdapt.autodiff import Tensor, cross_entropy, forward_backward
from specdapt.errors import NonFiniteError, SpecdaptError, ValidationError
from specdapt.metrics import evaluate
from specdapt.models import ArchSpec, ModelBundle, build, forward, frozen_layers, logits, parse_freeze
from specdapt.seeding import derive_seed, substream

log = logging.getLogger(__name__)

PROTOCOLS = ("source_only", "target_only", "domain_adapted")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 1e-4
    dropout: float | None = None
    max_epochs: int = 300
    patience: int = 20
    freeze: str = "none"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValidationError("batch_size and max_epochs must be >= 1, patience >= 0")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be nonnegative")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout override must lie in [0, 1)")
        parse_freeze(self.freeze)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class NoFiniteTrialError(SpecdaptError):
    exit_code = 4


def _labels(ds) -> np.ndarray:
    # stored labels are float32; renormalize rows so cross-entropy sees exact simplex rows
    y = np.asarray(ds.labels, dtype=np.float64)
    return y / y.sum(axis=1, keepdims=True)


def _check_compatible(model: ModelBundle, *datasets):
    for ds in datasets:
        if ds.counts.shape[1] != model.spec.n_bins or ds.labels.shape[1] != model.spec.n_classes:
            raise ValidationError(
                f"dataset ({ds.counts.shape[1]} bins, {ds.labels.shape[1]} classes) does not match model "
                f"({model.spec.n_bins} bins, {model.spec.n_classes} classes)"
            )
    classes = [tuple(ds.classes) for ds in datasets]
    if len(set(classes)) > 1:
        raise ValidationError("datasets do not share a class list")


def eval_loss(model: ModelBundle, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    z = logits(model, x, batch_size)
    return float(cross_entropy(Tensor(z), y).data)


def _fit(model: ModelBundle, train_set, val_set, cfg: TrainConfig):
    if len(train_set) == 0:
        raise ValidationError("empty training set")
    if val_set is None or len(val_set) == 0:
        raise ValidationError("a nonempty validation set is required for early stopping")
    _check_compatible(model, train_set, val_set)

    spec = model.spec if cfg.dropout is None else model.spec.replace(dropout=cfg.dropout)
    params = model.params
    x_train, y_train = model.prepare(train_set.counts), _labels(train_set)
    x_val, y_val = model.prepare(val_set.counts), _labels(val_set)
    trainable = [n for n in params if params.trainable(n)]
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")

    m1 = {n: np.zeros_like(params[n]) for n in trainable}
    m2 = {n: np.zeros_like(params[n]) for n in trainable}
    b1, b2 = ADAM_BETAS
    step = 0

    def loss_fn(p, xt, yb):
        return cross_entropy(forward(spec, p, xt, train=True, rng=dropout_rng), yb)

    best_loss, best_epoch, best_params = np.inf, 0, params.copy()
    history = []
    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            yb = y_train[idx]
            try:
                g = forward_backward(lambda p, xt: loss_fn(p, xt, yb), params, x_train[idx])
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"{exc} (epoch {epoch}, batch starting at {start}, lr={cfg.learning_rate:g}, "
                    f"arch={spec.kind})"
                ) from exc
            total += g.loss * len(idx)
            if not trainable:
                continue
            step += 1
            c1, c2 = 1.0 - b1**step, 1.0 - b2**step
            for name in trainable:
                grad = g.params[name]
                m1[name] = b1 * m1[name] + (1.0 - b1) * grad
                m2[name] = b2 * m2[name] + (1.0 - b2) * grad * grad
                update = (m1[name] / c1) / (np.sqrt(m2[name] / c2) + ADAM_EPS)
                value = params[name]
                params[name] = value - cfg.learning_rate * (update + cfg.weight_decay * value)
        val_loss = eval_loss(model, x_val, y_val)
        if not np.isfinite(val_loss):
            raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val_loss})
        if val_loss < best_loss:
            best_loss, best_epoch, best_params = val_loss, epoch, params.copy()
        if epoch - best_epoch >= cfg.patience:
            break
    model.params = best_params
    model.meta["best_epoch"] = best_epoch
    model.meta["best_val_loss"] = best_loss
    return model, history


def train(model: ModelBundle, train_set, val_set, cfg: TrainConfig):
    """Train from the model's current parameters; returns ``(best model, history)``.

    The input model is not modified.
    """
    if parse_freeze(cfg.freeze)[0] != "none":
        raise ValidationError("freeze directives apply to finetune only")
    model = model.copy()
    for name in model.params:
        model.params.set_trainable(name, True)
    return _fit(model, train_set, val_set, cfg)


def finetune(pretrained: ModelBundle, target_subset, val_set, cfg: TrainConfig):
    """Continue training a pretrained model with ``cfg.freeze`` layers held fixed.

    Returns ``(best model, history)``.
    """
    _check_compatible(pretrained, target_subset)
    model = pretrained.copy()
    model.apply_freeze(cfg.freeze)
    return _fit(model, target_subset, val_set, cfg)


# ---------------------------------------------------------------- paired trials


@dataclass
class TrialRecord:
    protocol: str
    arch: str
    size: int
    trial: int
    seed: int
    metrics: dict
    fingerprint: str
    n_test: int
    config_hash: str = ""
    master_seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(**d)


def subset_fingerprint(indices, pool_hash: str = "") -> str:
    h = hashlib.sha256(pool_hash.encode("utf-8"))
    h.update(np.asarray(indices, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def draw_subset(pool_size: int, size: int, seed: int, trial: int):
    if size > pool_size:
        raise ValidationError(f"subset size {size} exceeds the target train split ({pool_size})")
    if size < 1:
        raise ValidationError("subset size must be >= 1")
    rng = substream(seed, "subset", trial, size)
    return np.sort(rng.choice(pool_size, size=size, replace=False))


def _pick(cfg, size):
    if isinstance(cfg, dict):
        return cfg[size] if size in cfg else cfg[str(size)]
    return cfg


def thread_count(default: int = 1) -> int:
    value = os.environ.get("SPECDAPT_THREADS")
    if not value:
        return default
    try:
        return max(1, int(value))
    except ValueError:
        raise ValidationError(f"SPECDAPT_THREADS must be an integer, got {value!r}") from None


def run_paired_trials(
    scenario,
    arch: ArchSpec,
    sizes,
    n_trials: int = 10,
    source_cfg: TrainConfig | None = None,
    target_cfg=None,
    finetune_cfg=None,
    master_seed: int | None = None,
    workers: int | None = None,
    on_record=None,
    jacobian: bool = True,
):
    """Source-only, target-only and domain-adapted runs paired by (trial, size).

    Within a trial every protocol shares the trial seed, and the target-only and
    domain-adapted runs at each size train on the same target subset. The
    domain-adapted run starts from that trial's source-only checkpoint.
    """
    sizes = sorted(int(s) for s in sizes)
    pool = scenario.target["train"]
    for s in sizes:
        if s > len(pool):
            raise ValidationError(f"subset size {s} exceeds the target train split ({len(pool)})")
    master_seed = scenario.config.master_seed if master_seed is None else master_seed
    source_cfg = source_cfg or TrainConfig()
    target_cfg = target_cfg or TrainConfig()
    finetune_cfg = finetune_cfg or TrainConfig()
    test = scenario.target["test"]
    val = scenario.target["val"]
    pool_hash = scenario.config.hash
    workers = thread_count() if workers is None else workers

    def one_trial(t):
        seed = derive_seed(master_seed, "trial", t)
        records = []

        def record(protocol, size, model, fp):
            metrics = evaluate(model, test, jacobian=jacobian)
            rec = TrialRecord(
                protocol, arch.kind, size, t, seed, metrics, fp, len(test), pool_hash, int(master_seed),
                {"best_epoch": model.meta.get("best_epoch")},
            )
            records.append(rec)
            return rec

        base = build(arch, substream(seed, "init", "source"))
        source_model, _ = train(base, scenario.source["train"], scenario.source["val"], source_cfg.replace(seed=seed))
        log.info("trial %d: source model trained (best epoch %s)", t, source_model.meta.get("best_epoch"))
        source_rec = None
        for size in sizes:
            idx = draw_subset(len(pool), size, seed, t)
            fp = subset_fingerprint(idx, pool_hash)
            subset = pool.subset(idx)
            # the source-only model never sees target data: evaluate once, repeat per size
            if source_rec is None:
                source_rec = record("source_only", size, source_model, "")
            else:
                records.append(dataclasses.replace(source_rec, size=size))
            fresh = build(arch, substream(seed, "init", "target", size))
            tgt_model, _ = train(fresh, subset, val, _pick(target_cfg, size).replace(seed=seed))
            record("target_only", size, tgt_model, fp)
            da_model, _ = finetune(source_model, subset, val, _pick(finetune_cfg, size).replace(seed=seed))
            record("domain_adapted", size, da_model, fp)
        return records

    trials = range(n_trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            per_trial = list(pool_exec.map(one_trial, trials))
    else:
        per_trial = [one_trial(t) for t in trials]
    out = [r for recs in per_trial for r in recs]
    if on_record is not None:
        for r in out:
            on_record(r)
    return out


# ---------------------------------------------------------------- random search


@dataclass
class SearchSpace:
    """Training hyperparameter ranges; lr and weight decay are sampled log-uniformly."""

    learning_rate: tuple = (1e-6, 1e-3)
    batch_size: tuple = (32, 64, 128, 256, 512)
    weight_decay: tuple = (1e-7, 1e-1)
    dropout: tuple = (0.0, 0.4)
    freeze: tuple = ("none",)

    def sample(self, rng, base: TrainConfig) -> TrainConfig:
        lo, hi = self.learning_rate
        lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        lo, hi = self.weight_decay
        wd = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        bs = int(self.batch_size[rng.integers(len(self.batch_size))])
        drop = float(rng.uniform(*self.dropout))
        freeze = str(self.freeze[rng.integers(len(self.freeze))])
        return base.replace(learning_rate=lr, weight_decay=wd, batch_size=bs, dropout=drop, freeze=freeze)


def search_space(phase: str = "target", layer_names=None) -> SearchSpace:
    """Ranges for ``phase`` in {source, target, finetune}.

    Fine-tuning also searches freeze directives over the model's layer list.
    """
    if phase == "source":
        return SearchSpace(learning_rate=(1e-5, 2e-3))
    if phase == "target":
        return SearchSpace()
    if phase == "finetune":
        n = len(layer_names or [])
        freeze = ["none"] + [f"{side}:{k}" for side in ("first", "last") for k in range(1, n)]
        return SearchSpace(freeze=tuple(freeze))
    raise ValidationError(f"unknown search phase {phase!r}")


def random_search(space: SearchSpace, budget: int, objective, seed: int = 0, base: TrainConfig | None = None):
    """Minimize ``objective(cfg) -> validation loss`` over ``budget`` random draws.

    Non-finite objectives (or :class:`NonFiniteError`) count as failed trials.
    Ties go to the earlier trial. Returns ``(best_cfg, trials)`` where ``trials``
    lists ``(cfg, loss)`` in sampling order.
    """
    if budget < 1:
        raise ValidationError("search budget must be >= 1")
    base = base or TrainConfig()
    rng = substream(seed, "search")
    trials = []
    for _ in range(budget):
        cfg = space.sample(rng, base)
        try:
            loss = float(objective(cfg))
        except NonFiniteError:
            loss = float("nan")
        trials.append((cfg, loss))
    finite = [(i, loss) for i, (_, loss) in enumerate(trials) if np.isfinite(loss)]
    if not finite:
        raise NoFiniteTrialError("no finite trial: every sampled configuration diverged")
    best_i = min(finite, key=lambda item: (item[1], item[0]))[0]
    return trials[best_i][0], trials


def validation_objective(model_factory, train_set, val_set, pretrained: ModelBundle | None = None):
    """Objective that trains (or fine-tunes ``pretrained``) and reports the best validation loss."""

    def objective(cfg: TrainConfig) -> float:
        if pretrained is not None:
            model, _ = finetune(pretrained, train_set, val_set, cfg)
        else:
            model, _ = train(model_factory(cfg.seed), train_set, val_set, cfg)
        return model.meta["best_val_loss"]

    return objective


__all__ = [
    "PROTOCOLS",
    "NoFiniteTrialError",
    "SearchSpace",
    "TrainConfig",
    "TrialRecord",
    "draw_subset",
    "eval_loss",
    "finetune",
    "frozen_layers",
    "random_search",
    "run_paired_trials",
    "search_space",
    "subset_fingerprint",
    "thread_count",
    "train",
    "validation_objective",
]
