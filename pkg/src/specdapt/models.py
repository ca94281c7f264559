"""The four classifiers: MLP, 1-D CNN, the Li et al. transformer and the patch transformer.

Architecture defaults are the best-run hyperparameters of the source-domain
search. Every trainable layer gets a stable name; the ordered list of those
names is what freeze directives index into.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from specdapt.autodiff import (
    ParamStore,
    Tensor,
    broadcast_to,
    concat,
    conv1d,
    dense,
    dropout,
    embedding_add,
    gelu,
    layer_norm,
    load_params,
    multi_head_attention,
    relu,
    reshape,
    save_params,
    sinusoidal_encoding,
)
from specdapt.autodiff.layers import _softmax
from specdapt.errors import CorruptFileError, ValidationError
from specdapt.spectra.synthesis import zscore

ARCH_KINDS = ("MLP", "CNN", "TBNN_LI", "TBNN_OURS")
EMBED_METHODS = ("linear", "mlp", "cnn")
POSITIONAL = ("sinusoidal", "learnable")


@dataclass
class ArchSpec:
    kind: str
    n_bins: int = 1024
    n_classes: int = 8
    dropout: float = 0.0
    # dense stack (MLP, and the head of the CNN)
    hidden_units: tuple = (4096, 2048)
    # CNN
    conv_filters: tuple = (32,)
    conv_kernel: int = 7
    conv_padding: str = "same"
    # transformer blocks (both TBNNs)
    n_blocks: int = 4
    n_heads: int = 8
    ff_dim: int = 512
    # TBNN_LI: the input is cut into seq_len tokens of width n_bins // seq_len
    seq_len: int = 32
    # TBNN_OURS
    patch_size: int = 64
    embed_dim: int = 256
    embed_method: str = "cnn"
    embed_filters: int = 8
    embed_kernel: int = 3
    positional: str = "learnable"
    head_hidden: int | None = None

    def __post_init__(self):
        self.hidden_units = tuple(int(h) for h in self.hidden_units)
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        self.validate()

    def validate(self):
        if self.kind not in ARCH_KINDS:
            raise ValidationError(f"kind must be one of {ARCH_KINDS}, got {self.kind!r}")
        if self.n_bins < 2 or self.n_classes < 2:
            raise ValidationError("need n_bins >= 2 and n_classes >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.kind == "TBNN_LI":
            if self.n_bins % self.seq_len:
                raise ValidationError(f"n_bins {self.n_bins} does not reshape into {self.seq_len} tokens")
            if self.token_width % self.n_heads:
                raise ValidationError(f"token width {self.token_width} not divisible by {self.n_heads} heads")
        if self.kind == "TBNN_OURS":
            if self.n_bins % self.patch_size:
                raise ValidationError(f"n_bins {self.n_bins} not divisible by patch size {self.patch_size}")
            if self.embed_dim % self.n_heads:
                raise ValidationError(f"embedding dim {self.embed_dim} not divisible by {self.n_heads} heads")
            if self.embed_method not in EMBED_METHODS:
                raise ValidationError(f"embed_method must be one of {EMBED_METHODS}")
            if self.positional not in POSITIONAL:
                raise ValidationError(f"positional must be one of {POSITIONAL}")
            if self.positional == "sinusoidal" and self.embed_dim % 2:
                raise ValidationError("sinusoidal positions need an even embedding dim")
        if self.kind == "CNN" and self.conv_padding not in ("same", "valid"):
            raise ValidationError("conv_padding must be 'same' or 'valid'")

    @property
    def token_width(self) -> int:
        return self.n_bins // self.seq_len

    @property
    def n_patches(self) -> int:
        return self.n_bins // self.patch_size

    def token_shape(self) -> tuple:
        """(tokens, width) entering the attention stack."""
        if self.kind == "TBNN_LI":
            return (self.seq_len, self.token_width)
        if self.kind == "TBNN_OURS":
            return (self.n_patches + 1, self.embed_dim)
        raise ValidationError(f"{self.kind} has no token sequence")

    def replace(self, **changes) -> "ArchSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_units"] = list(self.hidden_units)
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d)


def default_spec(kind: str, n_bins: int = 1024, n_classes: int = 8) -> ArchSpec:
    """Best-run architecture from the source-domain hyperparameter search."""
    common = dict(kind=kind, n_bins=n_bins, n_classes=n_classes)
    if kind == "MLP":
        return ArchSpec(**common, dropout=0.346, hidden_units=(4096, 2048))
    if kind == "CNN":
        return ArchSpec(
            **common, dropout=0.101, conv_filters=(32,), conv_kernel=7, hidden_units=(2048, 1024)
        )
    if kind == "TBNN_LI":
        return ArchSpec(**common, dropout=4.53e-4, n_blocks=5, n_heads=4, ff_dim=1024, seq_len=32)
    if kind == "TBNN_OURS":
        return ArchSpec(
            **common, dropout=0.0198, embed_method="cnn", embed_filters=8, embed_dim=256,
            n_blocks=4, n_heads=8, ff_dim=512, patch_size=64, positional="learnable",
        )
    raise ValidationError(f"kind must be one of {ARCH_KINDS}, got {kind!r}")


def small_spec(kind: str, n_bins: int = 64, n_classes: int = 4) -> ArchSpec:
    """Reduced variant for gradient checks and fast tests."""
    common = dict(kind=kind, n_bins=n_bins, n_classes=n_classes, dropout=0.0)
    if kind == "MLP":
        return ArchSpec(**common, hidden_units=(16, 8))
    if kind == "CNN":
        return ArchSpec(**common, conv_filters=(3, 2), conv_kernel=3, hidden_units=(8,))
    if kind == "TBNN_LI":
        return ArchSpec(**common, n_blocks=2, n_heads=2, ff_dim=12, seq_len=8)
    if kind == "TBNN_OURS":
        return ArchSpec(
            **common, patch_size=8, embed_dim=16, embed_filters=2, embed_kernel=3,
            n_blocks=2, n_heads=2, ff_dim=12, head_hidden=8,
        )
    raise ValidationError(f"kind must be one of {ARCH_KINDS}, got {kind!r}")


@dataclass
class ModelBundle:
    spec: ArchSpec
    params: ParamStore
    layers: list  # [(layer_name, [param names])] in construction order
    normalization: str = "zscore"
    meta: dict = field(default_factory=dict)

    @property
    def layer_names(self) -> list:
        return [name for name, _ in self.layers]

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            self.spec, self.params.copy(), [(n, list(p)) for n, p in self.layers], self.normalization, dict(self.meta)
        )

    def prepare(self, counts) -> np.ndarray:
        """Apply the bundle's input normalization to raw counts."""
        return zscore(counts) if self.normalization == "zscore" else np.asarray(counts, dtype=np.float64)

    def apply_freeze(self, directive: str) -> None:
        """Set trainable flags from ``none``, ``all``, ``first:k`` or ``last:k``."""
        frozen = frozen_layers(self.layer_names, directive)
        for name, pnames in self.layers:
            for p in pnames:
                self.params.set_trainable(p, name not in frozen)

    def save(self, path) -> Path:
        path = Path(path)
        save_params(self.params, path)
        meta = {
            "format": "SPDW1",
            "arch": self.spec.to_dict(),
            "layers": [[n, list(p)] for n, p in self.layers],
            "normalization": self.normalization,
            **self.meta,
        }
        path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path


def parse_freeze(directive: str) -> tuple:
    directive = (directive or "none").strip().lower()
    if directive in ("none", "all"):
        return directive, 0
    side, _, k = directive.partition(":")
    if side not in ("first", "last") or not k.isdigit():
        raise ValidationError(f"freeze directive must be none, all, first:k or last:k; got {directive!r}")
    return side, int(k)


def frozen_layers(layer_names, directive: str) -> set:
    side, k = parse_freeze(directive)
    n = len(layer_names)
    if side == "none":
        return set()
    if side == "all":
        return set(layer_names)
    if k >= n:
        raise ValidationError(f"cannot freeze {side} {k} of {n} layers; use 'all' to freeze everything")
    return set(layer_names[:k] if side == "first" else layer_names[n - k :])


def load_model(path) -> ModelBundle:
    path = Path(path)
    params = load_params(path)
    side = path.with_name(path.name + ".json")
    try:
        meta = json.loads(side.read_text())
        spec = ArchSpec.from_dict(meta.pop("arch"))
        layers = [(n, list(p)) for n, p in meta.pop("layers")]
        normalization = meta.pop("normalization")
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptFileError(f"{side}: unreadable model sidecar: {exc}") from exc
    meta.pop("format", None)
    if sorted(p for _, ps in layers for p in ps) != sorted(params.names()):
        raise CorruptFileError(f"{path}: checkpoint parameters do not match the layer list")
    return ModelBundle(spec, params, layers, normalization, meta)


class _Builder:
    def __init__(self, rng):
        self.rng = rng
        self.params = ParamStore()
        self.layers = []

    def _register(self, layer, entries):
        names = []
        for suffix, value in entries:
            name = f"{layer}.{suffix}"
            self.params.add(name, value)
            names.append(name)
        self.layers.append((layer, names))

    def _glorot(self, shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-limit, limit, size=shape)

    def dense(self, layer, n_in, n_out):
        self._register(layer, [("w", self._glorot((n_in, n_out), n_in, n_out)), ("b", np.zeros(n_out))])

    def conv(self, layer, k, c_in, c_out):
        w = self._glorot((k, c_in, c_out), k * c_in, k * c_out)
        self._register(layer, [("w", w), ("b", np.zeros(c_out))])

    def norm(self, layer, d):
        self._register(layer, [("gamma", np.ones(d)), ("beta", np.zeros(d))])

    def table(self, layer, shape):
        self._register(layer, [("value", self.rng.normal(0.0, 0.02, size=shape))])

    def attention_block(self, prefix, d, ff):
        for proj in ("q", "k", "v", "o"):
            self.dense(f"{prefix}.attn.{proj}", d, d)
        self.norm(f"{prefix}.ln1", d)
        self.dense(f"{prefix}.ff1", d, ff)
        self.dense(f"{prefix}.ff2", ff, d)
        self.norm(f"{prefix}.ln2", d)


def build(spec: ArchSpec, rng) -> ModelBundle:
    """Initialize a model: Glorot-uniform weights, zero biases, N(0, 0.02) tables."""
    spec.validate()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    b = _Builder(rng)
    m = spec.n_classes
    if spec.kind in ("MLP", "CNN"):
        width = spec.n_bins
        if spec.kind == "CNN":
            c_in, length = 1, spec.n_bins
            for i, f in enumerate(spec.conv_filters):
                b.conv(f"conv{i}", spec.conv_kernel, c_in, f)
                c_in = f
                if spec.conv_padding == "valid":
                    length -= spec.conv_kernel - 1
            width = length * c_in
        for i, h in enumerate(spec.hidden_units):
            b.dense(f"dense{i}", width, h)
            width = h
        b.dense("out", width, m)
    elif spec.kind == "TBNN_LI":
        d = spec.token_width
        for i in range(spec.n_blocks):
            b.attention_block(f"block{i}", d, spec.ff_dim)
        b.dense("out", spec.seq_len * d, m)
    else:
        d, ps = spec.embed_dim, spec.patch_size
        if spec.embed_method == "cnn":
            b.conv("embed.conv", spec.embed_kernel, 1, spec.embed_filters)
            b.dense("embed.proj", ps * spec.embed_filters, d)
        elif spec.embed_method == "mlp":
            b.dense("embed.fc1", ps, d)
            b.dense("embed.fc2", d, d)
        else:
            b.dense("embed.proj", ps, d)
        b.table("cls", (1, 1, d))
        if spec.positional == "learnable":
            b.table("pos", (spec.n_patches + 1, d))
        for i in range(spec.n_blocks):
            b.attention_block(f"block{i}", d, spec.ff_dim)
        b.norm("head.ln", d)
        hidden = spec.head_hidden or d
        b.dense("head.fc", d, hidden)
        b.dense("out", hidden, m)
    return ModelBundle(spec, b.params, b.layers)


# ------------------------------------------------------------------ forward passes


def _ff(h, p, prefix):
    return dense(gelu(dense(h, p[f"{prefix}.ff1.w"], p[f"{prefix}.ff1.b"])), p[f"{prefix}.ff2.w"], p[f"{prefix}.ff2.b"])


def _ln(h, p, name):
    return layer_norm(h, p[f"{name}.gamma"], p[f"{name}.beta"])


def _forward_dense_stack(spec, p, h, train, rng):
    for i in range(len(spec.hidden_units)):
        h = dropout(relu(dense(h, p[f"dense{i}.w"], p[f"dense{i}.b"])), spec.dropout, train, rng)
    return dense(h, p["out.w"], p["out.b"])


def _forward_cnn(spec, p, x, train, rng):
    batch = x.shape[0]
    h = reshape(x, (batch, spec.n_bins, 1))
    for i in range(len(spec.conv_filters)):
        h = conv1d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], spec.conv_padding)
        h = dropout(relu(h), spec.dropout, train, rng)
    h = reshape(h, (batch, h.shape[1] * h.shape[2]))
    return _forward_dense_stack(spec, p, h, train, rng)


def _forward_li(spec, p, x, train, rng):
    batch = x.shape[0]
    t, d = spec.seq_len, spec.token_width
    h = embedding_add(reshape(x, (batch, t, d)), sinusoidal_encoding(t, d))
    h = dropout(h, spec.dropout, train, rng)
    for i in range(spec.n_blocks):
        pre = f"block{i}"
        a = multi_head_attention(h, p, f"{pre}.attn", spec.n_heads)
        h = _ln(h + dropout(a, spec.dropout, train, rng), p, f"{pre}.ln1")
        f = _ff(h, p, pre)
        h = _ln(h + dropout(f, spec.dropout, train, rng), p, f"{pre}.ln2")
    h = reshape(h, (batch, t * d))
    return dense(h, p["out.w"], p["out.b"])


def _embed_patches(spec, p, x):
    batch, n_p, ps, d = x.shape[0], spec.n_patches, spec.patch_size, spec.embed_dim
    if spec.embed_method == "cnn":
        h = reshape(x, (batch * n_p, ps, 1))
        h = gelu(conv1d(h, p["embed.conv.w"], p["embed.conv.b"], "same"))
        h = reshape(h, (batch * n_p, ps * spec.embed_filters))
        h = dense(h, p["embed.proj.w"], p["embed.proj.b"])
    elif spec.embed_method == "mlp":
        h = reshape(x, (batch * n_p, ps))
        h = gelu(dense(h, p["embed.fc1.w"], p["embed.fc1.b"]))
        h = dense(h, p["embed.fc2.w"], p["embed.fc2.b"])
    else:
        h = dense(reshape(x, (batch * n_p, ps)), p["embed.proj.w"], p["embed.proj.b"])
    return reshape(h, (batch, n_p, d))


def _forward_ours(spec, p, x, train, rng):
    batch, d = x.shape[0], spec.embed_dim
    tokens = _embed_patches(spec, p, x)
    cls = broadcast_to(p["cls.value"], (batch, 1, d))
    h = concat([cls, tokens], axis=1)
    if spec.positional == "learnable":
        h = embedding_add(h, p["pos.value"])
    else:
        h = embedding_add(h, sinusoidal_encoding(spec.n_patches + 1, d))
    h = dropout(h, spec.dropout, train, rng)
    for i in range(spec.n_blocks):
        pre = f"block{i}"
        a = multi_head_attention(_ln(h, p, f"{pre}.ln1"), p, f"{pre}.attn", spec.n_heads)
        h = h + dropout(a, spec.dropout, train, rng)
        f = _ff(_ln(h, p, f"{pre}.ln2"), p, pre)
        h = h + dropout(f, spec.dropout, train, rng)
    c = _ln(h[:, 0, :], p, "head.ln")
    c = dropout(gelu(dense(c, p["head.fc.w"], p["head.fc.b"])), spec.dropout, train, rng)
    return dense(c, p["out.w"], p["out.b"])


_FORWARD = {
    "MLP": lambda s, p, x, t, r: _forward_dense_stack(s, p, x, t, r),
    "CNN": _forward_cnn,
    "TBNN_LI": _forward_li,
    "TBNN_OURS": _forward_ours,
}


def forward(spec: ArchSpec, p: dict, x: Tensor, train: bool = False, rng=None) -> Tensor:
    """Logits ``(B, n_classes)`` for normalized inputs ``x (B, n_bins)``; ``p`` maps names to tensors."""
    if x.ndim != 2 or x.shape[1] != spec.n_bins:
        raise ValidationError(f"expected input (batch, {spec.n_bins}), got {x.shape}")
    return _FORWARD[spec.kind](spec, p, x, train, rng)


def logits(model: ModelBundle, x, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.spec.n_bins:
        raise ValidationError(f"expected input (batch, {model.spec.n_bins}), got {x.shape}")
    p = {n: Tensor(v) for n, v in model.params.items()}
    chunks = [forward(model.spec, p, Tensor(x[i : i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, model.spec.n_classes))


def predict_proba(model: ModelBundle, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class probabilities for already-normalized inputs."""
    return _softmax(logits(model, x, batch_size))
