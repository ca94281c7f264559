"""Minimal reverse-mode autodiff with the layer set used by the four classifiers."""

from specdapt.autodiff.checkpoint import load_params, params_bytes, params_from_bytes, save_params
from specdapt.autodiff.layers import (
    conv1d,
    cross_entropy,
    dense,
    dropout,
    embedding_add,
    gelu,
    layer_norm,
    multi_head_attention,
    relu,
    sinusoidal_encoding,
    softmax,
)
from specdapt.autodiff.params import Gradients, ParamStore, forward_backward
from specdapt.autodiff.tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    matmul,
    mul,
    reshape,
    scale,
    transpose,
)

__all__ = [
    "Gradients",
    "ParamStore",
    "Tensor",
    "add",
    "as_tensor",
    "broadcast_to",
    "concat",
    "conv1d",
    "cross_entropy",
    "dense",
    "dropout",
    "embedding_add",
    "forward_backward",
    "gelu",
    "layer_norm",
    "load_params",
    "matmul",
    "mul",
    "multi_head_attention",
    "params_bytes",
    "params_from_bytes",
    "relu",
    "reshape",
    "save_params",
    "scale",
    "sinusoidal_encoding",
    "softmax",
    "transpose",
]
