from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from specdapt.autodiff.tensor import Tensor
from specdapt.errors import NonFiniteError, ValidationError


class ParamStore:
    """Ordered named parameter arrays with a per-parameter trainable flag."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> np.ndarray:
        if name in self._values:
            raise ValidationError(f"duplicate parameter name {name!r}")
        self._values[name] = np.array(value, dtype=np.float64)
        self._trainable[name] = bool(trainable)
        return self._values[name]

    def __getitem__(self, name) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name, value):
        if name not in self._values:
            raise KeyError(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._values[name].shape:
            raise ValidationError(f"{name}: shape {value.shape} != {self._values[name].shape}")
        self._values[name] = value

    def __contains__(self, name):
        return name in self._values

    def __len__(self):
        return len(self._values)

    def __iter__(self):
        return iter(self._values)

    def names(self) -> list:
        return list(self._values)

    def items(self):
        return self._values.items()

    def trainable(self, name) -> bool:
        return self._trainable[name]

    def set_trainable(self, name, flag: bool):
        if name not in self._trainable:
            raise KeyError(name)
        self._trainable[name] = bool(flag)

    def n_values(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self._values.items():
            out.add(name, value.copy(), self._trainable[name])
        return out

    def tensors(self, all_grad: bool = False) -> dict:
        """Fresh leaf tensors; frozen parameters do not request gradients unless ``all_grad``."""
        return {n: Tensor(v, requires_grad=all_grad or self._trainable[n]) for n, v in self._values.items()}

    def equal(self, other: "ParamStore") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[n], other[n]) and self.trainable(n) == other.trainable(n) for n in self
        )


@dataclass
class Gradients:
    loss: float
    params: dict
    inputs: np.ndarray | None = None


def forward_backward(fn, params: ParamStore, inputs=None, wrt_inputs: bool = False) -> Gradients:
    """Evaluate ``fn(param_tensors, input_tensor) -> scalar Tensor`` and differentiate it.

    Gradients are returned for every trainable parameter (zeros if the loss does
    not depend on it) and for the inputs when ``wrt_inputs`` is set.
    """
    tensors = params.tensors()
    x = None if inputs is None else Tensor(inputs, requires_grad=wrt_inputs)
    loss = fn(tensors, x)
    if loss.data.size != 1:
        raise ValidationError(f"loss must be scalar, got shape {loss.shape}")
    value = float(loss.data.reshape(()))
    if not np.isfinite(value):
        raise NonFiniteError("non-finite loss")
    if loss.requires_grad:
        loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
        if params.trainable(name)
    }
    input_grad = None
    if wrt_inputs:
        input_grad = x.grad if x.grad is not None else np.zeros_like(x.data)
    return Gradients(value, grads, input_grad)
