"""Parameter containers shared by the models."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from .autodiff import Tensor
from .autodiff import ops


class Module:
    """Base class: subclasses list their parameter tensors in ``named_parameters``."""

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters() if p.requires_grad}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"state is missing parameters: {missing}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != expected {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_(self) -> "Module":
        for _, p in self.named_parameters():
            p.data[...] = 0.0
        return self


class Dense(Module):
    """Fully connected layer ``x @ weight + bias`` on the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, init: str = "glorot"):
        if init == "glorot":
            limit = np.sqrt(6.0 / (in_dim + out_dim))
            w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
            b = np.zeros(out_dim)
        elif init == "uniform":
            w = rng.uniform(-0.1, 0.1, size=(in_dim, out_dim))
            b = rng.uniform(-0.1, 0.1, size=out_dim)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(b, requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"dense layer expects last dim {self.in_dim}, got {x.shape}")
        if x.ndim == 1:
            return ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), self.weight), (self.out_dim,)) + self.bias
        return ops.matmul(x, self.weight) + self.bias


def prefixed(prefix: str, module: Module):
    for name, p in module.named_parameters():
        yield f"{prefix}.{name}", p
