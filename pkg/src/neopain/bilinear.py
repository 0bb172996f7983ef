"""Two-stream bilinear pooling and the facial-intensity regression head.

Each stream yields a feature vector at every location of a shared grid. The
descriptor sums the outer product of the two vectors over all locations,
applies a signed square root and l2-normalizes the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import ops
from .layers import Dense, Module, prefixed

STREAMS = ("A", "B")
NORM_EPS = 1e-12


@dataclass
class FeatureMap:
    """One stream's (Hf, Wf, C) feature grid."""

    stream: str
    values: Tensor

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(self.values)
        if self.stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}, got {self.stream!r}")
        if self.values.ndim != 3:
            raise ValueError(f"feature map values must be (Hf, Wf, C), got {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class BilinearDescriptor:
    u: Tensor  # sum-pooled outer products
    v: Tensor  # signed square root of u
    w: Tensor  # l2-normalized v

    def __len__(self) -> int:
        return self.u.shape[-1]


def pool_bilinear_batch(xa, xb) -> Tensor:
    """Batched bilinear pooling.

    Args:
        xa: (N, Hf, Wf, Ca) stream A features.
        xb: (N, Hf, Wf, Cb) stream B features.

    Returns:
        (N, Ca*Cb) tensor; entry ``i*Cb + j`` is the sum over locations of
        ``xa[..., i] * xb[..., j]``.
    """
    xa, xb = ops.as_tensor(xa), ops.as_tensor(xb)
    if xa.ndim != 4 or xb.ndim != 4:
        raise ValueError(f"expected (N, Hf, Wf, C) inputs, got {xa.shape} and {xb.shape}")
    if xa.shape[:3] != xb.shape[:3]:
        raise ValueError(
            f"location grids differ: stream A {xa.shape[1]}x{xa.shape[2]} (batch {xa.shape[0]}) "
            f"vs stream B {xb.shape[1]}x{xb.shape[2]} (batch {xb.shape[0]})"
        )
    n, h, w, ca = xa.shape
    cb = xb.shape[3]
    a = ops.reshape(xa, (n, h * w, ca))
    b = ops.reshape(xb, (n, h * w, cb))
    outer = ops.matmul(ops.transpose(a, (0, 2, 1)), b)
    return ops.reshape(outer, (n, ca * cb))


def pool_bilinear(fa: FeatureMap, fb: FeatureMap) -> Tensor:
    """Raw bilinear vector ``u`` (length Ca*Cb) for a single image."""
    if (fa.height, fa.width) != (fb.height, fb.width):
        raise ValueError(
            f"location grids differ: stream {fa.stream} {fa.height}x{fa.width} "
            f"vs stream {fb.stream} {fb.height}x{fb.width}"
        )
    u = pool_bilinear_batch(ops.reshape(fa.values, (1,) + fa.values.shape),
                            ops.reshape(fb.values, (1,) + fb.values.shape))
    return ops.reshape(u, (u.shape[1],))


def normalize_batch(u, eps: float = NORM_EPS, max_grad: float = 1e3) -> Tensor:
    """Signed square root followed by row-wise l2 normalization."""
    return ops.l2_normalize(ops.signed_sqrt(u, max_grad=max_grad), axis=-1, eps=eps)


def normalize_descriptor(u, eps: float = NORM_EPS, max_grad: float = 1e3) -> BilinearDescriptor:
    u = ops.as_tensor(u)
    if not np.all(np.isfinite(u.data)):
        raise ValueError("bilinear vector contains non-finite values")
    v = ops.signed_sqrt(u, max_grad=max_grad)
    w = ops.l2_normalize(v, axis=-1, eps=eps)
    return BilinearDescriptor(u=u, v=v, w=w)


def describe_batch(xa, xb) -> Tensor:
    """Feature maps of both streams -> normalized descriptors (N, Ca*Cb)."""
    return normalize_batch(pool_bilinear_batch(xa, xb))


class BilinearHead(Module):
    """FC -> dropout -> FC -> dropout -> linear output unit.

    Hidden layers use relu. The output is an unbounded regression score; use
    :meth:`predict` for reporting, which clamps to ``clamp``.
    """

    def __init__(self, in_dim: int, hidden: Sequence[int] = (64, 64), dropout: float = 0.5,
                 rng: Optional[np.random.Generator] = None, clamp=(0.0, 1.0)):
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [in_dim, *hidden]
        self.hidden = [Dense(d_in, d_out, rng) for d_in, d_out in zip(dims[:-1], dims[1:])]
        self.out = Dense(dims[-1], 1, rng)
        self.dropout = dropout
        self.clamp = clamp

    @property
    def in_dim(self) -> int:
        return self.hidden[0].in_dim if self.hidden else self.out.in_dim

    def named_parameters(self):
        for k, layer in enumerate(self.hidden):
            yield from prefixed(f"fc{k + 1}", layer)
        yield from prefixed("out", self.out)

    def __call__(self, w, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        w = ops.as_tensor(w)
        if w.shape[-1] != self.in_dim:
            raise ValueError(f"head expects descriptors of length {self.in_dim}, got {w.shape[-1]}")
        x = w
        for layer in self.hidden:
            x = ops.dropout(ops.relu(layer(x)), self.dropout, rng, train)
        y = self.out(x)
        return ops.reshape(y, y.shape[:-1]) if y.ndim > 1 else y

    def forward(self, w, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        return self(w, train=train, rng=rng)

    def predict(self, w) -> np.ndarray:
        with no_grad():
            y = self(w, train=False).data
        return np.clip(y, *self.clamp)


def head_forward(head: BilinearHead, w, train_mode: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    return head(w, train=train_mode, rng=rng)
