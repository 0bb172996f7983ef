"""Sequence regressor over per-key-frame descriptors.

Two stacked LSTM layers (hard-sigmoid gates, tanh cell/output) feed a
time-distributed dense stack that emits one intensity per timestep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import ops
from .layers import Dense, Module, prefixed

SEQUENCE_LENGTH = 32
HIDDEN = 16
GATES = ("input", "forget", "output", "candidate")


@dataclass
class SequenceFeatures:
    values: np.ndarray  # (32, D)
    event_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != SEQUENCE_LENGTH:
            raise ValueError(f"sequence must be ({SEQUENCE_LENGTH}, D), got {self.values.shape}")

    @property
    def dim(self) -> int:
        return self.values.shape[1]


class LSTMLayer(Module):
    """One LSTM layer. Gate blocks are packed along the last axis in the
    order input, forget, output, candidate."""

    def __init__(self, input_dim: int, hidden: int = HIDDEN, rng: Optional[np.random.Generator] = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.hidden = hidden
        self.w_x = Tensor(rng.uniform(-0.1, 0.1, size=(input_dim, 4 * hidden)), requires_grad=True)
        self.w_h = Tensor(rng.uniform(-0.1, 0.1, size=(hidden, 4 * hidden)), requires_grad=True)
        b = rng.uniform(-0.1, 0.1, size=4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.bias = Tensor(b, requires_grad=True)

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    def named_parameters(self):
        yield "w_x", self.w_x
        yield "w_h", self.w_h
        yield "bias", self.bias

    def gate(self, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(input weights, recurrent weights, bias) of one gate, as array views."""
        k = GATES.index(name)
        sl = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.w_x.data[:, sl], self.w_h.data[:, sl], self.bias.data[sl]

    def step(self, x_proj: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        """Advance one timestep given the already-projected input ``x W_x + b``."""
        n = self.hidden
        z = x_proj + ops.matmul(h, self.w_h)
        gates = ops.hard_sigmoid(z[:, :3 * n])
        candidate = ops.tanh(z[:, 3 * n:])
        i, f, o = gates[:, :n], gates[:, n:2 * n], gates[:, 2 * n:]
        c_new = f * c + i * candidate
        return o * ops.tanh(c_new), c_new

    def __call__(self, seq: Tensor) -> Tensor:
        """(B, T, D) -> (B, T, hidden), zero initial state."""
        if seq.shape[-1] != self.input_dim:
            raise ValueError(f"LSTM layer expects input dim {self.input_dim}, got {seq.shape[-1]}")
        proj = ops.matmul(seq, self.w_x) + self.bias
        return ops.lstm_recurrence(proj, self.w_h)

    def unrolled(self, seq: Tensor) -> Tensor:
        """Same as calling the layer, but built step by step from primitive ops."""
        batch, steps = seq.shape[0], seq.shape[1]
        proj = ops.matmul(seq, self.w_x) + self.bias
        h = Tensor(np.zeros((batch, self.hidden), dtype=seq.dtype))
        c = Tensor(np.zeros((batch, self.hidden), dtype=seq.dtype))
        outputs = []
        for t in range(steps):
            h, c = self.step(proj[:, t, :], h, c)
            outputs.append(h)
        return ops.stack(outputs, axis=1)


def lstm_cell_step(x, h, c, layer: LSTMLayer) -> Tuple[Tensor, Tensor]:
    """One recurrence step on single vectors (D,), (H,), (H,) -> (h', c')."""
    x, h, c = ops.as_tensor(x), ops.as_tensor(h), ops.as_tensor(c)
    if x.shape != (layer.input_dim,) or h.shape != (layer.hidden,) or c.shape != (layer.hidden,):
        raise ValueError(
            f"cell step expects x ({layer.input_dim},), h/c ({layer.hidden},); "
            f"got {x.shape}, {h.shape}, {c.shape}"
        )
    x2 = ops.reshape(x, (1, -1))
    proj = ops.matmul(x2, layer.w_x) + layer.bias
    h2, c2 = layer.step(proj, ops.reshape(h, (1, -1)), ops.reshape(c, (1, -1)))
    return ops.reshape(h2, (layer.hidden,)), ops.reshape(c2, (layer.hidden,))


class TemporalModel(Module):
    """LSTM16 -> LSTM16 -> TD dense16 relu -> dropout -> TD dense16 relu ->
    dropout -> TD dense1 linear.

    Inputs are first standardized per dimension with fixed (non-trained)
    ``input.mean`` and ``input.scale`` vectors, and the linear output is
    mapped back to label units by ``output.scale`` and ``output.mean``. Both
    are identity until :meth:`fit_input_scaling` / :meth:`fit_output_scaling`.
    """

    def __init__(self, input_dim: int, hidden: int = HIDDEN, dense: int = 16, dropout: float = 0.3,
                 seed: int = 0, clamp=(0.0, 7.0)):
        rng = np.random.default_rng(seed)
        self.input_mean = Tensor(np.zeros(input_dim))
        self.input_scale = Tensor(np.ones(input_dim))
        self.output_mean = Tensor(np.zeros(1))
        self.output_scale = Tensor(np.ones(1))
        self.lstm1 = LSTMLayer(input_dim, hidden, rng)
        self.lstm2 = LSTMLayer(hidden, hidden, rng)
        self.td1 = Dense(hidden, dense, rng, init="uniform")
        self.td2 = Dense(dense, dense, rng, init="uniform")
        self.out = Dense(dense, 1, rng, init="uniform")
        self.dropout = dropout
        self.clamp = clamp

    @property
    def input_dim(self) -> int:
        return self.lstm1.input_dim

    def named_parameters(self):
        yield "input.mean", self.input_mean
        yield "input.scale", self.input_scale
        for name in ("lstm1", "lstm2", "td1", "td2", "out"):
            yield from prefixed(name, getattr(self, name))
        yield "output.mean", self.output_mean
        yield "output.scale", self.output_scale

    def fit_input_scaling(self, seqs, min_std: float = 1e-8) -> None:
        """Set the input standardization from (N, T, D) training sequences."""
        flat = np.asarray(seqs, dtype=np.float64).reshape(-1, self.input_dim)
        self.input_mean.data = flat.mean(axis=0).astype(self.input_mean.dtype)
        self.input_scale.data = (1.0 / np.maximum(flat.std(axis=0), min_std)).astype(self.input_scale.dtype)

    def fit_output_scaling(self, targets, min_std: float = 1e-8) -> None:
        """Set the output mapping from training labels."""
        y = np.asarray(targets, dtype=np.float64).ravel()
        self.output_mean.data = np.full(1, y.mean(), dtype=self.output_mean.dtype)
        self.output_scale.data = np.full(1, max(y.std(), min_std), dtype=self.output_scale.dtype)

    def forward(self, seq, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """(B, T, D) -> (B, T) unclamped intensities."""
        seq = ops.as_tensor(seq)
        if seq.ndim != 3 or seq.shape[-1] != self.input_dim:
            raise ValueError(f"expected (B, T, {self.input_dim}) sequences, got {seq.shape}")
        x = (seq - self.input_mean) * self.input_scale
        x = self.lstm2(self.lstm1(x))
        x = ops.dropout(ops.relu(self.td1(x)), self.dropout, rng, train)
        x = ops.dropout(ops.relu(self.td2(x)), self.dropout, rng, train)
        y = self.out(x) * self.output_scale + self.output_mean
        return ops.reshape(y, y.shape[:2])

    __call__ = forward

    def predict(self, seqs) -> np.ndarray:
        """Clamped intensities for (B, T, D) or a single (T, D) sequence."""
        seqs = np.asarray(seqs)
        single = seqs.ndim == 2
        with no_grad():
            y = self.forward(seqs[None] if single else seqs).data
        y = np.clip(y, *self.clamp)
        return y[0] if single else y


def intensity_sequence(seq, model: TemporalModel, train_mode: bool = False,
                       rng: Optional[np.random.Generator] = None, clamp: bool = False) -> np.ndarray:
    """32 intensity values for one event's descriptor sequence."""
    values = seq.values if isinstance(seq, SequenceFeatures) else np.asarray(seq)
    if values.ndim != 2 or values.shape[0] != SEQUENCE_LENGTH:
        raise ValueError(f"sequence must be ({SEQUENCE_LENGTH}, D), got {values.shape}")
    if values.shape[1] != model.input_dim:
        raise ValueError(f"sequence dim {values.shape[1]} != model input dim {model.input_dim}")
    with no_grad():
        y = model.forward(values[None], train=train_mode, rng=rng).data[0]
    return np.clip(y, *model.clamp) if clamp else y
