"""Regression training: MSE loss, Adam, mini-batches and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Protocol

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import ops

logger = logging.getLogger(__name__)

PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 150
    patience: int = 10
    seed: int = 0
    precision: str = "float64"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "patience", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# losses and metrics


def _check_pair(pred, target):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.size == 0 or target.size == 0:
        raise ValueError("cannot score empty vectors")
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def loss_mse(pred, target):
    """Mean squared error. Tensor input stays differentiable; arrays give a float."""
    if isinstance(pred, Tensor):
        if pred.size == 0:
            raise ValueError("cannot score empty vectors")
        return ops.mse(pred, target)
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def metric_mae(pred, target) -> float:
    pred, target = _check_pair(getattr(pred, "data", pred), getattr(target, "data", target))
    return float(np.mean(np.abs(pred - target)))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: Dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.config)


# ---------------------------------------------------------------------------
# training loop


class Regressor(Protocol):
    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor: ...

    def trainable_parameters(self) -> Dict[str, Tensor]: ...

    def state_dict(self) -> Dict[str, np.ndarray]: ...

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None: ...


@dataclass
class Dataset:
    """Inputs and regression targets; ``targets`` has the model output's shape."""

    inputs: object  # ndarray, or a tuple of ndarrays sharing the first axis
    targets: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        n = len(self.targets)
        for part in self._parts():
            if len(part) != n:
                raise ValueError(f"inputs have {len(part)} rows but targets have {n}")

    def _parts(self):
        return self.inputs if isinstance(self.inputs, tuple) else (self.inputs,)

    def __len__(self) -> int:
        return len(self.targets)

    def batch(self, idx, dtype=None):
        parts = tuple(np.asarray(p[idx]) for p in self._parts())
        if dtype is not None:
            parts = tuple(p.astype(dtype, copy=False) for p in parts)
        x = parts if isinstance(self.inputs, tuple) else parts[0]
        y = self.targets[idx]
        return x, (y.astype(dtype) if dtype is not None else y)


@dataclass
class TrainResult:
    history: List[dict]
    initial_val_mse: Optional[float]
    best_epoch: int
    best_val_mse: Optional[float]
    stopped_epoch: int


def predict_dataset(model, data: Dataset, batch_size: int = 64, dtype=np.float64) -> np.ndarray:
    """Unclamped eval-mode predictions for a whole dataset."""
    out = []
    with no_grad():
        for lo in range(0, len(data), batch_size):
            x, _ = data.batch(np.arange(lo, min(lo + batch_size, len(data))), dtype)
            out.append(np.asarray(model.forward(x, train=False).data, dtype=np.float64))
    return np.concatenate(out, axis=0)


def dataset_mse(model, data: Dataset, dtype=np.float64) -> float:
    return loss_mse(predict_dataset(model, data, dtype=dtype), data.targets)


def train(model: Regressor, train_data: Dataset, val_data: Optional[Dataset], config: TrainConfig,
          log_every: int = 0) -> TrainResult:
    """Mini-batch MSE training with seeded shuffling and early stopping.

    Early stopping monitors validation MSE; after ``patience`` epochs without
    improvement training stops and the best epoch's weights are restored.
    Without ``val_data`` all ``max_epochs`` run and the final weights stay.
    """
    if len(train_data) == 0:
        raise ValueError("empty training set")
    dtype = config.dtype
    model.astype(dtype)
    params = model.trainable_parameters()
    optimizer = Adam(params, config)
    rng = np.random.default_rng(config.seed)
    n = len(train_data)

    initial_val = dataset_mse(model, val_data, dtype) if val_data is not None and len(val_data) else None
    best_val = initial_val
    best_state = model.state_dict()
    best_epoch = 0
    wait = 0
    history: List[dict] = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x, y = train_data.batch(idx, dtype)
            optimizer.zero_grad()
            loss = ops.mse(model.forward(x, train=True, rng=rng), y)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
        record = {"epoch": epoch, "train_mse": total / n}
        if best_val is not None:
            val = dataset_mse(model, val_data, dtype)
            record["val_mse"] = val
            if val < best_val:
                best_val, best_epoch, wait = val, epoch, 0
                best_state = model.state_dict()
            else:
                wait += 1
        history.append(record)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d %s", epoch, record)
        if best_val is not None and wait >= config.patience:
            break
    if best_val is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = epoch
    return TrainResult(history=history, initial_val_mse=initial_val, best_epoch=best_epoch,
                       best_val_mse=best_val, stopped_epoch=epoch)
