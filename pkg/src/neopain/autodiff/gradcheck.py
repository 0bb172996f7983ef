"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise.

    ``floor`` keeps components whose true gradient is (near) zero from turning
    round-off noise into a huge relative error.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn: Callable[[], Tensor], x: Tensor, eps: float,
                     indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of ``loss_fn()`` with respect to entries of ``x``.

    ``x.data`` is perturbed in place and restored. Only ``indices`` (flat) are
    evaluated when given; other entries of the result stay zero.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    entries = range(flat.size) if indices is None else indices
    with no_grad():
        for i in entries:
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = loss_fn().item()
            flat[i] = saved - eps
            f_minus = loss_fn().item()
            flat[i] = saved
            out[i] = (f_plus - f_minus) / (2.0 * eps)
    return out.reshape(x.shape)


def check_gradients(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-6,
                    floor: float = 1e-6) -> float:
    """Max relative error between backprop and finite differences over all
    entries of all ``params`` (which must be the tensors ``loss_fn`` reads)."""
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = numeric_gradient(loss_fn, p, eps)
        worst = max(worst, float(relative_error(analytic, numeric, floor).max()))
    return worst


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
                            floor: float = 1e-6) -> float:
    """Max relative error of d f(x) / dx against central differences."""
    x.requires_grad = True
    return check_gradients(lambda: f(x), [x], eps=eps, floor=floor)
