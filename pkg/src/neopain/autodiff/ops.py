"""Differentiable operations on :class:`Tensor`.

Every op validates operand shapes, computes the forward result with numpy and
registers a closure mapping the output gradient to one gradient per input.
Elementwise binary ops follow numpy broadcasting; their gradients are summed
back over broadcast axes.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, grad_enabled, make_result

# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> tuple:
    """Promote operands to tensors; bare Python numbers take the other operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.isscalar(b):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.isscalar(a):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), backward, "div")


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics for stacked (batched) operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    if b.ndim == 2 and a.ndim > 2:
        # stacked rows times one matrix: fold the stack into the row axis
        k = a.shape[-1]

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a.data.reshape(-1, k).T @ g2 if b.requires_grad else None
            return ga, gb

        return make_result(out, (a, b), backward, "matmul")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation on channels-last input.

    Args:
        x: (N, H, W, C) input.
        weight: (kh, kw, C, O) kernel.
        bias: optional (O,) vector.

    Returns:
        (N, Ho, Wo, O) with ``Ho = (H + 2*padding - kh) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects x (N,H,W,C) and weight (kh,kw,C,O), got {x.shape} and {weight.shape}")
    n, h, w, c = x.shape
    kh, kw, wc, o = weight.shape
    if wc != c:
        raise ValueError(f"conv2d: input has {c} channels but kernel expects {wc}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    wd = weight.data

    def window(arr, i, j):
        return arr[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]

    out = np.zeros((n, ho, wo, o), dtype=np.result_type(x.data, wd))
    for i in range(kh):
        for j in range(kw):
            out += window(xp, i, j) @ wd[i, j]
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out += bias.data
        parents = (x, weight, bias)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    window(gxp, i, j)[...] += g @ wd[i, j].T
            gx = gxp[:, padding:padding + h, padding:padding + w, :] if padding else gxp
        if weight.requires_grad:
            g2 = g.reshape(-1, o)
            gw = np.empty_like(wd)
            for i in range(kh):
                for j in range(kw):
                    gw[i, j] = window(xp, i, j).reshape(-1, c).T @ g2
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 1, 2)),)
        return grads

    return make_result(out, parents, backward, "conv2d")


def maxpool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping max pooling on (N, H, W, C); trailing rows/cols that do
    not fill a window are dropped."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects (N,H,W,C), got {x.shape}")
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool2d: window {size} larger than input {h}x{w}")
    cropped = x.data[:, :ho * size, :wo * size, :]
    if not (x.requires_grad and grad_enabled()):
        out = cropped.reshape(n, ho, size, wo, size, c).max(axis=(2, 4))
        return make_result(out, (x,), None, "maxpool2d")
    blocks = cropped.reshape(n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * size, wo * size, c)
        if gb.shape == x.shape:
            return (gb,)
        full = np.zeros_like(x.data)
        full[:, :ho * size, :wo * size, :] = gb
        return (full,)

    return make_result(out, (x,), backward, "maxpool2d")


# ---------------------------------------------------------------------------
# shape ops and reductions


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concatenate needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(d != r for k, (d, r) in enumerate(zip(t.shape, ref)) if k != ax):
            raise ValueError(f"concatenate: shape {t.shape} does not match {ref} off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_result(out, tensors, backward, "concatenate")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack needs at least one tensor")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"stack: tensors have differing shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, k, axis=ax) for k in range(len(tensors)))

    return make_result(out, tensors, backward, "stack")


def index(x, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    x = as_tensor(x)
    out = np.asarray(x.data[idx])

    def backward(g):
        full = np.zeros_like(x.data)
        if _is_advanced(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_result(out, (x,), backward, "index")


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


# ---------------------------------------------------------------------------
# activations

HARD_SIGMOID_SLOPE = 0.2


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def hard_sigmoid(x) -> Tensor:
    """clamp(0.2 * x + 0.5, 0, 1)."""
    x = as_tensor(x)
    raw = HARD_SIGMOID_SLOPE * x.data + 0.5
    out = np.clip(raw, 0.0, 1.0)
    inside = (raw > 0.0) & (raw < 1.0)
    return make_result(out, (x,), lambda g: (g * inside * HARD_SIGMOID_SLOPE,), "hard_sigmoid")


def linear(x) -> Tensor:
    return as_tensor(x)


def signed_sqrt(x, max_grad: float = 1e3) -> Tensor:
    """sign(x) * sqrt(|x|); the derivative 1 / (2 sqrt|x|) is capped at ``max_grad``."""
    x = as_tensor(x)
    root = np.sqrt(np.abs(x.data))
    out = np.sign(x.data) * root

    def backward(g):
        with np.errstate(divide="ignore"):
            d = np.where(root > 0, 0.5 / np.where(root > 0, root, 1.0), np.inf)
        return (g * np.minimum(d, max_grad),)

    return make_result(out, (x,), backward, "signed_sqrt")


ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "hard_sigmoid": hard_sigmoid,
    "linear": linear,
    "signed_sqrt": signed_sqrt,
}


def activation(x, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# composite layers


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / ||x||_2 along ``axis``; slices with norm below ``eps`` map to zero
    and pass no gradient."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    ok = norm >= eps
    safe = np.where(ok, norm, 1.0)
    out = np.where(ok, x.data / safe, 0.0).astype(x.dtype)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(ok, (g - out * dot) / safe, 0.0),)

    return make_result(out, (x,), backward, "l2_normalize")


def lstm_recurrence(proj, w_h) -> Tensor:
    """Run an LSTM over a whole sequence as a single graph node.

    Args:
        proj: (B, T, 4H) input projections ``x_t W_x + b``, gate blocks packed
            as input, forget, output, candidate.
        w_h: (H, 4H) recurrent weights.

    Returns:
        (B, T, H) hidden states from a zero initial state. Gates use
        hard_sigmoid, the candidate and cell output use tanh.
    """
    proj, w_h = as_tensor(proj), as_tensor(w_h)
    if proj.ndim != 3 or w_h.ndim != 2 or w_h.shape[1] != 4 * w_h.shape[0] or proj.shape[2] != w_h.shape[1]:
        raise ValueError(f"lstm_recurrence: proj {proj.shape} and w_h {w_h.shape} are inconsistent")
    b, steps, _ = proj.shape
    n = w_h.shape[0]
    wh = w_h.data
    dtype = np.result_type(proj.data, wh)
    h = np.zeros((b, n), dtype=dtype)
    c = np.zeros((b, n), dtype=dtype)
    hs = np.empty((b, steps, n), dtype=dtype)
    cache = []
    for t in range(steps):
        z = proj.data[:, t, :] + h @ wh
        raw = HARD_SIGMOID_SLOPE * z[:, :3 * n] + 0.5
        gates = np.clip(raw, 0.0, 1.0)
        cand = np.tanh(z[:, 3 * n:])
        c_prev = c
        c = gates[:, n:2 * n] * c_prev + gates[:, :n] * cand
        tc = np.tanh(c)
        cache.append((h, c_prev, gates, (raw > 0.0) & (raw < 1.0), cand, tc))
        h = gates[:, 2 * n:] * tc
        hs[:, t, :] = h

    def backward(g):
        dproj = np.empty_like(proj.data, dtype=dtype)
        dwh = np.zeros_like(wh, dtype=dtype)
        dh_next = np.zeros((b, n), dtype=dtype)
        dc_next = np.zeros((b, n), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            h_prev, c_prev, gates, inside, cand, tc = cache[t]
            i, f, o = gates[:, :n], gates[:, n:2 * n], gates[:, 2 * n:]
            dh = g[:, t, :] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dgates = np.concatenate([dc * cand, dc * c_prev, dh * tc], axis=1) * inside * HARD_SIGMOID_SLOPE
            dz = np.concatenate([dgates, dc * i * (1.0 - cand * cand)], axis=1)
            dproj[:, t, :] = dz
            dwh += h_prev.T @ dz
            dh_next = dz @ wh.T
            dc_next = dc * f
        return dproj, dwh

    return make_result(hs, (proj, w_h), backward, "lstm_recurrence")


def dropout(x, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) at train time, identity otherwise."""
    x = as_tensor(x)
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse: prediction shape {pred.shape} != target shape {target.shape}")
    return mean(square(sub(pred, target)))
