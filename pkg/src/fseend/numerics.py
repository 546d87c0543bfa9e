"""Small float64 tensor core with a reverse-mode gradient tape.

Operations run eagerly on numpy arrays. While a :class:`GradTape` is active,
every op whose inputs require gradients appends a node to it, and
``tape.backward(loss)`` replays the nodes in reverse. Outside a tape the ops
are plain numpy and cost nothing extra, which is how inference runs.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

DTYPE = np.float64
NORM_FLOOR = 1e-12

_local = threading.local()


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradTape:
    """Ordered record of the primitive applications of one training step.

    Use as a context manager; tapes are per-thread and may nest (the innermost
    one records).
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(out, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded input."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("loss is not finite")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi


def current_tape() -> GradTape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        ),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _make(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


# ---------------------------------------------------------------- reductions / shape


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(y, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _make(
        np.broadcast_to(x.data, shape).copy(),
        (x,),
        lambda g: (_unbroadcast(g, x.shape),),
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def getitem(x: Tensor, key) -> Tensor:
    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(x.data[key], (x,), backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from err

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(y, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- model primitives


def masked_softmax(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with disallowed positions forced to exactly 0.

    ``mask`` is boolean (True = allowed) and must broadcast against ``scores``.
    """
    s = scores.data
    if mask is None:
        p = s - s.max(axis=-1, keepdims=True)
    else:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, s.shape)
        except ValueError as err:
            raise ValueError(f"mask shape {mask.shape} does not match scores {s.shape}") from err
        if not mask.any(axis=-1).all():
            raise ValueError("masked_softmax: a row has no allowed position")
        # -inf on masked positions gives exp(...) == 0 exactly
        p = s + np.where(mask, 0.0, -np.inf)
        p -= p.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=-1, keepdims=True)

    def backward(g):
        gp = g * p
        gp -= p * gp.sum(axis=-1, keepdims=True)
        return (gp,)

    return _make(p, (scores,), backward)


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular boolean mask; row t may attend to columns 0..t."""
    return np.tril(np.ones((n, n), dtype=bool))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ValueError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(y, (x, gain, bias), backward)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale every vector on the last axis to unit length (norm floored at 1e-12)."""
    x = as_tensor(x)
    n = np.maximum(np.linalg.norm(x.data, axis=-1, keepdims=True), NORM_FLOOR)
    y = x.data / n
    floored = n <= NORM_FLOOR

    def backward(g):
        proj = np.where(floored, 0.0, (y * g).sum(axis=-1, keepdims=True))
        return ((g - y * proj) / n,)

    return _make(y, (x,), backward)


def conv1d_time(
    x: Tensor,
    kernels: Tensor,
    kernel_size: int,
    left_pad: int,
    right_pad: int,
    bias: Tensor | None = None,
) -> Tensor:
    """Zero-padded convolution along the time axis (second to last) of ``x``.

    ``kernels`` is ``(K, D_in, D_out)`` for a channel-mixing convolution or
    ``(K, D)`` for a depthwise one. Output frame t reads input frames
    ``t - left_pad ... t + right_pad``; frames outside ``[0, T)`` count as zero.
    """
    if kernel_size < 1:
        raise ValueError(f"kernel_size must be >= 1, got {kernel_size}")
    x, kernels = as_tensor(x), as_tensor(kernels)
    bias = None if bias is None else as_tensor(bias)
    if left_pad < 0 or right_pad < 0 or left_pad + right_pad != kernel_size - 1:
        raise ValueError(
            f"left_pad + right_pad must equal kernel_size - 1 "
            f"(got {left_pad} + {right_pad} vs {kernel_size})"
        )
    if kernels.shape[0] != kernel_size:
        raise ValueError(f"kernels has {kernels.shape[0]} taps, expected {kernel_size}")
    depthwise = kernels.ndim == 2
    T = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(left_pad, right_pad), (0, 0)]
    xp = np.pad(x.data, pad)
    w = kernels.data
    d_out = w.shape[-1]
    y = np.zeros(x.shape[:-1] + (d_out,), dtype=DTYPE)
    for k in range(kernel_size):
        window = xp[..., k : k + T, :]
        y += window * w[k] if depthwise else window @ w[k]
    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    if bias is not None:
        y += bias.data

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        lead = tuple(range(x.ndim - 1))
        for k in range(kernel_size):
            window = xp[..., k : k + T, :]
            if depthwise:
                gxp[..., k : k + T, :] += g * w[k]
                gw[k] = (g * window).sum(axis=lead)
            else:
                gxp[..., k : k + T, :] += g @ w[k].T
                gw[k] = window.reshape(-1, window.shape[-1]).T @ g.reshape(-1, d_out)
        gx = gxp[..., left_pad : left_pad + T, :]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=lead),)
        return grads

    return _make(y, inputs, backward)


def binary_cross_entropy(p: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Elementwise BCE with ``p`` clamped to ``[eps, 1 - eps]``.

    The clamp has zero gradient where it is active.
    """
    y = np.asarray(target, dtype=DTYPE)
    if y.shape != p.shape:
        raise ValueError(f"BCE shape mismatch: predictions {p.shape} vs targets {y.shape}")
    pc = np.clip(p.data, eps, 1.0 - eps)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def backward(g):
        return (np.where(inside, g * ((1.0 - y) / (1.0 - pc) - y / pc), 0.0),)

    return _make(loss, (p,), backward)


# ---------------------------------------------------------------- gradient checking


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-6,
) -> float:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    For each parameter tensor the error is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)``;
    the largest such error over all tensors is returned.
    """
    params = list(params)
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside the useful range for float64")
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    with GradTape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: loss is not finite")
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().item()
            flat[i] = orig - step
            lo = f().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        if not np.isfinite(numeric).all():
            raise FloatingPointError("grad_check: non-finite loss while perturbing")
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0) / scale))
    for p, flag in zip(params, saved):
        p.requires_grad = flag
        p.grad = None
    return worst
