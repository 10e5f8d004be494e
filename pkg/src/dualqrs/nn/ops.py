"""Differentiable primitives over :class:`Tensor`.

Layouts: sequences are ``(N, C, L)`` (batch, channels, length) for the
convolutional ops; recurrent ops use ``(N, T, D)``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .tensor import DTYPE, Tensor, make_result

EPS_BN = 1e-5
BCE_CLAMP = 1e-7


# ----------------------------------------------------------------------------
# kink tracking (used by the gradient checker to reject probe points that sit
# on a ReLU hinge or a max-pool tie)


@dataclass
class KinkMargin:
    relu: float = np.inf
    pool: float = np.inf

    @property
    def smallest(self) -> float:
        return min(self.relu, self.pool)


_kinks: Optional[KinkMargin] = None
_pattern: Optional[list] = None


@contextlib.contextmanager
def track_kinks() -> Iterator[KinkMargin]:
    global _kinks
    prev, _kinks = _kinks, KinkMargin()
    try:
        yield _kinks
    finally:
        _kinks = prev


@contextlib.contextmanager
def record_pattern() -> Iterator[list]:
    """Collect every ReLU mask and max-pool argmax computed inside the block.

    Two evaluations share a pattern iff they sit on the same linear piece of
    every ReLU / pool, which is what a finite difference needs.
    """
    global _pattern
    prev, _pattern = _pattern, []
    try:
        yield _pattern
    finally:
        _pattern = prev


# ----------------------------------------------------------------------------
# elementwise / structural


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda out: a.accumulate(-out.grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Plain 2-D (or batched-left) matrix product ``a @ b``."""

    def backward(out):
        if a.requires_grad:
            a.accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            ga = a.data.reshape(-1, a.shape[-1])
            b.accumulate(ga.T @ out.grad.reshape(-1, b.shape[-1]))

    return make_result(a.data @ b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    if _kinks is not None:
        _kinks.relu = min(_kinks.relu, float(np.min(np.abs(x.data))))
    mask = x.data > 0
    if _pattern is not None:
        _pattern.append(mask.tobytes())
    return make_result(x.data * mask, (x,), lambda out: x.accumulate(out.grad * mask))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows and needs no branch masks
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return make_result(s, (x,), lambda out: x.accumulate(out.grad * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda out: x.accumulate(out.grad * (1.0 - t * t)))


def sum_all(x: Tensor) -> Tensor:
    return make_result(
        np.array(x.data.sum()), (x,), lambda out: x.accumulate(np.broadcast_to(out.grad, x.shape))
    )


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; the usual random projection for grad checks."""
    w = np.asarray(weights, dtype=DTYPE)
    return make_result(np.array((x.data * w).sum()), (x,), lambda out: x.accumulate(out.grad * w))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(out):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * out.grad.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(out.grad[tuple(index)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(out):
        g = np.zeros_like(x.data)
        g[index] = out.grad
        x.accumulate(g)

    return make_result(x.data[index], (x,), backward)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda out: x.accumulate(out.grad.transpose(inverse)),
    )


def flip(x: Tensor, axis: int) -> Tensor:
    return make_result(
        np.ascontiguousarray(np.flip(x.data, axis)),
        (x,),
        lambda out: x.accumulate(np.flip(out.grad, axis)),
    )


def reshape(x: Tensor, shape: tuple) -> Tensor:
    return make_result(
        x.data.reshape(shape), (x,), lambda out: x.accumulate(out.grad.reshape(x.shape))
    )


# ----------------------------------------------------------------------------
# convolutional stack


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """'Same' cross-correlation: ``x`` (N, C_in, L), ``w`` (C_out, C_in, K), ``b`` (C_out,)."""
    if x.ndim != 3:
        raise ValueError(f"conv1d input must be (N, C, L), got shape {x.shape}")
    if w.ndim != 3:
        raise ValueError(f"conv1d kernels must be (C_out, C_in, K), got shape {w.shape}")
    n, c_in, length = x.shape
    c_out, w_in, k = w.shape
    if w_in != c_in:
        raise ValueError(f"conv1d channel mismatch: input C_in={c_in}, kernel C_in={w_in}")
    if k % 2 == 0:
        raise ValueError(f"conv1d 'same' padding needs an odd kernel length, got K={k}")
    if b is not None and b.shape != (c_out,):
        raise ValueError(f"conv1d bias must have shape ({c_out},), got {b.shape}")
    pad = (k - 1) // 2

    if k == 1:
        cols = x.data  # (N, C_in, L)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
        # (N, C_in*K, L), row index = c*K + j
        cols = np.stack([xp[:, :, j : j + length] for j in range(k)], axis=2).reshape(
            n, c_in * k, length
        )
    w2 = w.data.reshape(c_out, c_in * k)
    y = np.matmul(w2, cols)
    if b is not None:
        y += b.data[None, :, None]

    def backward(out):
        g = out.grad
        if w.requires_grad:
            gw = np.einsum("nol,nkl->ok", g, cols, optimize=True)
            w.accumulate(gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g)
            if k == 1:
                x.accumulate(gcols)
            else:
                gcols = gcols.reshape(n, c_in, k, length)
                gxp = np.zeros((n, c_in, length + 2 * pad))
                for j in range(k):
                    gxp[:, :, j : j + length] += gcols[:, :, j, :]
                x.accumulate(gxp[:, :, pad : pad + length])

    parents = (x, w) if b is None else (x, w, b)
    return make_result(y, parents, backward)


class BatchNormState:
    """Running statistics for one batch-norm layer (per channel)."""

    def __init__(self, channels: int, momentum: float = 0.9, initialized: bool = False):
        self.momentum = momentum
        self.mean: Optional[np.ndarray] = np.zeros(channels) if initialized else None
        self.var: Optional[np.ndarray] = np.ones(channels) if initialized else None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        if self.mean is None:
            self.mean, self.var = mean.copy(), var.copy()
            return
        m = self.momentum
        self.mean = m * self.mean + (1.0 - m) * mean
        self.var = m * self.var + (1.0 - m) * var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = EPS_BN,
) -> Tensor:
    """Per-channel normalization of ``x`` (N, C, L) over batch and length."""
    shape = (1, -1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        state.update(mu, var)
    else:
        if state.mean is None:
            raise RuntimeError("running stats uninitialized")
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    y = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    count = x.shape[0] * x.shape[2]

    def backward(out):
        g = out.grad
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                s1 = gxhat.sum(axis=(0, 2), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                gx = (gxhat - s1 / count - xhat * s2 / count) * inv.reshape(shape)
            else:
                gx = gxhat * inv.reshape(shape)
            x.accumulate(gx)

    return make_result(y, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity in inference mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * mask, (x,), lambda out: x.accumulate(out.grad * mask))


def maxpool1d(x: Tensor, size: int = 3, stride: int = 2) -> Tensor:
    """Max pooling over length with -inf right padding; output length ceil(L / stride).

    Ties resolve to the leftmost position; the backward pass routes each
    upstream gradient to that single argmax.
    """
    n, c, length = x.shape
    out_len = -(-length // stride)
    need = (out_len - 1) * stride + size
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, max(0, need - length))), constant_values=-np.inf)
    windows = np.stack([xp[:, :, j : j + stride * out_len : stride] for j in range(size)], axis=-1)
    arg = windows.argmax(axis=-1)  # leftmost on ties
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    src = arg + stride * np.arange(out_len)[None, None, :]
    if _pattern is not None:
        _pattern.append(arg.tobytes())

    if _kinks is not None:
        srt = np.sort(windows, axis=-1)
        gap = srt[..., -1] - srt[..., -2]
        # exact ties come from identical upstream values (ReLU zeros through BN, edge
        # padding); they move together under perturbation, so only near-ties count
        live = np.isfinite(gap) & (gap > 0)
        if live.any():
            _kinks.pool = min(_kinks.pool, float(gap[live].min()))

    def backward(out):
        g = np.zeros((n, c, length))
        ni, ci, _ = np.indices(src.shape)
        np.add.at(g, (ni, ci, src), out.grad)
        x.accumulate(g)

    out = make_result(y, (x,), backward)
    return out


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour repeat x2 along length."""
    y = np.repeat(x.data, 2, axis=-1)

    def backward(out):
        g = out.grad
        x.accumulate(g[..., 0::2] + g[..., 1::2])

    return make_result(y, (x,), backward)


def upsample2_conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Upsample x2 then a 1x1 convolution; the U-Net decoder's channel-halving step."""
    if x.shape[1] % 2:
        raise ValueError(f"upsample2_conv1x1 needs an even channel count, got {x.shape[1]}")
    return conv1d(upsample2(x), w, b)


def pad_edge(x: Tensor, right: int) -> Tensor:
    """Right-pad the last axis by replicating the final sample."""
    if right == 0:
        return x
    y = np.concatenate([x.data, np.repeat(x.data[..., -1:], right, axis=-1)], axis=-1)
    length = x.shape[-1]

    def backward(out):
        g = out.grad[..., :length].copy()
        g[..., -1] += out.grad[..., length:].sum(axis=-1)
        x.accumulate(g)

    return make_result(y, (x,), backward)


# ----------------------------------------------------------------------------
# losses (operate on logits for a stable gradient)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against soft targets."""
    t = np.asarray(targets, dtype=DTYPE)
    p = np.clip(_stable_sigmoid(logits.data), BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean()
    count = t.size

    def backward(out):
        logits.accumulate(out.grad * (_stable_sigmoid(logits.data) - t) / count)

    return make_result(np.array(loss), (logits,), backward)


def mse_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error between ``sigmoid(logits)`` and targets."""
    t = np.asarray(targets, dtype=DTYPE)
    p = _stable_sigmoid(logits.data)
    loss = ((p - t) ** 2).mean()
    count = t.size

    def backward(out):
        logits.accumulate(out.grad * 2.0 * (p - t) * p * (1.0 - p) / count)

    return make_result(np.array(loss), (logits,), backward)
