"""LSTM cell, fused sequence op, and the summed bidirectional wrapper.

Gate order inside the stacked ``4H`` axis is (input, forget, cell, output).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import _stable_sigmoid
from .tensor import Tensor, make_result


@dataclass
class LstmCellParams:
    W: Tensor  # (4H, D)
    U: Tensor  # (4H, H)
    b: Tensor  # (4H,)

    def __post_init__(self):
        four_h, d = self.W.shape
        if four_h % 4:
            raise ValueError(f"input weights first dimension must be 4H, got {four_h}")
        h = four_h // 4
        if self.U.shape != (four_h, h):
            raise ValueError(f"recurrent weights must be ({four_h}, {h}), got {self.U.shape}")
        if self.b.shape != (four_h,):
            raise ValueError(f"bias must be ({four_h},), got {self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def tensors(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.W, self.U, self.b


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmCellParams):
    """One step built from primitive ops; rows of ``x_t`` are batch elements."""
    hid = p.hidden
    z = ops.add(
        ops.add(ops.matmul(x_t, ops.transpose(p.W, (1, 0))), ops.matmul(h_prev, ops.transpose(p.U, (1, 0)))),
        p.b,
    )
    i = ops.sigmoid(ops.slice_axis(z, 0, hid))
    f = ops.sigmoid(ops.slice_axis(z, hid, 2 * hid))
    g = ops.tanh(ops.slice_axis(z, 2 * hid, 3 * hid))
    o = ops.sigmoid(ops.slice_axis(z, 3 * hid, 4 * hid))
    c_t = ops.add(ops.mul(f, c_prev), ops.mul(i, g))
    h_t = ops.mul(o, ops.tanh(c_t))
    return h_t, c_t


def lstm_sequence(x: Tensor, p: LstmCellParams, reverse: bool = False) -> Tensor:
    """Run an LSTM over ``x`` (N, T, D) from zero state; returns hidden states (N, T, H).

    With ``reverse`` the recursion runs right to left and outputs stay aligned
    with input time steps. Backward is hand-written BPTT.
    """
    n, steps, d = x.shape
    if d != p.input_size:
        raise ValueError(f"lstm input size mismatch: sequence D={d}, params D={p.input_size}")
    hid = p.hidden
    W, U, b = p.W.data, p.U.data, p.b.data
    order = range(steps - 1, -1, -1) if reverse else range(steps)

    xz = x.data @ W.T + b  # (N, T, 4H)
    hs = np.zeros((n, steps, hid))
    cs = np.zeros((n, steps, hid))
    gates = np.zeros((n, steps, 4 * hid))  # activated i, f, g, o
    h = np.zeros((n, hid))
    c = np.zeros((n, hid))
    for t in order:
        z = xz[:, t] + h @ U.T
        a = gates[:, t]
        a[:, : 2 * hid] = _stable_sigmoid(z[:, : 2 * hid])
        a[:, 2 * hid : 3 * hid] = np.tanh(z[:, 2 * hid : 3 * hid])
        a[:, 3 * hid :] = _stable_sigmoid(z[:, 3 * hid :])
        c = a[:, hid : 2 * hid] * c + a[:, :hid] * a[:, 2 * hid : 3 * hid]
        h = a[:, 3 * hid :] * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h

    def backward(out):
        gh_out = out.grad
        dz_all = np.zeros((n, steps, 4 * hid))
        dh_next = np.zeros((n, hid))
        dc_next = np.zeros((n, hid))
        zero = np.zeros((n, hid))
        for t in reversed(list(order)):
            prev = t + 1 if reverse else t - 1
            c_prev = cs[:, prev] if 0 <= prev < steps else zero
            a = gates[:, t]
            i, f, g, o = (a[:, k * hid : (k + 1) * hid] for k in range(4))
            tc = np.tanh(cs[:, t])
            dh = gh_out[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :hid] = dc * g * i * (1.0 - i)
            dz[:, hid : 2 * hid] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * hid : 3 * hid] = dc * i * (1.0 - g * g)
            dz[:, 3 * hid :] = dh * tc * o * (1.0 - o)
            dh_next = dz @ U
            dc_next = dc * f
        flat_dz = dz_all.reshape(n * steps, 4 * hid)
        if x.requires_grad:
            x.accumulate(dz_all @ W)
        if p.W.requires_grad:
            p.W.accumulate(flat_dz.T @ x.data.reshape(n * steps, d))
        if p.b.requires_grad:
            p.b.accumulate(flat_dz.sum(axis=0))
        if p.U.requires_grad:
            h_prev = np.zeros_like(hs)
            if reverse:
                h_prev[:, :-1] = hs[:, 1:]
            else:
                h_prev[:, 1:] = hs[:, :-1]
            p.U.accumulate(flat_dz.T @ h_prev.reshape(n * steps, hid))

    return make_result(hs, (x, p.W, p.U, p.b), backward)


def bilstm_sum(x: Tensor, forward: LstmCellParams, backward: LstmCellParams) -> Tensor:
    """Forward and backward LSTM passes over ``x`` (N, T, D), summed per step -> (N, T, H)."""
    if forward.hidden != backward.hidden:
        raise ValueError("forward and backward cells must share the hidden size")
    return ops.add(lstm_sequence(x, forward), lstm_sequence(x, backward, reverse=True))


def lstm_sequence_unrolled(x: Tensor, p: LstmCellParams, reverse: bool = False) -> Tensor:
    """Reference path: the same recursion composed from :func:`lstm_cell_step`."""
    n, steps, _ = x.shape
    h = Tensor(np.zeros((n, p.hidden)))
    c = Tensor(np.zeros((n, p.hidden)))
    outs: dict[int, Tensor] = {}
    for t in (range(steps - 1, -1, -1) if reverse else range(steps)):
        x_t = ops.reshape(ops.slice_axis(x, t, t + 1, axis=1), (n, -1))
        h, c = lstm_cell_step(x_t, h, c, p)
        outs[t] = ops.reshape(h, (n, 1, p.hidden))
    return ops.concat([outs[t] for t in range(steps)], axis=1)
