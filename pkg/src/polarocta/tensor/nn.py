"""Network-level primitives: 3-D convolution, normalization, softmax, LSTM.

``conv3d`` accepts either a single volume ``[C, D, H, W]`` or a batched
``[B, C, D, H, W]`` stack; all other shapes are rejected.  Convolution
uses the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .core import (
    OP_NAMES,
    Tensor,
    _check_same_dtype,
    add,
    concat,
    mul,
    record_op,
    reshape,
    sigmoid,
    tanh,
    transpose,
)

_CONV3D = "conv3d"
_LAYER_NORM = "layer_norm"
_SOFTMAX = "softmax"
_LOG_SOFTMAX = "log_softmax"
OP_NAMES.update({_CONV3D, _LAYER_NORM, _SOFTMAX, _LOG_SOFTMAX})


def _im2col(xp: np.ndarray, kdims, strides, odims) -> np.ndarray:
    """[B, C, Dp, Hp, Wp] -> [B, C*kd*kh*kw, Do*Ho*Wo] patch matrix."""
    B, C = xp.shape[:2]
    kd, kh, kw = kdims
    sd, sh, sw = strides
    Do, Ho, Wo = odims
    sB, sC, sD, sH, sW = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, C, kd, kh, kw, Do, Ho, Wo),
        strides=(sB, sC, sD, sH, sW, sD * sd, sH * sh, sW * sw),
        writeable=False,
    )
    return win.reshape(B, C * kd * kh * kw, Do * Ho * Wo)


def conv3d(x: Tensor, kernels: Tensor, stride=(1, 1, 1), pad=(0, 0, 0)) -> Tensor:
    """Cross-correlate ``kernels [C_out, C_in, kd, kh, kw]`` over a volume.

    Output extents follow ``floor((ext + 2*pad - k) / stride) + 1``.
    Patches are recomputed during backward instead of being cached, to
    keep recorded memory proportional to activations.
    """
    _check_same_dtype(x, kernels)
    if x.ndim == 4:
        batched = False
    elif x.ndim == 5:
        batched = True
    else:
        raise ShapeError(f"conv3d expects [C,D,H,W] or [B,C,D,H,W], got {x.shape}")
    if kernels.ndim != 5:
        raise ShapeError(f"conv3d kernels must be 5-D, got {kernels.shape}")
    C_out, C_k, kd, kh, kw = kernels.shape
    C_in, D, H, W = x.shape[-4:]
    if C_in != C_k:
        raise ShapeError(f"conv3d channel mismatch: input {C_in}, kernels {C_k}")
    sd, sh, sw = stride
    pd, ph, pw = pad
    Dp, Hp, Wp = D + 2 * pd, H + 2 * ph, W + 2 * pw
    if kd > Dp or kh > Hp or kw > Wp:
        raise ShapeError(
            f"kernel ({kd},{kh},{kw}) larger than padded input ({Dp},{Hp},{Wp})"
        )
    Do = (Dp - kd) // sd + 1
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1

    xd = x.data if batched else x.data[None]
    B = xd.shape[0]
    pads = ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))

    def patches():
        return _im2col(np.pad(xd, pads), (kd, kh, kw), (sd, sh, sw), (Do, Ho, Wo))

    kmat = kernels.data.reshape(C_out, -1)
    out = (kmat @ patches()).reshape(B, C_out, Do, Ho, Wo)
    if not batched:
        out = out[0]

    def backward(g):
        g3 = g.reshape(B, C_out, Do * Ho * Wo)
        P = patches()
        dk = np.einsum("bon,bkn->ok", g3, P).reshape(kernels.shape)
        dP = (kmat.T @ g3).reshape(B, C_in, kd, kh, kw, Do, Ho, Wo)
        dxp = np.zeros((B, C_in, Dp, Hp, Wp), dtype=g.dtype)
        for a in range(kd):
            for b in range(kh):
                for c in range(kw):
                    dxp[:, :, a : a + sd * Do : sd, b : b + sh * Ho : sh, c : c + sw * Wo : sw] += dP[:, :, a, b, c]
        dx = dxp[:, :, pd : pd + D, ph : ph + H, pw : pw + W]
        if not batched:
            dx = dx[0]
        return dx, dk

    return record_op(_CONV3D, (x, kernels), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    _check_same_dtype(x, gain)
    _check_same_dtype(x, bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx.astype(g.dtype, copy=False), dgain, dbias

    return record_op(_LAYER_NORM, (x, gain, bias), out, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``; output sums to 1 there."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return record_op(_SOFTMAX, (x,), out, backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return record_op(_LOG_SOFTMAX, (x,), out, backward)


@dataclass
class LstmWeights:
    """Gate parameters, rows ordered input, forget, cell, output.

    ``w_x``: [4H, D] input weights, ``w_h``: [4H, H] recurrent weights,
    ``b``: [4H] bias.
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]

    @property
    def inputs(self) -> int:
        return self.w_x.shape[1]

    def check(self) -> None:
        h4, d = self.w_x.shape
        if h4 % 4 != 0 or self.w_h.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(
                f"inconsistent LSTM weight shapes {self.w_x.shape}, "
                f"{self.w_h.shape}, {self.b.shape}"
            )


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: LstmWeights):
    """One gated update; accepts [D]/[H] vectors or [B,D]/[B,H] batches.

    c' = f*c + i*g, h' = o*tanh(c') with sigmoid gates i,f,o and tanh
    candidate g.  Built from primitives so backward comes for free.
    """
    w.check()
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
        h = reshape(h, (1, h.shape[0]))
        c = reshape(c, (1, c.shape[0]))
    H = w.hidden
    if x.shape[1] != w.inputs or h.shape[1] != H or c.shape[1] != H:
        raise ShapeError(
            f"lstm_cell shapes x{x.shape} h{h.shape} c{c.shape} incompatible with "
            f"D={w.inputs}, H={H}"
        )
    gates = add(add(x @ transpose(w.w_x), h @ transpose(w.w_h)), w.b)
    i = sigmoid(gates[:, 0 * H : 1 * H])
    f = sigmoid(gates[:, 1 * H : 2 * H])
    g = tanh(gates[:, 2 * H : 3 * H])
    o = sigmoid(gates[:, 3 * H : 4 * H])
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    if single:
        h_new = reshape(h_new, (H,))
        c_new = reshape(c_new, (H,))
    return h_new, c_new


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) for 2-D x, with w [in, out]."""
    out = x @ w
    if b is not None:
        out = add(out, b)
    return out


def bilstm(seq: Tensor, fwd: LstmWeights, bwd: LstmWeights) -> Tensor:
    """Bidirectional sweep over ``seq [T, B, D]`` -> ``[T, B, 2H]``.

    The backward pass runs on the reversed sequence and its outputs are
    restored to the original order before concatenation.
    """
    T, B, _ = seq.shape
    dtype = seq.dtype

    def run(weights: LstmWeights, order):
        h = Tensor(np.zeros((B, weights.hidden), dtype=dtype))
        c = Tensor(np.zeros((B, weights.hidden), dtype=dtype))
        outs = [None] * T
        for t in order:
            h, c = lstm_cell(seq[t], h, c, weights)
            outs[t] = reshape(h, (1, B, weights.hidden))
        return concat(outs, axis=0)

    out_f = run(fwd, range(T))
    out_b = run(bwd, range(T - 1, -1, -1))
    return concat([out_f, out_b], axis=2)
