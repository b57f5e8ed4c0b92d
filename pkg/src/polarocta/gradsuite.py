"""Finite-difference verification cases for every differentiable primitive.

Each case builds a deterministic scalar-valued tensor function at points
chosen away from kinks, runs ``finite_diff_check`` against the recorded
backward pass, and compares the max relative error to a pinned
tolerance.  ``run_suite`` powers both the ``gradcheck`` CLI subcommand
and the acceptance tests; coverage of the op registry is asserted in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

OP_TOL = 1e-5
SPECTRAL_TOL = 1e-4  # first-order eigenvalue perturbation is noisier
MODEL_TOL_F64 = 1e-3  # full-model gate tolerance at 64-bit


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _rand(rng, shape, dtype, scale=1.0, offset=0.0):
    return Tensor(
        (rng.normal(size=shape) * scale + offset).astype(dtype), requires_grad=True
    )


def _away_from_zero(rng, shape, dtype, margin=0.2):
    """Random values with |x| >= margin, for kink-free relu/maximum points."""
    raw = rng.normal(size=shape)
    raw = np.where(np.abs(raw) < margin, np.sign(raw) * margin + raw, raw)
    return Tensor(raw.astype(dtype), requires_grad=True)


def _case_add(rng, dt):
    a, b = _rand(rng, (3, 4), dt), _rand(rng, (3, 4), dt)
    return lambda a, b: (a + b).sum(), [a, b]


def _case_add_broadcast(rng, dt):
    a, b = _rand(rng, (3, 4), dt), _rand(rng, (4,), dt)
    return lambda a, b: ((a + b) * (a + b)).sum(), [a, b]


def _case_sub(rng, dt):
    a, b = _rand(rng, (2, 5), dt), _rand(rng, (2, 5), dt)
    return lambda a, b: ((a - b) * (a - b)).sum(), [a, b]


def _case_mul(rng, dt):
    a, b = _rand(rng, (4, 3), dt), _rand(rng, (1, 3), dt)
    return lambda a, b: (a * b).sum(), [a, b]


def _case_div(rng, dt):
    a = _rand(rng, (3, 3), dt)
    b = _rand(rng, (3, 3), dt, scale=0.3, offset=2.0)
    return lambda a, b: (a / b).sum(), [a, b]


def _case_neg(rng, dt):
    a = _rand(rng, (6,), dt)
    return lambda a: (-a * a).sum(), [a]


def _case_exp(rng, dt):
    a = _rand(rng, (3, 3), dt, scale=0.5)
    return lambda a: T.exp(a).sum(), [a]


def _case_log(rng, dt):
    a = _rand(rng, (3, 3), dt, scale=0.2, offset=2.0)
    return lambda a: T.log(a).sum(), [a]


def _case_sqrt(rng, dt):
    a = _rand(rng, (5,), dt, scale=0.3, offset=2.0)
    return lambda a: T.sqrt(a).sum(), [a]


def _case_relu(rng, dt):
    a = _away_from_zero(rng, (4, 4), dt)
    return lambda a: (T.relu(a) * T.relu(a)).sum(), [a]


def _case_sigmoid(rng, dt):
    a = _rand(rng, (3, 4), dt)
    return lambda a: (T.sigmoid(a) * T.sigmoid(a)).sum(), [a]


def _case_tanh(rng, dt):
    a = Tensor(np.full((1,), 0.3, dtype=dt), requires_grad=True)
    return lambda a: T.tanh(a).sum(), [a]


def _case_maximum(rng, dt):
    a = _away_from_zero(rng, (3, 4), dt, margin=0.3)
    b = Tensor(np.zeros((3, 4), dtype=dt), requires_grad=True)
    return lambda a, b: (T.maximum(a, b) * T.maximum(a, b)).sum(), [a, b]


def _case_matmul(rng, dt):
    a, b = _rand(rng, (5, 4), dt), _rand(rng, (4, 3), dt)
    return lambda a, b: (T.matmul(a, b) * T.matmul(a, b)).sum(), [a, b]


def _case_transpose(rng, dt):
    a = _rand(rng, (2, 3, 4), dt)
    return lambda a: (T.transpose(a, (1, 2, 0)) * T.transpose(a, (1, 2, 0))).sum(), [a]


def _case_reshape(rng, dt):
    a = _rand(rng, (2, 6), dt)
    return lambda a: (a.reshape(3, 4) * a.reshape(3, 4)).sum(), [a]


def _case_concat(rng, dt):
    a, b = _rand(rng, (2, 3), dt), _rand(rng, (2, 2), dt)
    return lambda a, b: (T.concat([a, b], axis=1) * T.concat([a, b], axis=1)).sum(), [a, b]


def _case_index(rng, dt):
    a = _rand(rng, (4, 5), dt)
    return lambda a: (a[1:3, ::2] * a[1:3, ::2]).sum(), [a]


def _case_sum(rng, dt):
    a = _rand(rng, (3, 4), dt)
    return lambda a: (a.sum(axis=1) * a.sum(axis=1)).sum(), [a]


def _case_mean(rng, dt):
    a = _rand(rng, (3, 4), dt)
    return lambda a: (a.mean(axis=0, keepdims=True) * a.mean(axis=0, keepdims=True)).sum(), [a]


def _case_softmax(rng, dt):
    a = _rand(rng, (3, 5), dt)
    w = Tensor(rng.normal(size=(3, 5)).astype(dt))
    return lambda a: (T.softmax(a, axis=1) * w).sum(), [a]


def _case_log_softmax(rng, dt):
    a = _rand(rng, (2, 6), dt)
    w = Tensor(rng.normal(size=(2, 6)).astype(dt))
    return lambda a: (T.log_softmax(a, axis=1) * w).sum(), [a]


def _case_layer_norm(rng, dt):
    x = _rand(rng, (3, 6), dt, scale=2.0)
    g = _rand(rng, (6,), dt, scale=0.2, offset=1.0)
    b = _rand(rng, (6,), dt, scale=0.2)
    return lambda x, g, b: (T.layer_norm(x, g, b) * T.layer_norm(x, g, b)).sum(), [x, g, b]


def _case_conv3d(rng, dt):
    x = _rand(rng, (2, 3, 4, 4), dt)
    k = _rand(rng, (2, 2, 2, 3, 3), dt, scale=0.5)
    return (
        lambda x, k: (
            T.conv3d(x, k, stride=(1, 2, 1), pad=(1, 1, 1))
            * T.conv3d(x, k, stride=(1, 2, 1), pad=(1, 1, 1))
        ).sum(),
        [x, k],
    )


def _case_inverse(rng, dt):
    base = rng.normal(size=(4, 4))
    well = base @ base.T + 4.0 * np.eye(4)
    a = Tensor(well.astype(dt), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 4)).astype(dt))
    return lambda a: (T.inverse(a) * w).sum(), [a]


def _simple_spectrum_graph(rng, n=6):
    """Random connected weighted graph whose lambda_2 is well separated."""
    for _ in range(50):
        raw = rng.random((n, n)) + 0.1
        adj = 0.5 * (raw + raw.T)
        np.fill_diagonal(adj, 0.0)
        lam = np.linalg.eigvalsh(T.normalized_laplacian(adj))
        if lam[1] - lam[0] > 1e-3 and lam[2] - lam[1] > 1e-3:
            return adj
    raise RuntimeError("could not sample a simple-spectrum graph")


def _case_fiedler(rng, dt):
    adj = _simple_spectrum_graph(rng)
    p = Tensor(adj.astype(dt), requires_grad=True)
    mask = Tensor((1.0 - np.eye(adj.shape[0])).astype(dt))

    def f(p):
        sym = (p + T.transpose(p)) * Tensor(np.asarray(0.5, dtype=dt))
        return T.fiedler_value(sym * mask)

    return f, [p]


def _case_lstm_chain(rng, dt):
    """Three chained cells, gradients through states and weights."""
    d, h = 3, 2
    w = T.LstmWeights(
        _rand(rng, (4 * h, d), dt, scale=0.4),
        _rand(rng, (4 * h, h), dt, scale=0.4),
        _rand(rng, (4 * h,), dt, scale=0.4),
    )
    xs = _rand(rng, (3, d), dt)

    def f(xs, wx, wh, b):
        weights = T.LstmWeights(wx, wh, b)
        hh = Tensor(np.zeros(h, dtype=dt))
        cc = Tensor(np.zeros(h, dtype=dt))
        for t in range(3):
            hh, cc = T.lstm_cell(xs[t], hh, cc, weights)
        return (hh * hh).sum() + cc.sum()

    return f, [xs, w.w_x, w.w_h, w.b]


_CASES: list[tuple[str, str, Callable, float]] = [
    ("add", "add", _case_add, OP_TOL),
    ("add", "add_broadcast", _case_add_broadcast, OP_TOL),
    ("sub", "sub", _case_sub, OP_TOL),
    ("mul", "mul_broadcast", _case_mul, OP_TOL),
    ("div", "div", _case_div, OP_TOL),
    ("neg", "neg", _case_neg, OP_TOL),
    ("exp", "exp", _case_exp, OP_TOL),
    ("log", "log", _case_log, OP_TOL),
    ("sqrt", "sqrt", _case_sqrt, OP_TOL),
    ("relu", "relu_offkink", _case_relu, OP_TOL),
    ("sigmoid", "sigmoid", _case_sigmoid, OP_TOL),
    ("tanh", "tanh_at_0p3", _case_tanh, OP_TOL),
    ("maximum", "maximum", _case_maximum, OP_TOL),
    ("matmul", "matmul", _case_matmul, OP_TOL),
    ("transpose", "transpose", _case_transpose, OP_TOL),
    ("reshape", "reshape", _case_reshape, OP_TOL),
    ("concat", "concat", _case_concat, OP_TOL),
    ("index", "index", _case_index, OP_TOL),
    ("sum", "sum", _case_sum, OP_TOL),
    ("mean", "mean", _case_mean, OP_TOL),
    ("softmax", "softmax", _case_softmax, OP_TOL),
    ("log_softmax", "log_softmax", _case_log_softmax, OP_TOL),
    ("layer_norm", "layer_norm", _case_layer_norm, OP_TOL),
    ("conv3d", "conv3d", _case_conv3d, OP_TOL),
    ("inverse", "inverse", _case_inverse, OP_TOL),
    ("fiedler", "fiedler", _case_fiedler, SPECTRAL_TOL),
    ("lstm", "lstm_chain_x3", _case_lstm_chain, OP_TOL),
]


def covered_ops() -> set[str]:
    return {op for op, _, _, _ in _CASES}


def run_op_checks(precision: str = "f64", seed: int = 7) -> list[CheckResult]:
    dtype = np.float64 if precision == "f64" else np.float32
    tol_scale = 1.0 if precision == "f64" else 200.0
    results = []
    for _, name, builder, tol in _CASES:
        rng = np.random.default_rng(seed)
        f, inputs = builder(rng, dtype)
        err = T.finite_diff_check(f, inputs, h=1e-5 if precision == "f64" else 1e-2)
        results.append(CheckResult(name, err, tol * tol_scale))
    return results


def run_model_check(seed: int = 3) -> CheckResult:
    """End-to-end loss gradient of the micro model vs finite differences.

    The whole-model gate runs at 64-bit; 32-bit rounding noise swamps
    central differences over a computation this deep.
    """
    from .model import micro_model_fd_case

    f, inputs = micro_model_fd_case(np.random.default_rng(seed), np.float64)
    err = T.finite_diff_check(f, inputs, h=1e-5)
    return CheckResult("micro_model_end_to_end", err, MODEL_TOL_F64)


def run_suite(precision: str = "f64", include_model: bool = True) -> list[CheckResult]:
    results = run_op_checks(precision)
    if include_model and precision == "f64":
        results.append(run_model_check())
    return results
