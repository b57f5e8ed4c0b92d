"""Matrix inverse and spectral-gap primitives used by the region graph."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ShapeError
from .core import OP_NAMES, Tensor, record_op

log = logging.getLogger(__name__)

_INVERSE = "inverse"
_FIEDLER = "fiedler"
OP_NAMES.update({_INVERSE, _FIEDLER})


def inverse(a: Tensor) -> Tensor:
    """Inverse of a square nonsingular matrix; dA = -A^-T G A^-T."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"inverse expects a square matrix, got {a.shape}")
    out = np.linalg.inv(a.data)

    def backward(g):
        return (-(out.T @ g @ out.T),)

    return record_op(_INVERSE, (a,), out, backward)


def normalized_laplacian(adj: np.ndarray) -> np.ndarray:
    """L = I - D^-1/2 A D^-1/2 with the 0-degree rows left as identity."""
    d = adj.sum(axis=1)
    dinv = np.where(d > 0, d, 1.0) ** -0.5
    dinv[d <= 0] = 0.0
    lap = -adj * dinv[:, None] * dinv[None, :]
    np.fill_diagonal(lap, 1.0)
    return 0.5 * (lap + lap.T)


def fiedler_value(a: Tensor, degenerate_tol: float = 1e-9) -> Tensor:
    """Second-smallest eigenvalue of the normalized Laplacian of ``a``.

    Backward uses first-order eigenvalue perturbation through the
    D^-1/2 A D^-1/2 chain rule; when the eigenvalue is (near) repeated
    the gradient is undefined, so a zero gradient is emitted for that
    step and the event logged.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"fiedler_value expects a square adjacency, got {a.shape}")
    adj = a.data
    n = adj.shape[0]
    lap = normalized_laplacian(adj)
    vals, vecs = np.linalg.eigh(lap)
    lam2 = vals[1]
    v = vecs[:, 1]
    gap_lo = vals[1] - vals[0]
    gap_hi = vals[2] - vals[1] if n > 2 else np.inf
    degenerate = min(gap_lo, gap_hi) < degenerate_tol
    d = adj.sum(axis=1)

    def backward(g):
        if degenerate:
            log.warning("fiedler eigenvalue nearly repeated; emitting zero gradient")
            return (np.zeros_like(adj),)
        dsafe = np.where(d > 0, d, 1.0)
        u = np.where(d > 0, v / np.sqrt(dsafe), 0.0)
        w = adj @ u
        row = np.where(d > 0, v * w * dsafe ** -1.5, 0.0)
        m = row[:, None] - np.outer(u, u)
        return (float(g) * m,)

    return record_op(_FIEDLER, (a,), np.asarray(lam2, dtype=adj.dtype), backward)


def fiedler_pair(adj: np.ndarray, degenerate_tol: float = 1e-9):
    """(lambda_2, v_2, degenerate) of the normalized Laplacian, numpy level.

    The eigenvector sign is fixed so its first component above 1e-12 in
    magnitude is positive.
    """
    n = adj.shape[0]
    vals, vecs = np.linalg.eigh(normalized_laplacian(adj))
    lam2 = float(vals[1])
    v = vecs[:, 1].copy()
    for comp in v:
        if abs(comp) > 1e-12:
            if comp < 0:
                v = -v
            break
    gap_hi = vals[2] - vals[1] if n > 2 else np.inf
    degenerate = min(vals[1] - vals[0], gap_hi) < degenerate_tol
    return lam2, v, degenerate
