"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .core import DiffRecord, Tensor, backward


def finite_diff_check(f, inputs, h: float = 1e-5) -> float:
    """Max relative error between recorded and central-difference gradients.

    ``f`` must be a deterministic tensor function of ``inputs`` returning a
    scalar; behaviour is undefined otherwise.  The error for coordinate i is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|); the max over all coordinates
    of all requires_grad inputs is returned.  At non-differentiable points
    (e.g. a relu kink) the reported error is large by construction; such
    points should be excluded from assertion sets rather than tolerated.
    """
    inputs = list(inputs)
    checked = [t for t in inputs if t.requires_grad]
    if not checked:
        raise UsageError("finite_diff_check needs at least one requires_grad input")
    with DiffRecord() as rec:
        loss = f(*inputs)
    backward(loss, rec)
    analytic = [t.grad.copy() for t in checked]

    worst = 0.0
    for t, g_ad in zip(checked, analytic):
        flat = t.data.reshape(-1)
        g_fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            g_fd[i] = (fp - fm) / (2.0 * h)
        if not (np.all(np.isfinite(g_ad)) and np.all(np.isfinite(g_fd))):
            return float("inf")  # a non-finite gradient can never pass
        num = np.abs(g_ad.reshape(-1) - g_fd)
        den = np.maximum(1e-8, np.abs(g_ad.reshape(-1)) + np.abs(g_fd))
        worst = max(worst, float((num / den).max()))
    return worst
