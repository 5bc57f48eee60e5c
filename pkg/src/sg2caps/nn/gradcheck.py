"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .engine import Parameter, Tensor, backward, no_grad


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               min_magnitude: float = 0.0, report: dict | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` recomputes a scalar from the current parameter values. With
    ``max_entries`` only that many entries per tensor (drawn with ``rng``) are
    probed; otherwise every entry is.

    Entries whose analytic gradient is below ``min_magnitude`` are drawn only
    after the larger ones and are scored by absolute error instead: there the
    difference quotient is dominated by rounding of ``fn`` (about
    ``ulp(fn) / eps``). Pass a ``report`` dict to receive the probe counts and
    the worst absolute error on such entries.
    """
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(fn())
    analytic = [p.grad.copy() for p in params]
    worst = worst_small = 0.0
    n_probed = n_small = 0
    rng = rng or np.random.default_rng(0)
    for p, a in zip(params, analytic):
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            big = np.abs(a.reshape(-1)) >= min_magnitude
            order = np.concatenate([rng.permutation(np.flatnonzero(big)),
                                    rng.permutation(np.flatnonzero(~big))])
            idx = order[:max_entries]
        for k in idx:
            orig = flat[k]
            with no_grad():
                flat[k] = orig + eps
                fp = fn().item()
                flat[k] = orig - eps
                fm = fn().item()
            flat[k] = orig
            num = (fp - fm) / (2.0 * eps)
            ak = a.reshape(-1)[k]
            n_probed += 1
            if abs(ak) < min_magnitude:
                n_small += 1
                worst_small = max(worst_small, abs(float(ak - num)))
            else:
                worst = max(worst, float(relative_error(ak, num)))
    for p in params:
        p.grad[...] = 0.0
    if report is not None:
        report.update(probed=n_probed, below_floor=n_small, max_abs_error_below_floor=worst_small)
    return worst
