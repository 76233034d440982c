"""Central finite-difference verification of the backward pass."""

import numpy as np

from .tensor import backward


def _relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(f, xs, eps: float = 1e-5) -> float:
    """Compare the tape gradient of ``f()`` against central differences.

    ``f`` is a closure over the tensors in ``xs`` returning a scalar Tensor;
    every element of every tensor is perturbed by +-eps. Returns the maximum
    relative error across all elements.
    """
    for t in xs:
        t.zero_grad()
    loss = f()
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    worst = 0.0
    for t, g in zip(xs, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            worst = max(worst, _relative_error(gflat[i], numeric))
    return worst


def finite_diff_spot_check(f, xs, n_points: int, rng, eps: float = 1e-5) -> float:
    """Same comparison restricted to ``n_points`` randomly chosen elements
    spread across the tensors in ``xs``."""
    for t in xs:
        t.zero_grad()
    loss = f()
    backward(loss)
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    sizes = np.array([t.data.size for t in xs])
    total = int(sizes.sum())
    chosen = rng.choice(total, size=min(n_points, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat_idx in chosen:
        which = int(np.searchsorted(bounds, flat_idx, side="right"))
        local = int(flat_idx - (bounds[which - 1] if which else 0))
        t = xs[which]
        flat = t.data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + eps
        hi = float(f().data)
        flat[local] = orig - eps
        lo = float(f().data)
        flat[local] = orig
        numeric = (hi - lo) / (2.0 * eps)
        analytic = grads[which].reshape(-1)[local]
        worst = max(worst, _relative_error(analytic, numeric))
    return worst
