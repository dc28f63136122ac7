"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, default_dtype


def rel_error(analytic, numeric, floor=1e-8):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_gradients(fn, inputs, eps=1e-3, max_coords=None, rng=None):
    """Compare tape gradients of scalar ``fn(*tensors)`` against central differences.

    ``inputs`` are arrays; each becomes a float64 leaf that requires grad.
    ``max_coords`` samples that many coordinates per input instead of all.
    Returns the worst elementwise relative error.
    """
    rng = rng or np.random.default_rng(0)
    with default_dtype(np.float64):
        leaves = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for a in inputs]
        with Tape() as tape:
            out = fn(*leaves)
        tape.backward(out)
        worst = 0.0
        for leaf in leaves:
            g = tape.grad(leaf)
            flat = leaf.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            num = np.empty(len(coords))
            for n, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + eps
                hi = float(fn(*leaves).data)
                flat[c] = orig - eps
                lo = float(fn(*leaves).data)
                flat[c] = orig
                num[n] = (hi - lo) / (2 * eps)
            err = rel_error(g.reshape(-1)[coords], num)
            if err.size:
                worst = max(worst, float(err.max()))
    return worst
