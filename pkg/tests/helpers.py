"""Shared numerical oracles for the test suite."""

import numpy as np
import torch


def central_difference(fn, x, step=1e-4):
    """Finite-difference gradient of a scalar function of a float64 array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        upper = fn(x)
        xf[i] = orig - step
        lower = fn(x)
        xf[i] = orig
        flat[i] = (upper - lower) / (2 * step)
    return grad


def check_gradient(loss_fn, x0, rel_tol=1e-3):
    """Assert analytic and central-difference gradients agree."""
    x = torch.from_numpy(x0.copy()).requires_grad_(True)
    loss_fn(x).backward()
    analytic = x.grad.numpy()
    numeric = central_difference(lambda arr: float(loss_fn(torch.from_numpy(arr))), x0.copy())
    scale = np.maximum(np.abs(numeric), 1e-6)
    worst = np.max(np.abs(analytic - numeric) / scale)
    assert worst < rel_tol, f"gradient mismatch: relative error {worst:.2e}"
    return worst


def mann_whitney_auc(scores, mask):
    """Brute-force pairwise ranking probability (ties count one half)."""
    pos = scores[mask]
    neg = scores[~mask]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (pos.size * neg.size)
