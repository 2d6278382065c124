"""Shared test oracles: finite differences and small builders."""

from __future__ import annotations

import numpy as np

import invlab.autodiff as ad
from invlab.autodiff import Tensor

FD_STEP = 1e-4
FD_RTOL = 1e-3


def finite_difference(fn, arrays: list[np.ndarray], which: int,
                      step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar fn w.r.t. arrays[which]."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[which])
    flat = grad.reshape(-1)
    target = base[which].reshape(-1)
    for i in range(target.size):
        orig = target[i]
        target[i] = orig + step
        hi = fn(*base)
        target[i] = orig - step
        lo = fn(*base)
        target[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray,
                      rtol: float = FD_RTOL, atol: float = 1e-6) -> None:
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def taped_scalar(fn, tensors: list[Tensor]):
    """Run fn under a fresh tape, return (loss, gradient map)."""
    with ad.Tape():
        loss = fn(*tensors)
        grads = ad.backward(loss)
    return loss, grads
