"""Bias-corrected Adam over named parameter collections."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import DTYPE, DimensionError, Tensor


class OptimizerState:
    """First/second-moment accumulators plus step count for one parameter set."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = [np.zeros(p.shape, dtype=DTYPE) for p in params]
        self.v = [np.zeros(p.shape, dtype=DTYPE) for p in params]


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: OptimizerState) -> tuple[Sequence[Tensor], OptimizerState]:
    """One in-place Adam update; the only sanctioned mutation of tensors."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params/grads/state lengths differ")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != p.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.shape}")
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = np.sqrt(v / c2)
        update += state.epsilon
        np.divide(m / c1, update, out=update)
        p.data.flags.writeable = True
        p.data -= state.learning_rate * update
        p.data.flags.writeable = False
    return params, state
