"""Small shared pieces for the toy networks: inits and embeddings."""

from __future__ import annotations

import numpy as np

from .autodiff import DTYPE, Tensor, param
from .rng import RandomSource


def linear_params(rng: RandomSource, fan_in: int, fan_out: int,
                  scale: float | None = None) -> tuple[Tensor, Tensor]:
    """Weight/bias pair; default scale is 1/sqrt(fan_in), bias starts at zero."""
    s = (1.0 / np.sqrt(fan_in)) if scale is None else scale
    w = param(rng.normal_array((fan_in, fan_out)) * s)
    b = param(np.zeros(fan_out, dtype=DTYPE))
    return w, b


def zero_linear_params(fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    w = param(np.zeros((fan_in, fan_out), dtype=DTYPE))
    b = param(np.zeros(fan_out, dtype=DTYPE))
    return w, b


def norm_params(width: int) -> tuple[Tensor, Tensor]:
    return param(np.ones(width, dtype=DTYPE)), param(np.zeros(width, dtype=DTYPE))


def sinusoidal_embedding(t, width: int) -> np.ndarray:
    """Standard sin/cos positional encoding of integer timesteps.

    Rows are [sin(t*f_0).. sin(t*f_{h-1}), cos(t*f_0).. cos(t*f_{h-1})] with
    f_i = 10000^(-i/h); at t=0 every sine is 0 and every cosine is 1.
    Integer timesteps are served from a cached table.
    """
    t_arr = np.atleast_1d(np.asarray(t))
    if np.issubdtype(t_arr.dtype, np.integer) and t_arr.size and t_arr.min() >= 0:
        return _sinusoidal_table(width, int(t_arr.max()))[t_arr]
    t_arr = t_arr.astype(DTYPE)
    if np.all(t_arr == np.floor(t_arr)) and t_arr.size and t_arr.min() >= 0:
        return _sinusoidal_table(width, int(t_arr.max()))[t_arr.astype(np.int64)]
    return _sinusoidal_raw(t_arr, width)


def _sinusoidal_raw(t_arr: np.ndarray, width: int) -> np.ndarray:
    half = width // 2
    freqs = 10000.0 ** (-np.arange(half, dtype=DTYPE) / half)
    angles = t_arr[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    if width % 2 == 1:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1), dtype=DTYPE)], axis=-1)
    return emb


_SIN_TABLES: dict[int, np.ndarray] = {}


def _sinusoidal_table(width: int, max_t: int) -> np.ndarray:
    table = _SIN_TABLES.get(width)
    if table is None or table.shape[0] <= max_t:
        table = _sinusoidal_raw(np.arange(max(max_t + 1, 64), dtype=DTYPE), width)
        table.flags.writeable = False
        _SIN_TABLES[width] = table
    return table


def one_hot(idx, n: int) -> np.ndarray:
    idx_arr = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    out = np.zeros((idx_arr.shape[0], n), dtype=DTYPE)
    out[np.arange(idx_arr.shape[0]), idx_arr] = 1.0
    return out
