"""Deterministic random source: PCG64 uniforms, Box-Muller normals.

The generator algorithm is numpy's PCG64 (O'Neill PCG XSL-RR 128/64); its
stream is stable across platforms and numpy releases.  Standard normals are
produced by the classic Box-Muller transform over consecutive uniform pairs
rather than numpy's ziggurat, so the draw sequence is pinned to a documented
closed form.  The algorithm tag below is written into every checkpoint.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DTYPE, Tensor

PRNG_TAG = "pcg64+box-muller"


def _mix(seed: int, stream: int) -> np.random.SeedSequence:
    # distinct named streams per purpose, all reproducible from one master seed
    return np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                  spawn_key=(int(stream),))


class RandomSource:
    """Seeded PCG64 stream; identical seed gives a bit-identical sequence."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.PCG64(_mix(seed, stream)))

    def split(self, stream: int) -> "RandomSource":
        """Independent child stream keyed by a small integer."""
        return RandomSource(self.seed, self.stream * 1024 + 1 + int(stream))

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape, dtype=np.float64)

    def normal_array(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller: z = sqrt(-2 ln u1) * cos/sin(2 pi u2)."""
        n = int(np.prod(shape)) if shape != () else 1
        pairs = (n + 1) // 2
        u = self._gen.random(size=(2, pairs), dtype=np.float64)
        u1 = 1.0 - u[0]  # in (0, 1]; keeps the log finite
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape).astype(DTYPE, copy=False) if shape != () else z[0]

    def normal(self, shape=()) -> Tensor:
        return Tensor(self.normal_array(shape))

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def normal(rng: RandomSource, shape=()) -> Tensor:
    """Tensor of i.i.d. standard normals, deterministic per seed."""
    return rng.normal(shape)
