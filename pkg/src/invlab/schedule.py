"""Cumulative-signal noise schedules.

Convention: t = 0 is the clean latent, t = T is maximal noise, so inversion
increases t.  alpha_bar holds the cumulative signal coefficient at every
level; the terminal value is floored at 0.01 to keep the add-noise step's
division well-posed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DTYPE

ALPHA_BAR_FLOOR = 0.01


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_bar over levels 0..T plus the base-timestep index of each level.

    ``base_t`` is the identity for a directly constructed schedule; for a
    subsampled schedule it maps each coarse level back to the level of the
    parent schedule, which is what timestep-conditioned models consume.
    """

    T: int
    alpha_bar: np.ndarray
    kind: str
    base_t: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.base_t is None:
            object.__setattr__(self, "base_t", np.arange(self.T + 1, dtype=np.int64))
        ab = np.asarray(self.alpha_bar, dtype=DTYPE)
        ab.flags.writeable = False
        object.__setattr__(self, "alpha_bar", ab)
        self.validate()

    def validate(self) -> None:
        ab = self.alpha_bar
        if self.T < 1 or ab.shape != (self.T + 1,):
            raise ValueError(f"schedule needs T>=1 levels, got T={self.T}, {ab.shape}")
        if ab[0] != 1.0:
            raise ValueError(f"alpha_bar[0] must be 1, got {ab[0]}")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] > ALPHA_BAR_FLOOR + 1e-12 or np.any(ab <= 0):
            raise ValueError("alpha_bar must stay in (0, 1] and end at <= 0.01")

    def subsample(self, steps: int) -> "NoiseSchedule":
        """Coarse schedule hitting ``steps`` evenly spaced levels of this one."""
        if not 1 <= steps <= self.T:
            raise ValueError(f"subsample steps must be in [1, {self.T}], got {steps}")
        idx = np.round(np.linspace(0, self.T, steps + 1)).astype(np.int64)
        if np.any(np.diff(idx) <= 0):
            raise ValueError(f"subsample to {steps} steps produced duplicate levels")
        return NoiseSchedule(T=steps, alpha_bar=self.alpha_bar[idx],
                             kind=f"{self.kind}/sub{steps}", base_t=self.base_t[idx])

    def same_as(self, other: "NoiseSchedule") -> bool:
        return self.T == other.T and np.array_equal(self.alpha_bar, other.alpha_bar)


def make_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    """Monotone schedule from alpha_bar=1 down to the 0.01 floor.

    linear: alpha_bar(t) = 1 + (0.01 - 1) * t / T
    cosine: alpha_bar(t) = 0.01 + 0.99 * cos(pi * t / (2 T))^2
    """
    if T < 1:
        raise ValueError(f"schedule needs T >= 1, got {T}")
    t = np.arange(T + 1, dtype=DTYPE)
    if kind == "linear":
        ab = 1.0 + (ALPHA_BAR_FLOOR - 1.0) * t / T
    elif kind == "cosine":
        ab = ALPHA_BAR_FLOOR + (1.0 - ALPHA_BAR_FLOOR) * np.cos(np.pi * t / (2 * T)) ** 2
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(T=T, alpha_bar=ab, kind=kind)
