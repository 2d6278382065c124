"""Trainable dual-branch inversion solver.

Wiring: a left prior branch sees only the baseline inversion noise and is
conditioned on an embedding of (timestep, condition token); a right branch
sees the concatenated (noise, current latent) and is conditioned on an
embedding of (timestep, clean latent).  Branch outputs are concatenated
into one aggregation block conditioned on the sum of both embeddings, then
a zero-initialized linear projection produces a correction that is added
residually onto the baseline noise.  At initialization the correction is
exactly zero, so the untrained solver reproduces the baseline bit for bit;
extending the right branch appends identity blocks and preserves the
function exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DTYPE, Tensor
from .diffusion import Condition
from .nn import linear_params, sinusoidal_embedding, zero_linear_params
from .rng import RandomSource
from .schedule import NoiseSchedule

INIT_SCALE = 0.02


@dataclass(frozen=True)
class SolverConfig:
    latent_dim: int
    left_blocks: int = 2
    right_blocks: int = 2
    hidden_width: int = 64
    cond_width: int = 32
    temb_width: int = 32
    sin_width: int = 32

    def __post_init__(self):
        if self.left_blocks < 1 or self.right_blocks < 1:
            raise ValueError("branch block counts must be >= 1")
        if min(self.latent_dim, self.hidden_width, self.cond_width, self.temb_width) < 1:
            raise ValueError("widths must be positive")

    @property
    def total_blocks(self) -> int:
        return self.left_blocks + self.right_blocks + 1  # + aggregation


class ConditionedBlock:
    """Residual MLP block with per-feature scale/shift modulation.

    out = x + W2 silu((x W1 + b1) * (1 + scale(c)) + shift(c)) + b2, where
    W2/b2 start at zero so a fresh block is exactly the identity.
    """

    def __init__(self, width: int, cond_width: int, rng: Optional[RandomSource]):
        if rng is None:  # zero-filled slots for checkpoint loading
            zeros = lambda *s: ad.param(np.zeros(s, dtype=DTYPE))
            self.w1, self.b1 = zeros(width, width), zeros(width)
            self.ws, self.bs = zeros(cond_width, width), zeros(width)
            self.wh, self.bh = zeros(cond_width, width), zeros(width)
        else:
            self.w1, self.b1 = linear_params(rng, width, width, scale=INIT_SCALE)
            self.ws, self.bs = linear_params(rng, cond_width, width, scale=INIT_SCALE)
            self.wh, self.bh = linear_params(rng, cond_width, width, scale=INIT_SCALE)
        self.w2, self.b2 = zero_linear_params(width, width)

    def forward(self, x: Tensor, cond_vec: Tensor) -> Tensor:
        h = ad.add_bias(ad.matmul(x, self.w1), self.b1)
        scale = ad.add_bias(ad.matmul(cond_vec, self.ws), self.bs)
        shift = ad.add_bias(ad.matmul(cond_vec, self.wh), self.bh)
        h = ad.add(ad.mul(h, ad.add(scale, 1.0)), shift)
        h = ad.silu(h)
        return ad.add(x, ad.add_bias(ad.matmul(h, self.w2), self.b2))

    def named_params(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{k}", getattr(self, k))
                for k in ("w1", "b1", "ws", "bs", "wh", "bh", "w2", "b2")]


class DualBranchSolver:
    """Dual-branch residual refiner over the baseline inversion noise."""

    def __init__(self, config: SolverConfig, rng: Optional[RandomSource],
                 schedule: Optional[NoiseSchedule] = None):
        self.config = config
        self.schedule = schedule
        self.extension_history: list[int] = []
        c = config
        if rng is None:
            zeros = lambda *s: ad.param(np.zeros(s, dtype=DTYPE))
            self.in_left_w, self.in_left_b = zeros(c.latent_dim, c.hidden_width), zeros(c.hidden_width)
            self.in_right_w, self.in_right_b = zeros(2 * c.latent_dim, c.hidden_width), zeros(c.hidden_width)
            self.t1_w, self.t1_b = zeros(c.sin_width + c.cond_width, c.temb_width), zeros(c.temb_width)
            self.t2_w, self.t2_b = zeros(c.sin_width + c.cond_width, c.temb_width), zeros(c.temb_width)
            self.pool_w, self.pool_b = zeros(c.latent_dim, c.cond_width), zeros(c.cond_width)
        else:
            self.in_left_w, self.in_left_b = linear_params(rng, c.latent_dim, c.hidden_width, INIT_SCALE)
            self.in_right_w, self.in_right_b = linear_params(rng, 2 * c.latent_dim, c.hidden_width, INIT_SCALE)
            self.t1_w, self.t1_b = linear_params(rng, c.sin_width + c.cond_width, c.temb_width, INIT_SCALE)
            self.t2_w, self.t2_b = linear_params(rng, c.sin_width + c.cond_width, c.temb_width, INIT_SCALE)
            self.pool_w, self.pool_b = linear_params(rng, c.latent_dim, c.cond_width, INIT_SCALE)
        self.left = [ConditionedBlock(c.hidden_width, c.temb_width, rng)
                     for _ in range(c.left_blocks)]
        self.right = [ConditionedBlock(c.hidden_width, c.temb_width, rng)
                      for _ in range(c.right_blocks)]
        self.agg = ConditionedBlock(2 * c.hidden_width, c.temb_width, rng)
        self.final_w, self.final_b = zero_linear_params(2 * c.hidden_width, c.latent_dim)
        self._trainable: dict[str, bool] = {name: True for name, _ in self.parameters()}

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [("in_left.w", self.in_left_w), ("in_left.b", self.in_left_b),
               ("in_right.w", self.in_right_w), ("in_right.b", self.in_right_b),
               ("t1.w", self.t1_w), ("t1.b", self.t1_b),
               ("t2.w", self.t2_w), ("t2.b", self.t2_b),
               ("pool.w", self.pool_w), ("pool.b", self.pool_b)]
        for i, blk in enumerate(self.left):
            out.extend(blk.named_params(f"left.{i}"))
        for i, blk in enumerate(self.right):
            out.extend(blk.named_params(f"right.{i}"))
        out.extend(self.agg.named_params("agg"))
        out.extend([("final.w", self.final_w), ("final.b", self.final_b)])
        return out

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.parameters() if self._trainable[n]]

    def param_count(self) -> int:
        return int(sum(p.data.size for _, p in self.parameters()))

    @property
    def n_blocks(self) -> int:
        return len(self.left) + len(self.right) + 1

    # -- embeddings and forward ----------------------------------------------

    def embed_timesteps(self, t, cond_emb: np.ndarray, z0: Tensor) -> tuple[Tensor, Tensor]:
        """(t1, t2): t1 from (t, condition token), t2 from (t, clean latent)."""
        n = z0.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=DTYPE), (n,))
        sin = Tensor(sinusoidal_embedding(t_arr, self.config.sin_width))
        cemb = np.broadcast_to(np.asarray(cond_emb, dtype=DTYPE).reshape(-1, self.config.cond_width),
                               (n, self.config.cond_width))
        t1 = ad.add_bias(ad.matmul(ad.concat_last(sin, Tensor(cemb)), self.t1_w), self.t1_b)
        pooled = ad.add_bias(ad.matmul(z0, self.pool_w), self.pool_b)
        t2 = ad.add_bias(ad.matmul(ad.concat_last(sin, pooled), self.t2_w), self.t2_b)
        return t1, t2

    def forward(self, eps_tilde: Tensor, z_t: Tensor, t, cond_emb: np.ndarray,
                z0: Tensor, return_branches: bool = False):
        """Residual refinement of the baseline noise; all inputs [n, d]."""
        if eps_tilde.shape != z_t.shape or eps_tilde.shape != z0.shape:
            raise ad.DimensionError(
                f"input shapes differ: {eps_tilde.shape}, {z_t.shape}, {z0.shape}")
        if eps_tilde.shape[-1] != self.config.latent_dim:
            raise ad.DimensionError(
                f"latent width {eps_tilde.shape[-1]} != config {self.config.latent_dim}")
        t1, t2 = self.embed_timesteps(t, cond_emb, z0)
        hl = ad.add_bias(ad.matmul(eps_tilde, self.in_left_w), self.in_left_b)
        for blk in self.left:
            hl = blk.forward(hl, t1)
        hr = ad.add_bias(ad.matmul(ad.concat_last(eps_tilde, z_t), self.in_right_w),
                         self.in_right_b)
        for blk in self.right:
            hr = blk.forward(hr, t2)
        h = self.agg.forward(ad.concat_last(hl, hr), ad.add(t1, t2))
        out = ad.add(eps_tilde, ad.add_bias(ad.matmul(h, self.final_w), self.final_b))
        if return_branches:
            return out, hl, hr
        return out


def build_solver(config: SolverConfig, rng: RandomSource,
                 schedule: Optional[NoiseSchedule] = None) -> DualBranchSolver:
    """Fresh solver; deterministic per seed, exact identity over the baseline."""
    return DualBranchSolver(config, rng, schedule)


def embed_timesteps(solver: DualBranchSolver, t: int, cond: Condition,
                    z0: Tensor) -> tuple[Tensor, Tensor]:
    """Single-condition wrapper over the batched embedding pair."""
    if cond.embedding is None:
        raise ValueError("condition has no embedding; resolve it against the backbone")
    z0b = z0 if z0.data.ndim == 2 else Tensor(z0.data[None, :])
    return solver.embed_timesteps(t, cond.embedding, z0b)


def solver_forward(solver: DualBranchSolver, eps_tilde: Tensor, z_t: Tensor, t: int,
                   cond: Condition, z0: Tensor) -> Tensor:
    """Predicted inversion noise for one step (shared condition, any batch)."""
    if cond.embedding is None:
        raise ValueError("condition has no embedding; resolve it against the backbone")
    squeeze = eps_tilde.data.ndim == 1
    wrap = (lambda a: Tensor(a.data[None, :])) if squeeze else (lambda a: a)
    out = solver.forward(wrap(eps_tilde), wrap(z_t), t, cond.embedding, wrap(z0))
    return Tensor(out.data[0]) if squeeze else out


def extend_layers(solver: DualBranchSolver, n_new: int,
                  rng: Optional[RandomSource] = None) -> DualBranchSolver:
    """Append identity-initialized blocks to the right branch, in place.

    Each new block has a zero second affine, so outputs are unchanged for
    every input; existing parameters are not touched.  The new blocks enter
    the trainable set."""
    if n_new < 1:
        raise ValueError("n_new must be >= 1")
    c = solver.config
    if rng is None:
        rng = RandomSource(0x5EED, stream=len(solver.right))
    start = len(solver.right)
    solver.right.extend(ConditionedBlock(c.hidden_width, c.temb_width, rng)
                        for _ in range(n_new))
    solver.extension_history.append(n_new)
    for i in range(start, len(solver.right)):
        for name, _ in solver.right[i].named_params(f"right.{i}"):
            solver._trainable[name] = True
    return solver


def set_trainable(solver: DualBranchSolver, selector: str) -> None:
    """Update the frozen mask: 'all', 'none', or 'new_only' after an extension."""
    if selector == "all":
        for name in solver._trainable:
            solver._trainable[name] = True
        return
    if selector == "none":
        for name in solver._trainable:
            solver._trainable[name] = False
        return
    if selector == "new_only":
        if not solver.extension_history:
            raise ValueError("new_only is only valid after extend_layers")
        original = solver.config.right_blocks
        for name in solver._trainable:
            is_new = name.startswith("right.") and int(name.split(".")[1]) >= original
            solver._trainable[name] = is_new
        return
    raise ValueError(f"unknown selector {selector!r}")
