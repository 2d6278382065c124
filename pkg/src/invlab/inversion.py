"""Inversion strategies: one-step baseline, damped fixed-point refinement,
and the trained solver driving a full step-by-step trajectory.

A trajectory stores every latent and every per-step noise so that the
add-noise recurrence can be replayed bit-exactly, which is checked at
construction time.  The per-step quality measure is the consistency
residual: add the candidate noise, denoise back, and measure the squared
defect per element — zero exactly when the candidate equals the backbone's
prediction one level up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .diffusion import (Condition, Denoiser, LatentState, NULL_CONDITION,
                        add_noise_step, denoise_step, predict_noise)
from .schedule import NoiseSchedule
from .solver import DualBranchSolver, solver_forward

METHODS = ("ddim", "fixed_point", "deepinv")


@dataclass
class InversionTrajectory:
    """Latents 0..T and the noises that connect them, bit-replayable."""

    latents: list[np.ndarray]
    noises: list[np.ndarray]
    method_tag: str
    schedule: NoiseSchedule

    def __post_init__(self):
        T = self.schedule.T
        if len(self.latents) != T + 1 or len(self.noises) != T:
            raise ValueError(
                f"trajectory needs {T + 1} latents / {T} noises, got "
                f"{len(self.latents)} / {len(self.noises)}")
        self.validate_replay()

    def validate_replay(self) -> None:
        for k, eps in enumerate(self.noises):
            state = LatentState(Tensor(self.latents[k]), k)
            replay = add_noise_step(self.schedule, state, Tensor(eps))
            if not np.array_equal(replay.array, self.latents[k + 1]):
                raise ValueError(f"trajectory replay mismatch at step {k}")

    @property
    def terminal(self) -> LatentState:
        return LatentState(Tensor(self.latents[-1]), self.schedule.T)

    @property
    def initial(self) -> LatentState:
        return LatentState(Tensor(self.latents[0]), 0)


def ddim_invert_step(model: Denoiser, state: LatentState,
                     cond: Condition = NULL_CONDITION,
                     schedule: NoiseSchedule | None = None) -> Tensor:
    """Baseline inversion noise: reuse the current-level prediction."""
    sched = schedule if schedule is not None else model.schedule
    if state.t >= sched.T:
        raise ValueError("cannot invert from the terminal level")
    return predict_noise(model, state, cond, sched)


def fixed_point_invert_step(model: Denoiser, state: LatentState,
                            cond: Condition = NULL_CONDITION, iters: int = 3,
                            damping: float = 1.0,
                            schedule: NoiseSchedule | None = None) -> Tensor:
    """Damped Picard refinement of the inversion noise.

    eps(0) is the baseline; each sweep re-predicts at the level the
    candidate noise would land on and relaxes toward that prediction.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    sched = schedule if schedule is not None else model.schedule
    eps = ddim_invert_step(model, state, cond, sched)
    for _ in range(iters):
        z_next = add_noise_step(sched, state, eps)
        pred = predict_noise(model, z_next, cond, sched)
        eps = Tensor((1.0 - damping) * eps.data + damping * pred.data)
    return eps


def deepinv_invert(solver: DualBranchSolver, model: Denoiser, z0: LatentState,
                   cond: Condition = NULL_CONDITION,
                   schedule: NoiseSchedule | None = None) -> InversionTrajectory:
    """Solver-driven inversion from the clean latent to the terminal level."""
    sched = schedule if schedule is not None else model.schedule
    if solver.schedule is not None and not solver.schedule.same_as(model.schedule):
        raise ValueError("solver and model were built for different schedules")
    if z0.t != 0:
        raise ValueError(f"inversion starts at t=0, got t={z0.t}")
    rcond = cond if cond.embedding is not None else model.resolve_condition(cond)
    clean = Tensor(z0.array)
    latents = [z0.array]
    noises = []
    state = z0
    for k in range(sched.T):
        eps_tilde = ddim_invert_step(model, state, cond, sched)
        eps_star = solver_forward(solver, eps_tilde, state.z,
                                  int(sched.base_t[k]), rcond, clean)
        state = add_noise_step(sched, state, eps_star)
        noises.append(eps_star.data)
        latents.append(state.array)
    return InversionTrajectory(latents, noises, "deepinv", sched)


def baseline_invert(model: Denoiser, z0: LatentState, method: str,
                    cond: Condition = NULL_CONDITION,
                    schedule: NoiseSchedule | None = None, fp_iters: int = 3,
                    fp_damping: float = 1.0) -> InversionTrajectory:
    """Full trajectory for the ddim or fixed_point strategies."""
    sched = schedule if schedule is not None else model.schedule
    if z0.t != 0:
        raise ValueError(f"inversion starts at t=0, got t={z0.t}")
    latents = [z0.array]
    noises = []
    state = z0
    for _ in range(sched.T):
        if method == "ddim":
            eps = ddim_invert_step(model, state, cond, sched)
        elif method == "fixed_point":
            eps = fixed_point_invert_step(model, state, cond, fp_iters, fp_damping, sched)
        else:
            raise ValueError(f"unknown baseline method {method!r}")
        state = add_noise_step(sched, state, eps)
        noises.append(eps.data)
        latents.append(state.array)
    return InversionTrajectory(latents, noises, method, sched)


def invert(method: str, model: Denoiser, z0: LatentState,
           cond: Condition = NULL_CONDITION, solver: DualBranchSolver | None = None,
           schedule: NoiseSchedule | None = None, fp_iters: int = 3,
           fp_damping: float = 1.0) -> InversionTrajectory:
    """Dispatch over the three compared strategies."""
    if method == "deepinv":
        if solver is None:
            raise ValueError("deepinv inversion needs a solver")
        return deepinv_invert(solver, model, z0, cond, schedule)
    return baseline_invert(model, z0, method, cond, schedule, fp_iters, fp_damping)


def consistency_residual(model: Denoiser, state: LatentState, eps: Tensor,
                         cond: Condition = NULL_CONDITION,
                         schedule: NoiseSchedule | None = None) -> float:
    """Per-element squared defect of the add-noise/denoise round trip."""
    sched = schedule if schedule is not None else model.schedule
    if state.t >= sched.T:
        raise ValueError("residual is defined below the terminal level")
    z_next = add_noise_step(sched, state, eps)
    _, z_back = denoise_step(model, z_next, cond, sched)
    diff = state.array - z_back.array
    return float(np.mean(diff * diff))


def reconstruct(model: Denoiser, source: InversionTrajectory | LatentState,
                cond: Condition = NULL_CONDITION,
                schedule: NoiseSchedule | None = None) -> LatentState:
    """Denoise a terminal latent (or a trajectory's) back down to t=0."""
    if isinstance(source, InversionTrajectory):
        state, sched = source.terminal, source.schedule
    else:
        state = source
        sched = schedule if schedule is not None else model.schedule
        if state.t != sched.T:
            raise ValueError(f"reconstruction starts at t=T={sched.T}, got {state.t}")
    while state.t > 0:
        _, state = denoise_step(model, state, cond, sched)
    return state
