"""Self-supervised solver training.

Targets come from the frozen backbone itself: step the solver's own noise
prediction up one level and ask the backbone what noise it sees there (the
reference noise).  For high-noise levels the reference is blended with the
solver's prediction into a fused pseudo-label.  Training walks four outer
iterations over five timestep configurations with two optimization rounds
each, extends the right branch before the third iteration (training only
the new blocks there), and fine-tunes everything at 10% learning rate with
the stabilized loss in the fourth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DTYPE, Tensor
from .diffusion import (BaseDenoiser, Condition, Denoiser, LatentState,
                        NULL_CONDITION, NULL_TOKEN, add_noise_step, predict_noise)
from .inversion import ddim_invert_step
from .optim import OptimizerState, adam_step
from .rng import RandomSource
from .schedule import NoiseSchedule
from .solver import DualBranchSolver, extend_layers, set_trainable, solver_forward

LOG_HEADER = "iteration,config,round,epoch,loss_kind,loss_value"


@dataclass(frozen=True)
class StageSchedule:
    """Complete training plan; all defaults follow the reference recipe."""

    outer_iterations: int = 4
    k_per_iteration: tuple[float, ...] = (0.8, 0.6, 0.5, 0.5)
    timestep_configs: tuple[int, ...] = (1, 5, 10, 25, 50)
    epochs_per_config: tuple[int, ...] = (300, 300, 250, 200, 100)
    epoch_scale: float = 0.05
    alpha: float = 0.5
    lambda1: float = 0.5
    lambda2: float = 0.5
    learning_rate: float = 1e-3
    lr_finetune_factor: float = 0.1
    batch_size: int = 1024
    extend_blocks: int = 4
    extend_before_iteration: int = 3

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("need at least one outer iteration")
        if len(self.k_per_iteration) != self.outer_iterations:
            raise ValueError("k_per_iteration length must equal outer_iterations")
        if len(self.epochs_per_config) != len(self.timestep_configs):
            raise ValueError("epochs_per_config length must match timestep_configs")
        if any(not 0.0 < k <= 1.0 for k in self.k_per_iteration):
            raise ValueError("every k must lie in (0, 1]")
        if any(t <= 0 for t in self.timestep_configs) or \
                any(b <= a for a, b in zip(self.timestep_configs, self.timestep_configs[1:])):
            raise ValueError("timestep configs must be positive and strictly increasing")
        if any(e <= 0 for e in self.epochs_per_config):
            raise ValueError("epoch budgets must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("fusion weights must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epoch_scale < 0:
            raise ValueError("epoch_scale must be nonnegative")

    def scaled_epochs(self, config_index: int) -> int:
        return int(self.epochs_per_config[config_index] * self.epoch_scale)

    def round_epochs(self, config_index: int, rnd: int) -> int:
        """The stage budget covers both optimization rounds: round 1 takes the
        ceiling half, round 2 the floor half."""
        total = self.scaled_epochs(config_index)
        return (total + 1) // 2 if rnd == 1 else total // 2


def in_fusion_window(t: int, T: int, k: float) -> bool:
    """Eq-style window: fused exactly when (1-k)*T < t <= T (real-valued left edge)."""
    return (1.0 - k) * T < t <= T


def fuse_pseudo_noise(eps_bar, eps_star, t: int, T: int, k: float,
                      lambda1: float, lambda2: float):
    """Windowed linear blend of reference and solver noise.

    Inside the high-noise window the pseudo-label is lambda1*eps_bar +
    lambda2*eps_star; outside it the reference noise passes through
    unchanged.  Accepts Tensors or arrays; returns the same kind.
    """
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    bar = eps_bar.data if isinstance(eps_bar, Tensor) else np.asarray(eps_bar, dtype=DTYPE)
    star = eps_star.data if isinstance(eps_star, Tensor) else np.asarray(eps_star, dtype=DTYPE)
    fused = lambda1 * bar + lambda2 * star if in_fusion_window(t, T, k) else bar.copy()
    return Tensor(fused) if isinstance(eps_bar, Tensor) else fused


def loss_self(eps_star: Tensor, eps_bar: Tensor) -> Tensor:
    """Mean squared gap to the reference noise; the target is a constant."""
    return ad.mean_squared(ad.sub(eps_star, eps_bar.detach()))


def loss_hyb(eps_star: Tensor, eps_fused: Tensor) -> Tensor:
    """As loss_self but against the fused pseudo-label (also constant)."""
    return ad.mean_squared(ad.sub(eps_star, eps_fused.detach()))


def loss_stable(l_self: Tensor, l_hyb: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return ad.add(ad.mul(l_self, alpha), ad.mul(l_hyb, 1.0 - alpha))


def reference_noise(model: Denoiser, solver: DualBranchSolver, state: LatentState,
                    cond: Condition = NULL_CONDITION, z0: Tensor | None = None,
                    schedule: NoiseSchedule | None = None) -> tuple[Tensor, Tensor]:
    """(eps_star, eps_bar) for one step: the solver's prediction and the
    backbone's answer one level above the latent that prediction produces.

    The backbone is frozen; eps_bar is returned as a constant."""
    sched = schedule if schedule is not None else model.schedule
    if state.t >= sched.T:
        raise ValueError("reference noise is defined below the terminal level")
    rcond = cond if cond.embedding is not None else model.resolve_condition(cond)
    z0 = z0 if z0 is not None else state.z
    eps_tilde = ddim_invert_step(model, state, cond, sched)
    eps_star = solver_forward(solver, eps_tilde, state.z, int(sched.base_t[state.t]),
                              rcond, z0)
    z_next = add_noise_step(sched, state, Tensor(eps_star.data))
    eps_bar = predict_noise(model, z_next, cond, sched)
    return eps_star, eps_bar.detach()


@dataclass
class PseudoSample:
    """One training record; targets are constants for the optimizer."""

    z_t: Tensor
    t: int
    target_noise: Tensor
    provenance: str  # "fused" | "plain"
    eps_tilde: Tensor
    eps_star: Tensor
    eps_bar: Tensor
    z0: Tensor


@dataclass
class PseudoDataset:
    """Columnar pseudo-label set over (item, step) pairs of one configuration."""

    z_t: np.ndarray        # [N, d]
    sub_t: np.ndarray      # [N] step-start index within the active configuration
    base_t: np.ndarray     # [N] matching base-schedule timestep
    eps_tilde: np.ndarray  # [N, d]
    eps_star: np.ndarray   # [N, d]
    eps_bar: np.ndarray    # [N, d]
    z0: np.ndarray         # [N, d]
    fused: np.ndarray      # [N] bool provenance mask
    target: np.ndarray     # [N, d] fused-or-plain training target
    config_steps: int
    k: float

    def __len__(self) -> int:
        return self.z_t.shape[0]

    def sample(self, i: int) -> PseudoSample:
        return PseudoSample(
            z_t=Tensor(self.z_t[i]), t=int(self.sub_t[i]),
            target_noise=Tensor(self.target[i]),
            provenance="fused" if self.fused[i] else "plain",
            eps_tilde=Tensor(self.eps_tilde[i]), eps_star=Tensor(self.eps_star[i]),
            eps_bar=Tensor(self.eps_bar[i]), z0=Tensor(self.z0[i]))


def build_pseudo_dataset(model: Denoiser, solver: DualBranchSolver, dataset,
                         k: float, lambda1: float, lambda2: float,
                         schedule: NoiseSchedule,
                         cond: Condition = NULL_CONDITION) -> PseudoDataset:
    """Walk the solver's own inversion trajectory for every item and collect
    (input, reference, fused-target) records for each step of the schedule.

    Regenerated per epoch so the labels track the current solver.  The
    backbone call that closes step j doubles as the baseline noise of step
    j+1, so the sweep costs one backbone call per level."""
    z0 = np.asarray(dataset.latents, dtype=DTYPE)
    n, d = z0.shape
    Tc = schedule.T
    cond_idx = model.cond_index(cond)
    cond_emb = model.resolve_condition(cond).embedding
    z = z0
    eps_tilde = model.predict_eps(z, int(schedule.base_t[0]), cond_idx)
    cols = {name: [] for name in ("z_t", "eps_tilde", "eps_star", "eps_bar")}
    z0_t = Tensor(z0)
    for j in range(Tc):
        eps_star = solver.forward(Tensor(eps_tilde), Tensor(z), int(schedule.base_t[j]),
                                  cond_emb, z0_t).data
        z_next = add_noise_step(schedule, LatentState(Tensor(z), j), Tensor(eps_star)).array
        eps_bar = model.predict_eps(z_next, int(schedule.base_t[j + 1]), cond_idx)
        cols["z_t"].append(z)
        cols["eps_tilde"].append(eps_tilde)
        cols["eps_star"].append(eps_star)
        cols["eps_bar"].append(eps_bar)
        z, eps_tilde = z_next, eps_bar
    sub_t = np.repeat(np.arange(Tc, dtype=np.int64), n)
    base_t = np.repeat(schedule.base_t[:-1], n)
    stack = {name: np.concatenate(v, axis=0) for name, v in cols.items()}
    fused = np.array([in_fusion_window(int(t), Tc, k) for t in sub_t])
    target = np.where(fused[:, None],
                      lambda1 * stack["eps_bar"] + lambda2 * stack["eps_star"],
                      stack["eps_bar"])
    return PseudoDataset(z_t=stack["z_t"], sub_t=sub_t, base_t=base_t,
                         eps_tilde=stack["eps_tilde"], eps_star=stack["eps_star"],
                         eps_bar=stack["eps_bar"], z0=np.tile(z0, (Tc, 1)),
                         fused=fused, target=target, config_steps=Tc, k=k)


@dataclass
class TrainingLog:
    rows: list[tuple[int, int, int, int, str, float]] = field(default_factory=list)

    def add(self, iteration: int, config: int, rnd: int, epoch: int,
            kind: str, value: float) -> None:
        self.rows.append((iteration, config, rnd, epoch, kind, value))

    def to_csv(self) -> str:
        lines = [LOG_HEADER]
        lines += [f"{it},{cf},{rd},{ep},{kind},{val:.10e}"
                  for it, cf, rd, ep, kind, val in self.rows]
        return "\n".join(lines) + "\n"


def train_solver(model: Denoiser, solver: DualBranchSolver, dataset,
                 stages: StageSchedule, rng: RandomSource,
                 cond: Condition = NULL_CONDITION,
                 stage_callback=None) -> tuple[DualBranchSolver, TrainingLog]:
    """Run the full staged regime; see the module docstring for the shape.

    The backbone must be frozen.  Per epoch the pseudo-dataset is rebuilt
    with the current solver, then minibatches minimize the round's loss.
    Conditioning uses the empty token throughout (the label-free setting the
    solver is evaluated in).  ``stage_callback(event)`` fires at every
    (iteration, config, round) boundary with the live solver for inspection."""
    if not getattr(model, "frozen", False):
        raise ValueError("backbone must be frozen before solver training")
    log = TrainingLog()
    if all(stages.scaled_epochs(ci) == 0 for ci in range(len(stages.timestep_configs))):
        return solver, log  # zero budget: no training, no structural changes
    shuffle_rng = rng.split(3)
    cond_emb = model.resolve_condition(cond).embedding
    for it in range(1, stages.outer_iterations + 1):
        k = stages.k_per_iteration[it - 1]
        if it == stages.extend_before_iteration:
            extend_layers(solver, stages.extend_blocks, rng.split(4))
            set_trainable(solver, "new_only")
        final_it = it == stages.outer_iterations
        if final_it:
            set_trainable(solver, "all")
        lr = stages.learning_rate * (stages.lr_finetune_factor if final_it else 1.0)
        for ci, steps in enumerate(stages.timestep_configs):
            sub = model.schedule.subsample(steps)
            for rnd in (1, 2):
                kind = "stable" if final_it else ("self" if rnd == 1 else "hyb")
                if stage_callback is not None:
                    stage_callback({"iteration": it, "config": steps, "round": rnd,
                                    "loss_kind": kind, "learning_rate": lr,
                                    "solver": solver})
                params = [p for _, p in solver.trainable_parameters()]
                opt = OptimizerState(params, learning_rate=lr)
                for ep in range(stages.round_epochs(ci, rnd)):
                    pseudo = build_pseudo_dataset(model, solver, dataset, k,
                                                  stages.lambda1, stages.lambda2,
                                                  sub, cond)
                    mean_loss = _run_epoch(solver, pseudo, kind, stages, params,
                                           opt, cond_emb, shuffle_rng)
                    log.add(it, steps, rnd, ep, kind, mean_loss)
    return solver, log


def _run_epoch(solver: DualBranchSolver, pseudo: PseudoDataset, kind: str,
               stages: StageSchedule, params, opt: OptimizerState,
               cond_emb: np.ndarray, shuffle_rng: RandomSource) -> float:
    order = shuffle_rng.permutation(len(pseudo))
    losses = []
    for start in range(0, len(pseudo), stages.batch_size):
        sel = order[start:start + stages.batch_size]
        with ad.Tape():
            pred = solver.forward(Tensor(pseudo.eps_tilde[sel]), Tensor(pseudo.z_t[sel]),
                                  pseudo.base_t[sel], cond_emb, Tensor(pseudo.z0[sel]))
            if kind == "self":
                loss = loss_self(pred, Tensor(pseudo.eps_bar[sel]))
            elif kind == "hyb":
                loss = loss_hyb(pred, Tensor(pseudo.target[sel]))
            else:
                loss = loss_stable(loss_self(pred, Tensor(pseudo.eps_bar[sel])),
                                   loss_hyb(pred, Tensor(pseudo.target[sel])),
                                   stages.alpha)
            grads = ad.backward(loss)
        adam_step(params, [grads.of(p) for p in params], opt)
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else math.nan
