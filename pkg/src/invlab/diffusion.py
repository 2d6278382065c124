"""Toy diffusion backbone: forward process, deterministic stepping, training.

The backbone is an epsilon-prediction MLP with sinusoidal timestep and
learned class-condition embeddings.  Stepping is deterministic: the denoise
step and the add-noise step are exact algebraic mirrors, so feeding the same
noise through both returns the input latent to float precision.  An
analytic denoiser over a single Gaussian provides the closed-form posterior
noise used as a test oracle throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DTYPE, Tensor, suspend_tape
from .nn import linear_params, norm_params, one_hot, sinusoidal_embedding
from .rng import RandomSource
from .schedule import NoiseSchedule

NULL_TOKEN = 0  # row 0 of every condition table is the shared empty token


@dataclass(frozen=True)
class LatentState:
    """A latent plus the schedule level it sits at (0 = clean, T = noise)."""

    z: Tensor
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"timestep must be nonnegative, got {self.t}")

    @property
    def array(self) -> np.ndarray:
        return self.z.data


@dataclass(frozen=True)
class Condition:
    """Conditioning token: the shared empty token or an integer class label."""

    kind: str = "null"  # "null" | "class"
    label: Optional[int] = None
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("null", "class"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.kind == "class" and (self.label is None or self.label < 0):
            raise ValueError("class condition needs a nonnegative label")


NULL_CONDITION = Condition()


def _as_batch(z: np.ndarray) -> tuple[np.ndarray, bool]:
    if z.ndim == 1:
        return z[None, :], True
    return z, False


class BaseDenoiser:
    """Epsilon-prediction MLP: widths d -> h -> h -> h -> d.

    The sinusoidal timestep embedding and the condition embedding are each
    projected and added into the first hidden layer; hidden layers are
    layer-normalized with a silu nonlinearity.  After training the parameter
    set is frozen (requires_grad dropped) and inference never touches a tape.
    """

    def __init__(self, latent_dim: int, schedule: NoiseSchedule, n_classes: int,
                 rng: Optional[RandomSource], hidden: int = 128, temb_width: int = 64,
                 cond_width: int = 32):
        self.latent_dim = latent_dim
        self.schedule = schedule
        self.n_classes = n_classes
        self.hidden = hidden
        self.temb_width = temb_width
        self.cond_width = cond_width
        self.frozen = False
        self.train_log: list[tuple[int, float]] = []

        if rng is None:  # zero-filled slots, overwritten by checkpoint loading
            make = lambda fi, fo: (ad.param(np.zeros((fi, fo), dtype=DTYPE)),
                                   ad.param(np.zeros(fo, dtype=DTYPE)))
            table = ad.param(np.zeros((n_classes + 1, cond_width), dtype=DTYPE))
        else:
            make = lambda fi, fo: linear_params(rng, fi, fo)
            table = ad.param(rng.normal_array((n_classes + 1, cond_width)) * 0.1)
        p: dict[str, Tensor] = {}
        p["w_in"], p["b_in"] = make(latent_dim, hidden)
        p["w_t"], _ = make(temb_width, hidden)
        p["w_c"], _ = make(cond_width, hidden)
        p["cond_table"] = table
        for i in (1, 2, 3):
            p[f"ln{i}_g"], p[f"ln{i}_b"] = norm_params(hidden)
        p["w_h2"], p["b_h2"] = make(hidden, hidden)
        p["w_h3"], p["b_h3"] = make(hidden, hidden)
        p["w_out"], p["b_out"] = make(hidden, latent_dim)
        self.params = p

    def parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def freeze(self) -> None:
        for _, t in self.parameters():
            t.requires_grad = False
        self.frozen = True

    def cond_index(self, cond: Condition) -> int:
        if cond.kind == "null":
            return NULL_TOKEN
        if cond.label >= self.n_classes:
            raise ValueError(f"label {cond.label} out of range for {self.n_classes} classes")
        return cond.label + 1

    def resolve_condition(self, cond: Condition) -> Condition:
        """Attach this model's embedding vector (the frozen token table row)."""
        row = self.params["cond_table"].data[self.cond_index(cond)]
        return Condition(kind=cond.kind, label=cond.label, embedding=row.copy())

    def forward(self, z_t: Tensor, t_base, cond_idx) -> Tensor:
        """Taped forward for training; z_t is [n, d], t/cond per row or shared."""
        n = z_t.shape[0]
        t_arr = np.broadcast_to(np.asarray(t_base, dtype=DTYPE), (n,))
        idx = np.broadcast_to(np.asarray(cond_idx, dtype=np.int64), (n,))
        temb = Tensor(sinusoidal_embedding(t_arr, self.temb_width))
        cemb = ad.matmul(Tensor(one_hot(idx, self.n_classes + 1)), self.params["cond_table"])
        p = self.params
        h = ad.add_bias(ad.matmul(z_t, p["w_in"]), p["b_in"])
        h = ad.add(h, ad.matmul(temb, p["w_t"]))
        h = ad.add(h, ad.matmul(cemb, p["w_c"]))
        h = ad.silu(ad.layer_norm(h, p["ln1_g"], p["ln1_b"]))
        h = ad.add_bias(ad.matmul(h, p["w_h2"]), p["b_h2"])
        h = ad.silu(ad.layer_norm(h, p["ln2_g"], p["ln2_b"]))
        h = ad.add_bias(ad.matmul(h, p["w_h3"]), p["b_h3"])
        h = ad.silu(ad.layer_norm(h, p["ln3_g"], p["ln3_b"]))
        return ad.add_bias(ad.matmul(h, p["w_out"]), p["b_out"])

    def predict_eps(self, z: np.ndarray, t_base, cond_idx=NULL_TOKEN) -> np.ndarray:
        """Tape-free prediction; shape of the output equals the shape of z."""
        batch, squeeze = _as_batch(np.asarray(z, dtype=DTYPE))
        with suspend_tape():
            out = self.forward(Tensor(batch), t_base, cond_idx).data
        return out[0] if squeeze else out


class AnalyticDenoiser:
    """Closed-form posterior-mean denoiser for data ~ N(mu, var0 * I).

    E[eps | z_t] = sqrt(1-ab) * (z_t - sqrt(ab) * mu) / (ab * var0 + 1 - ab),
    the exact minimum-mse epsilon prediction under the schedule.
    """

    def __init__(self, mu, var0: float, schedule: NoiseSchedule, cond_width: int = 32):
        self.mu = np.asarray(mu, dtype=DTYPE)
        self.var0 = float(var0)
        self.schedule = schedule
        self.latent_dim = self.mu.shape[-1]
        self.cond_width = cond_width
        self.frozen = True

    def cond_index(self, cond: Condition) -> int:
        return NULL_TOKEN

    def resolve_condition(self, cond: Condition) -> Condition:
        # conditioning never reaches the closed form; the token is a zero vector
        return Condition(kind=cond.kind, label=cond.label,
                         embedding=np.zeros(self.cond_width, dtype=DTYPE))

    def predict_eps(self, z: np.ndarray, t_base, cond_idx=NULL_TOKEN) -> np.ndarray:
        z = np.asarray(z, dtype=DTYPE)
        t_arr = np.asarray(t_base)
        if t_arr.ndim == 0:
            ab = self._ab_at(int(t_arr))
        else:
            ab = np.array([self._ab_at(int(ti)) for ti in t_arr], dtype=DTYPE)[:, None]
        v = ab * self.var0 + (1.0 - ab)
        return np.sqrt(1.0 - ab) * (z - np.sqrt(ab) * self.mu) / v

    def _ab_at(self, t_base: int) -> float:
        idx = int(np.searchsorted(self.schedule.base_t, t_base))
        if idx > self.schedule.T or self.schedule.base_t[idx] != t_base:
            raise ValueError(f"base timestep {t_base} not on the schedule")
        return float(self.schedule.alpha_bar[idx])


Denoiser = BaseDenoiser | AnalyticDenoiser


# ---------------------------------------------------------------------------
# process steps (all deterministic, all tape-free)
# ---------------------------------------------------------------------------

def _check_level(schedule: NoiseSchedule, t: int) -> None:
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")


def forward_noise(schedule: NoiseSchedule, z0: LatentState, t: int, eps: Tensor) -> LatentState:
    """z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps, straight from the clean latent."""
    if z0.t != 0:
        raise ValueError(f"forward_noise starts at t=0, got t={z0.t}")
    _check_level(schedule, t)
    if eps.shape != z0.z.shape:
        raise ad.DimensionError(f"eps shape {eps.shape} != latent shape {z0.z.shape}")
    ab = schedule.alpha_bar[t]
    z_t = np.sqrt(ab) * z0.array + np.sqrt(1.0 - ab) * eps.data
    return LatentState(Tensor(z_t), t)


def predict_noise(model: Denoiser, state: LatentState, cond: Condition = NULL_CONDITION,
                  schedule: Optional[NoiseSchedule] = None) -> Tensor:
    """The backbone's noise estimate at the state's level."""
    sched = schedule if schedule is not None else model.schedule
    _check_level(sched, state.t)
    t_base = int(sched.base_t[state.t])
    return Tensor(model.predict_eps(state.array, t_base, model.cond_index(cond)))


def add_noise_step(schedule: NoiseSchedule, state: LatentState, eps: Tensor) -> LatentState:
    """One inversion step t -> t+1; the exact mirror of denoise_step."""
    if state.t >= schedule.T:
        raise ValueError(f"cannot add noise above the terminal level T={schedule.T}")
    if eps.shape != state.z.shape:
        raise ad.DimensionError(f"eps shape {eps.shape} != latent shape {state.z.shape}")
    ab0 = schedule.alpha_bar[state.t]
    ab1 = schedule.alpha_bar[state.t + 1]
    z0_hat = (state.array - np.sqrt(1.0 - ab0) * eps.data) / np.sqrt(ab0)
    z_next = np.sqrt(ab1) * z0_hat + np.sqrt(1.0 - ab1) * eps.data
    return LatentState(Tensor(z_next), state.t + 1)


def denoise_step(model: Denoiser, state: LatentState, cond: Condition = NULL_CONDITION,
                 schedule: Optional[NoiseSchedule] = None,
                 eps_override: Optional[Tensor] = None) -> tuple[Tensor, LatentState]:
    """One deterministic denoise step t+1 -> t; returns (eps_bar, z_prev).

    ``eps_override`` pins the prediction, exposing the algebraic mirror
    identity with add_noise_step for tests and residual diagnostics.
    """
    sched = schedule if schedule is not None else model.schedule
    if state.t < 1:
        raise ValueError("denoise_step needs t+1 >= 1")
    _check_level(sched, state.t)
    eps_bar = eps_override if eps_override is not None else predict_noise(model, state, cond, sched)
    ab1 = sched.alpha_bar[state.t]
    ab0 = sched.alpha_bar[state.t - 1]
    z0_hat = (state.array - np.sqrt(1.0 - ab1) * eps_bar.data) / np.sqrt(ab1)
    z_prev = np.sqrt(ab0) * z0_hat + np.sqrt(1.0 - ab0) * eps_bar.data
    return eps_bar, LatentState(Tensor(z_prev), state.t - 1)


# ---------------------------------------------------------------------------
# backbone training
# ---------------------------------------------------------------------------

def train_base(dataset, schedule: NoiseSchedule, cond_mode: str, epochs: int,
               rng: RandomSource, hidden: int | None = None, batch_size: int = 128,
               learning_rate: float = 1e-3) -> BaseDenoiser:
    """Fit the epsilon-prediction backbone and freeze it.

    Per step: sample t uniform over [0, T], sample eps, minimize
    mean_squared(model(z_t, t, w) - eps).  Epoch-mean losses land in
    ``model.train_log``.  Bit-deterministic for a fixed rng seed.
    """
    from .optim import OptimizerState, adam_step

    items = dataset.latents
    labels = dataset.labels
    if items.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if cond_mode not in ("class", "none"):
        raise ValueError(f"unknown cond_mode {cond_mode!r}")
    n, d = items.shape
    hidden = hidden if hidden is not None else (128 if d <= 8 else 256)
    n_classes = dataset.n_classes if cond_mode == "class" else 0

    model = BaseDenoiser(d, schedule, n_classes, rng.split(1), hidden=hidden)
    names, params = zip(*model.parameters())
    state = OptimizerState(params, learning_rate=learning_rate)
    cond_idx = np.zeros(n, dtype=np.int64)
    if cond_mode == "class":
        cond_idx = np.where(labels < 0, 0, labels + 1)

    data_rng = rng.split(2)
    for epoch in range(epochs):
        order = data_rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            z0 = items[sel]
            t = data_rng.integers(0, schedule.T + 1, (sel.shape[0],))
            eps = data_rng.normal_array(z0.shape)
            ab = schedule.alpha_bar[t][:, None]
            z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
            with ad.Tape():
                pred = model.forward(Tensor(z_t), schedule.base_t[t], cond_idx[sel])
                loss = ad.mean_squared(ad.sub(pred, Tensor(eps)))
                grads = ad.backward(loss)
            adam_step(params, [grads.of(p) for p in params], state)
            losses.append(loss.item())
        model.train_log.append((epoch, float(np.mean(losses))))
    model.freeze()
    return model
