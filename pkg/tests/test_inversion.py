"""Inversion strategies: baseline, fixed-point refinement, solver-driven."""

import numpy as np
import pytest

from invlab.autodiff import Tensor
from invlab.diffusion import (AnalyticDenoiser, LatentState, add_noise_step,
                              predict_noise)
from invlab.inversion import (InversionTrajectory, baseline_invert,
                              consistency_residual, ddim_invert_step, deepinv_invert,
                              fixed_point_invert_step, invert, reconstruct)
from invlab.rng import RandomSource
from invlab.schedule import make_schedule
from invlab.solver import SolverConfig, build_solver


class ConstantDenoiser:
    """Test double whose prediction is pinned to a fixed array."""

    def __init__(self, eps: np.ndarray, schedule):
        self.eps = np.asarray(eps)
        self.schedule = schedule
        self.frozen = True

    def cond_index(self, cond):
        return 0

    def resolve_condition(self, cond):
        return cond

    def predict_eps(self, z, t_base, cond_idx=0):
        return np.broadcast_to(self.eps, np.asarray(z).shape).copy()


def closed_form_fixed_point(z, t, schedule, mu, var0):
    # eps = s1 * (c1 z + c2 eps - sqrt(ab1) mu) has the affine solution below
    ab0, ab1 = schedule.alpha_bar[t], schedule.alpha_bar[t + 1]
    v1 = ab1 * var0 + (1 - ab1)
    s1 = np.sqrt(1 - ab1) / v1
    c1 = np.sqrt(ab1 / ab0)
    c2 = np.sqrt(1 - ab1) - np.sqrt(ab1 * (1 - ab0) / ab0)
    A = s1 * (c1 * np.asarray(z) - np.sqrt(ab1) * np.asarray(mu))
    B = s1 * c2
    return A / (1.0 - B)


@pytest.fixture()
def analytic_setup():
    sched = make_schedule(50, "linear")
    mu = np.array([0.4, -0.7])
    sigma0 = 0.3
    model = AnalyticDenoiser(mu, sigma0 ** 2, sched)
    rng = RandomSource(77)
    z0 = mu + sigma0 * rng.normal_array((8, 2))
    return sched, mu, sigma0, model, z0


# ---------------------------------------------------------------------------
# ddim baseline
# ---------------------------------------------------------------------------

def test_ddim_step_shape_and_terminal_guard(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    eps = ddim_invert_step(model, LatentState(Tensor(z0), 10))
    assert eps.shape == z0.shape
    with pytest.raises(ValueError):
        ddim_invert_step(model, LatentState(Tensor(z0), sched.T))


def test_exact_score_roundtrip_tight_gaussian():
    # self-consistent regime: tight Gaussian posterior, T=50
    sched = make_schedule(50, "linear")
    mu = np.array([0.4, -0.7])
    model = AnalyticDenoiser(mu, (1e-5) ** 2, sched)
    z0 = mu + 1e-5 * RandomSource(5).normal_array((16, 2))
    traj = baseline_invert(model, LatentState(Tensor(z0), 0), "ddim")
    recon = reconstruct(model, traj)
    assert np.max(np.abs(recon.array - z0)) < 1e-4
    assert float(np.mean((recon.array - z0) ** 2)) < 1e-6


def test_reconstruct_deterministic_and_shape(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    traj = baseline_invert(model, LatentState(Tensor(z0), 0), "ddim")
    a = reconstruct(model, traj)
    b = reconstruct(model, traj.terminal)
    assert a.array.shape == z0.shape
    assert np.array_equal(a.array, b.array)
    assert a.t == 0


# ---------------------------------------------------------------------------
# fixed-point refinement
# ---------------------------------------------------------------------------

def test_fixed_point_preconditions(analytic_setup):
    _, _, _, model, z0 = analytic_setup
    state = LatentState(Tensor(z0), 3)
    with pytest.raises(ValueError):
        fixed_point_invert_step(model, state, iters=0)
    with pytest.raises(ValueError):
        fixed_point_invert_step(model, state, damping=0.0)
    with pytest.raises(ValueError):
        fixed_point_invert_step(model, state, damping=1.5)


def test_one_sweep_does_not_increase_residual(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    for t in (0, 5, 20, 40):
        state = LatentState(Tensor(z0), t)
        r_ddim = consistency_residual(model, state, ddim_invert_step(model, state))
        r_fp1 = consistency_residual(
            model, state, fixed_point_invert_step(model, state, iters=1, damping=1.0))
        assert r_fp1 <= r_ddim + 1e-18


def test_fp3_residual_below_ddim_at_every_level(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    state = LatentState(Tensor(z0), 0)
    for t in range(sched.T):
        eps_d = ddim_invert_step(model, state)
        eps_f = fixed_point_invert_step(model, state, iters=3, damping=1.0)
        assert consistency_residual(model, state, eps_f) <= \
            consistency_residual(model, state, eps_d) + 1e-18
        state = add_noise_step(sched, state, eps_d)


def test_closed_form_fixed_point_is_stationary(analytic_setup):
    sched, mu, sigma0, model, z0 = analytic_setup
    for t in (0, 7, 30):
        state = LatentState(Tensor(z0), t)
        eps_fix = closed_form_fixed_point(z0, t, sched, mu, sigma0 ** 2)
        mapped = predict_noise(model, add_noise_step(sched, state, Tensor(eps_fix)))
        assert np.max(np.abs(mapped.data - eps_fix)) < 1e-10
        assert consistency_residual(model, state, Tensor(eps_fix)) < 1e-20


def test_iteration_converges_to_closed_form(analytic_setup):
    sched, mu, sigma0, model, z0 = analytic_setup
    state = LatentState(Tensor(z0), 10)
    eps_fix = closed_form_fixed_point(z0, 10, sched, mu, sigma0 ** 2)
    e30 = fixed_point_invert_step(model, state, iters=30, damping=1.0)
    e31 = fixed_point_invert_step(model, state, iters=31, damping=1.0)
    assert np.max(np.abs(e30.data - eps_fix)) < 1e-6
    assert np.max(np.abs(e31.data - e30.data)) < 1e-6


def test_damping_still_converges(analytic_setup):
    sched, mu, sigma0, model, z0 = analytic_setup
    state = LatentState(Tensor(z0), 10)
    eps_fix = closed_form_fixed_point(z0, 10, sched, mu, sigma0 ** 2)
    e = fixed_point_invert_step(model, state, iters=80, damping=0.5)
    assert np.max(np.abs(e.data - eps_fix)) < 1e-6


# ---------------------------------------------------------------------------
# consistency residual
# ---------------------------------------------------------------------------

def test_residual_zero_for_pinned_prediction():
    sched = make_schedule(20, "linear")
    rng = RandomSource(9)
    eps = rng.normal_array(2)
    model = ConstantDenoiser(eps, sched)
    z = rng.normal_array((4, 2))
    for t in (0, 6, 19):
        r = consistency_residual(model, LatentState(Tensor(z), t), Tensor(np.broadcast_to(eps, (4, 2)).copy()))
        assert r < 1e-10


def test_residual_nonnegative(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    rng = RandomSource(10)
    for t in (0, 12, 33):
        eps = Tensor(rng.normal_array(z0.shape))
        assert consistency_residual(model, LatentState(Tensor(z0), t), eps) >= 0.0


# ---------------------------------------------------------------------------
# trajectories and the solver-driven method
# ---------------------------------------------------------------------------

def test_trajectory_replay_validation_catches_tampering(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    traj = baseline_invert(model, LatentState(Tensor(z0), 0), "ddim")
    latents = [a.copy() for a in traj.latents]
    latents[3][0, 0] += 1e-9
    with pytest.raises(ValueError):
        InversionTrajectory(latents, traj.noises, "ddim", sched)


def test_trajectory_lengths(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    traj = baseline_invert(model, LatentState(Tensor(z0), 0), "ddim")
    assert len(traj.latents) == sched.T + 1
    assert len(traj.noises) == sched.T


def test_zero_init_solver_reproduces_ddim_trajectory(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    solver = build_solver(SolverConfig(latent_dim=2), RandomSource(11), sched)
    traj_solver = deepinv_invert(solver, model, LatentState(Tensor(z0), 0))
    traj_ddim = baseline_invert(model, LatentState(Tensor(z0), 0), "ddim")
    for a, b in zip(traj_solver.latents, traj_ddim.latents):
        assert np.max(np.abs(a - b)) < 1e-6
    for a, b in zip(traj_solver.noises, traj_ddim.noises):
        assert np.max(np.abs(a - b)) < 1e-6


def test_deepinv_schedule_mismatch_rejected(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    other = make_schedule(40, "linear")
    solver = build_solver(SolverConfig(latent_dim=2), RandomSource(12), other)
    with pytest.raises(ValueError):
        deepinv_invert(solver, model, LatentState(Tensor(z0), 0))


def test_invert_dispatch(analytic_setup):
    sched, _, _, model, z0 = analytic_setup
    state = LatentState(Tensor(z0), 0)
    solver = build_solver(SolverConfig(latent_dim=2), RandomSource(13), sched)
    assert invert("ddim", model, state).method_tag == "ddim"
    assert invert("fixed_point", model, state, fp_iters=2).method_tag == "fixed_point"
    assert invert("deepinv", model, state, solver=solver).method_tag == "deepinv"
    with pytest.raises(ValueError):
        invert("deepinv", model, state)  # solver required


def test_inversion_on_subsampled_schedule(analytic_setup):
    sched, mu, sigma0, model, z0 = analytic_setup
    sub = sched.subsample(5)
    traj = baseline_invert(model, LatentState(Tensor(z0), 0), "ddim", schedule=sub)
    assert len(traj.noises) == 5
    recon = reconstruct(model, traj)
    assert recon.array.shape == z0.shape
