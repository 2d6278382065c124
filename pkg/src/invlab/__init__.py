"""invlab: a desk-scale laboratory for diffusion inversion.

A from-scratch toy diffusion backbone, three inversion strategies (one-step
baseline, damped fixed-point refinement, and a trained dual-branch solver),
the self-supervised staged training regime for the solver, and an
evaluation harness with reconstruction metrics.  Everything runs on a
minimal float64 autodiff core and is bit-reproducible per seed.
"""

from .autodiff import (ContractError, DimensionError, GradientMap,
                       NumericDomainError, Tape, Tensor, backward, param)
from .datasets import Dataset, DatasetSpec, generate
from .diffusion import (AnalyticDenoiser, BaseDenoiser, Condition, LatentState,
                        NULL_CONDITION, add_noise_step, denoise_step, forward_noise,
                        predict_noise, train_base)
from .inversion import (InversionTrajectory, baseline_invert, consistency_residual,
                        ddim_invert_step, deepinv_invert, fixed_point_invert_step,
                        invert, reconstruct)
from .metrics import EvalReport, EvalRow, compare_methods, evaluate_method, mse, psnr, ssim
from .optim import OptimizerState, adam_step
from .rng import RandomSource, normal
from .schedule import NoiseSchedule, make_schedule
from .solver import (ConditionedBlock, DualBranchSolver, SolverConfig, build_solver,
                     embed_timesteps, extend_layers, set_trainable, solver_forward)
from .training import (PseudoDataset, PseudoSample, StageSchedule, TrainingLog,
                       build_pseudo_dataset, fuse_pseudo_noise, in_fusion_window,
                       loss_hyb, loss_self, loss_stable, reference_noise, train_solver)

__version__ = "0.1.0"
