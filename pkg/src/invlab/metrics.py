"""Reconstruction metrics and the method-comparison harness.

Conventions recorded in every report: data is normalized so the value range
has width 2 ([-1, 1] for images), hence PSNR uses MAX = 2; SSIM on images
smaller than 16 px a side is computed globally over the full image as a
single uniform window, otherwise with 8x8 sliding windows of stride 1.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, DTYPE, Tensor
from .diffusion import Condition, Denoiser, LatentState, NULL_CONDITION
from .inversion import METHODS, consistency_residual, invert, reconstruct
from .solver import DualBranchSolver

DEFAULT_MAX_RANGE = 2.0
CSV_HEADER = "method,mse,psnr_db,ssim,consistency_residual,wall_time_s,n_items,seed"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=DTYPE)
    b = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimensionError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, max_range: float = DEFAULT_MAX_RANGE) -> float:
    """10 log10(MAX^2 / mse); identical inputs report +inf, not an error."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(max_range * max_range / m)


def _ssim_window(a: np.ndarray, b: np.ndarray, max_range: float) -> float:
    c1 = (0.01 * max_range) ** 2
    c2 = (0.03 * max_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def ssim(a, b, max_range: float = DEFAULT_MAX_RANGE) -> float:
    """Structural similarity for 2-d single-channel images.

    Population moments (ddof=0) with uniform weighting; window choice per
    the module docstring."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise DimensionError(f"ssim expects a 2-d image, got shape {a.shape}")
    h, w = a.shape
    if h < 16 and w < 16:
        return _ssim_window(a, b, max_range)
    vals = [
        _ssim_window(a[i:i + 8, j:j + 8], b[i:i + 8, j:j + 8], max_range)
        for i in range(h - 7) for j in range(w - 7)
    ]
    return float(np.mean(vals))


@dataclass(frozen=True)
class EvalRow:
    method: str
    mse: float
    psnr_db: float
    ssim: float  # nan for non-image data
    consistency_residual: float
    wall_time_s: float
    n_items: int
    seed: int


@dataclass
class EvalReport:
    dataset_descriptor: str
    seed: int
    max_range: float = DEFAULT_MAX_RANGE
    rows: list[EvalRow] = field(default_factory=list)

    def row(self, method: str) -> EvalRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.method},{r.mse:.12e},{_fmt(r.psnr_db)},{_fmt(r.ssim)},"
                         f"{r.consistency_residual:.12e},{r.wall_time_s:.3f},"
                         f"{r.n_items},{r.seed}")
        return "\n".join(lines) + "\n"

    def to_csv_stable(self) -> str:
        """Same rows with the measured wall time masked; byte-reproducible."""
        out = []
        for line in self.to_csv().splitlines():
            cells = line.split(",")
            if cells[0] != "method":
                cells[5] = "-"
            out.append(",".join(cells))
        return "\n".join(out) + "\n"

    def human_table(self) -> str:
        head = f"{'method':<12} {'mse':>12} {'psnr_db':>9} {'ssim':>7} " \
               f"{'residual':>12} {'time_s':>8}"
        lines = [f"dataset: {self.dataset_descriptor}  seed: {self.seed}  "
                 f"max_range: {self.max_range}", head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.method:<12} {r.mse:>12.3e} {r.psnr_db:>9.3f} "
                         f"{r.ssim:>7.3f} {r.consistency_residual:>12.3e} "
                         f"{r.wall_time_s:>8.3f}")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.6f}"


def evaluate_method(method: str, model: Denoiser, test_set,
                    cond: Condition = NULL_CONDITION,
                    solver: DualBranchSolver | None = None, fp_iters: int = 3,
                    fp_damping: float = 1.0, max_range: float = DEFAULT_MAX_RANGE,
                    seed: int = 0) -> EvalRow:
    """Invert every test item to t=T, reconstruct to t=0, aggregate metrics.

    Wall time covers inversion plus reconstruction only.  Items are batched
    through the trajectory, which is exact since every step is elementwise
    over rows."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    z0 = np.asarray(test_set.latents, dtype=DTYPE)
    sched = model.schedule
    start = time.perf_counter()
    traj = invert(method, model, LatentState(Tensor(z0), 0), cond, solver=solver,
                  fp_iters=fp_iters, fp_damping=fp_damping)
    recon = reconstruct(model, traj, cond)
    wall = time.perf_counter() - start

    resid = float(np.mean([
        consistency_residual(model, LatentState(Tensor(traj.latents[t]), t),
                             Tensor(traj.noises[t]), cond, sched)
        for t in range(sched.T)
    ]))
    m = mse(recon.array, z0)
    side = int(round(math.sqrt(z0.shape[1])))
    if side >= 3 and side * side == z0.shape[1]:
        s = float(np.mean([ssim(recon.array[i].reshape(side, side),
                                z0[i].reshape(side, side), max_range)
                           for i in range(z0.shape[0])]))
    else:
        s = math.nan
    return EvalRow(method=method, mse=m, psnr_db=psnr(recon.array, z0, max_range),
                   ssim=s, consistency_residual=resid, wall_time_s=wall,
                   n_items=z0.shape[0], seed=seed)


def compare_methods(methods, model: Denoiser, solver: DualBranchSolver | None,
                    test_set, cond: Condition = NULL_CONDITION, fp_iters: int = 3,
                    fp_damping: float = 1.0, max_range: float = DEFAULT_MAX_RANGE,
                    seed: int = 0) -> EvalReport:
    """One row per requested method over the same test set and seed."""
    report = EvalReport(dataset_descriptor=f"{test_set.spec.kind}/n={len(test_set)}",
                        seed=seed, max_range=max_range)
    for method in methods:
        report.rows.append(evaluate_method(
            method, model, test_set, cond, solver=solver, fp_iters=fp_iters,
            fp_damping=fp_damping, max_range=max_range, seed=seed))
    return report
