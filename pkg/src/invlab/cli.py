"""Command-line shell of the laboratory.

Every command resolves its configuration, writes the fully resolved copy
next to its outputs, and exits with a distinct status per failure class:
2 config error, 3 missing upstream artifact, 4 integrity/format failure.
Primary outputs are a pure function of (config, seed); wall-clock values
live in the eval report's measured column and in the run_meta sidecar.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .config import ConfigError, RunConfig, load_config, resolved_text, stage_schedule
from .datasets import Dataset, DatasetSpec, generate
from .diffusion import LatentState, NULL_CONDITION, train_base
from .inversion import invert, reconstruct
from .metrics import CSV_HEADER, EvalReport, EvalRow, compare_methods, evaluate_method
from .rng import RandomSource
from .schedule import make_schedule
from .serialization import (FormatVersionError, IntegrityError, load_base,
                            load_dataset, load_latent, load_solver, load_trajectory,
                            save_base, save_dataset, save_latent, save_solver,
                            save_trajectory)
from .solver import SolverConfig, build_solver
from .training import train_solver
from . import figures

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_INTEGRITY = 4

THREADS_ENV = "DEEPINV_THREADS"


class MissingArtifact(FileNotFoundError):
    pass


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_resolved(cfg: RunConfig, command: str) -> Path:
    out = _out_dir(cfg)
    (out / "resolved_config.ini").write_text(resolved_text(cfg), encoding="utf-8")
    # timestamps are segregated here so primary outputs stay byte-stable
    with open(out / "run_meta.txt", "a", encoding="utf-8") as fh:
        fh.write(f"{datetime.datetime.now().isoformat()} {command}\n")
    return out


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {path} ({hint})")
    return path


def _dataset_paths(out: Path) -> tuple[Path, Path]:
    return out / "dataset_train.inv", out / "dataset_test.inv"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    out = _emit_resolved(cfg, "gen-data")
    spec = DatasetSpec(kind=cfg.data_kind, n_train=cfg.n_train, n_test=cfg.n_test,
                       n_classes=cfg.n_classes, seed=cfg.seed)
    train, test = generate(spec)
    tr_path, te_path = _dataset_paths(out)
    save_dataset(train, tr_path)
    save_dataset(test, te_path)
    print(f"wrote {tr_path} ({len(train)} items) and {te_path} ({len(test)} items)")
    return EXIT_OK


def cmd_train_base(cfg: RunConfig) -> int:
    out = _emit_resolved(cfg, "train-base")
    tr_path, _ = _dataset_paths(out)
    train = load_dataset(_need(tr_path, "run gen-data first"))
    schedule = make_schedule(cfg.timesteps, cfg.schedule_kind)
    rng = RandomSource(cfg.seed, stream=11)
    model = train_base(train, schedule, cfg.cond_mode, cfg.base_epochs, rng,
                       hidden=cfg.base_hidden, batch_size=cfg.base_batch_size,
                       learning_rate=cfg.base_learning_rate)
    save_base(model, out / "base.ckpt")
    lines = ["epoch,loss"] + [f"{e},{l:.10e}" for e, l in model.train_log]
    (out / "base_loss.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'base.ckpt'}; final epoch loss {model.train_log[-1][1]:.6f}")
    return EXIT_OK


def cmd_train_solver(cfg: RunConfig, epoch_scale: float | None = None) -> int:
    out = _emit_resolved(cfg, "train-solver")
    model = load_base(_need(out / "base.ckpt", "run train-base first"))
    train = load_dataset(_need(_dataset_paths(out)[0], "run gen-data first"))
    rng = RandomSource(cfg.seed, stream=21)
    solver = build_solver(
        SolverConfig(latent_dim=model.latent_dim, left_blocks=cfg.left_blocks,
                     right_blocks=cfg.right_blocks, hidden_width=cfg.hidden_width,
                     cond_width=cfg.cond_width, temb_width=cfg.temb_width),
        rng.split(1), schedule=model.schedule)
    stages = stage_schedule(cfg, epoch_scale)
    solver, log = train_solver(model, solver, train, stages, rng.split(2))
    save_solver(solver, out / "solver.ckpt", log_rows=len(log.rows))
    (out / "solver_training_log.csv").write_text(log.to_csv(), encoding="utf-8")
    print(f"wrote {out / 'solver.ckpt'} after {len(log.rows)} logged epochs")
    return EXIT_OK


def _load_start_latent(cfg: RunConfig, out: Path, index: int | None,
                       input_file: str | None):
    if input_file is not None:
        z, t, sched = load_latent(Path(input_file))
        if t != 0:
            raise ConfigError(f"inversion input must sit at t=0, got t={t}")
        return z, f"file_{Path(input_file).stem}"
    test = load_dataset(_need(_dataset_paths(out)[1], "run gen-data first"))
    idx = 0 if index is None else index
    if not 0 <= idx < len(test):
        raise ConfigError(f"index {idx} outside the test set of {len(test)} items")
    return test.latents[idx], f"idx{idx}"


def cmd_invert(cfg: RunConfig, method: str, index: int | None,
               input_file: str | None) -> int:
    out = _emit_resolved(cfg, "invert")
    model = load_base(_need(out / "base.ckpt", "run train-base first"))
    solver = None
    if method == "deepinv":
        solver = load_solver(_need(out / "solver.ckpt", "run train-solver first"))
    z0, tag = _load_start_latent(cfg, out, index, input_file)
    traj = invert(method, model, LatentState(Tensor(z0), 0), NULL_CONDITION,
                  solver=solver, fp_iters=cfg.fp_iters, fp_damping=cfg.fp_damping)
    traj_path = out / f"traj_{method}_{tag}.inv"
    latent_path = out / f"latent_{method}_{tag}.inv"
    save_trajectory(traj, traj_path)
    save_latent(traj.latents[-1], model.schedule.T, model.schedule, latent_path)
    print(f"wrote {traj_path} and {latent_path}")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, trajectory: str | None, latent: str | None) -> int:
    out = _emit_resolved(cfg, "reconstruct")
    model = load_base(_need(out / "base.ckpt", "run train-base first"))
    if (trajectory is None) == (latent is None):
        raise ConfigError("pass exactly one of --trajectory or --latent")
    if trajectory is not None:
        src = load_trajectory(_need(Path(trajectory), "produce it with invert"))
        stem = Path(trajectory).stem
        recon = reconstruct(model, src)
    else:
        z, t, sched = load_latent(_need(Path(latent), "produce it with invert"))
        stem = Path(latent).stem
        recon = reconstruct(model, LatentState(Tensor(z), t), schedule=sched)
    recon_path = out / f"recon_{stem}.inv"
    save_latent(recon.array, 0, model.schedule, recon_path)
    side = int(round(np.sqrt(model.latent_dim)))
    if side * side == model.latent_dim and side >= 3:
        render = out / f"recon_{stem}.pgm"
        figures.write_pgm(render, recon.array.reshape(side, side)
                          if recon.array.ndim == 1 else recon.array[0].reshape(side, side))
    else:
        render = out / f"recon_{stem}.svg"
        pts = recon.array.reshape(-1, model.latent_dim)
        figures.write_scatter_svg(render, {"reconstructed": pts})
    print(f"wrote {recon_path} and {render}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, only_method: str | None = None) -> int:
    out = _emit_resolved(cfg, "eval")
    model = load_base(_need(out / "base.ckpt", "run train-base first"))
    test = load_dataset(_need(_dataset_paths(out)[1], "run gen-data first"))
    methods = [only_method] if only_method else list(cfg.methods)
    solver = None
    if "deepinv" in methods:
        solver = load_solver(_need(out / "solver.ckpt", "run train-solver first"))
    workers = _threads()
    if workers > 1 and len(methods) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda m: evaluate_method(m, model, test, NULL_CONDITION, solver=solver,
                                          fp_iters=cfg.fp_iters, fp_damping=cfg.fp_damping,
                                          max_range=cfg.max_range, seed=cfg.seed),
                methods))
        report = EvalReport(dataset_descriptor=f"{test.spec.kind}/n={len(test)}",
                            seed=cfg.seed, max_range=cfg.max_range, rows=rows)
    else:
        report = compare_methods(methods, model, solver, test, NULL_CONDITION,
                                 fp_iters=cfg.fp_iters, fp_damping=cfg.fp_damping,
                                 max_range=cfg.max_range, seed=cfg.seed)
    (out / "eval_report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "eval_report.txt").write_text(report.human_table(), encoding="utf-8")
    print(report.human_table(), end="")
    return EXIT_OK


def cmd_report(cfg: RunConfig, csv_paths: list[str]) -> int:
    out = _emit_resolved(cfg, "report")
    paths = [Path(p) for p in csv_paths] or [out / "eval_report.csv"]
    for path in paths:
        _need(path, "run eval first")
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        if not lines or lines[0] != CSV_HEADER:
            raise IntegrityError(f"{path}: unexpected report header")
        rows = [line.split(",") for line in lines[1:]]
        methods = [r[0] for r in rows]
        stem = path.stem
        for col, name in ((1, "mse"), (4, "consistency_residual")):
            vals = [float(r[col]) for r in rows]
            figures.write_bars_svg(out / f"{stem}_{name}.svg", methods, vals,
                                   f"{name} by method (lower is better)")
        print(f"wrote figures for {path} into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invlab",
        description="Desk-scale diffusion inversion laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="INI config file")
        p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        p.add_argument("--out", metavar="DIR", help="output directory")

    p = sub.add_parser("gen-data", help="generate the synthetic train/test datasets")
    common(p)
    p = sub.add_parser("train-base", help="train and freeze the diffusion backbone")
    common(p)
    p = sub.add_parser("train-solver", help="train the inversion solver")
    common(p)
    p.add_argument("--scale-epochs", type=float, metavar="FACTOR",
                   help="override the desk-scale epoch factor")
    p.add_argument("--full-paper-budgets", action="store_true",
                   help="disable desk scaling (factor 1.0)")
    p = sub.add_parser("invert", help="invert one item to the terminal level")
    common(p)
    p.add_argument("--method", choices=("ddim", "fixed_point", "deepinv"),
                   default="ddim")
    p.add_argument("--index", type=int, help="test-set item index")
    p.add_argument("--input", metavar="FILE", help="latent container to invert")
    p = sub.add_parser("reconstruct", help="denoise a trajectory or terminal latent")
    common(p)
    p.add_argument("--trajectory", metavar="FILE")
    p.add_argument("--latent", metavar="FILE")
    p = sub.add_parser("eval", help="compare inversion methods on the test set")
    common(p)
    p.add_argument("--method", choices=("ddim", "fixed_point", "deepinv"),
                   help="evaluate a single method instead of the configured list")
    p = sub.add_parser("report", help="emit figures from eval report CSVs")
    common(p)
    p.add_argument("csvs", nargs="*", help="report CSV paths (default: OUT/eval_report.csv)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides: dict[str, str] = {}
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out is not None:
            overrides["out"] = args.out
        cfg = load_config(args.config, overrides)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-base":
            return cmd_train_base(cfg)
        if args.command == "train-solver":
            scale = None
            if args.full_paper_budgets:
                scale = 1.0
            if args.scale_epochs is not None:
                scale = args.scale_epochs
            return cmd_train_solver(cfg, scale)
        if args.command == "invert":
            return cmd_invert(cfg, args.method, args.index, args.input)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.trajectory, args.latent)
        if args.command == "eval":
            return cmd_eval(cfg, args.method)
        if args.command == "report":
            return cmd_report(cfg, args.csvs)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (IntegrityError, FormatVersionError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
