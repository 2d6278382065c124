"""Run configuration: flat key/value text with sections.

Every hyperparameter of the lab appears as a named key with a default equal
to the recipe defaults; unknown sections or keys are rejected outright, and
every run writes a fully resolved copy of its configuration next to its
outputs so results are reproducible from the artifacts alone.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Malformed, unknown, or contradictory configuration input."""


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip() != "")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip() != "")


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip() != "")


@dataclass
class RunConfig:
    # [run]
    seed: int = 0
    out: str = "runs/default"
    # [data]
    data_kind: str = "gaussian_mixture_2d"
    n_train: int = 2000
    n_test: int = 298
    n_classes: int = 3
    # [diffusion]
    timesteps: int = 50
    schedule_kind: str = "linear"
    base_hidden: int = 128
    base_epochs: int = 60
    base_batch_size: int = 128
    base_learning_rate: float = 1e-3
    cond_mode: str = "class"
    # [solver]
    left_blocks: int = 2
    right_blocks: int = 2
    hidden_width: int = 64
    cond_width: int = 32
    temb_width: int = 32
    # [train]
    outer_iterations: int = 4
    k_per_iteration: tuple[float, ...] = (0.8, 0.6, 0.5, 0.5)
    timestep_configs: tuple[int, ...] = (1, 5, 10, 25, 50)
    epochs_per_config: tuple[int, ...] = (300, 300, 250, 200, 100)
    epoch_scale: float = 0.05
    alpha: float = 0.5
    lambda1: float = 0.5
    lambda2: float = 0.5
    solver_learning_rate: float = 1e-3
    lr_finetune_factor: float = 0.1
    solver_batch_size: int = 1024
    extend_blocks: int = 4
    # [eval]
    methods: tuple[str, ...] = ("ddim", "fixed_point", "deepinv")
    fp_iters: int = 3
    fp_damping: float = 1.0
    max_range: float = 2.0


# section -> key -> (attribute, parser)
_SCHEMA: dict[str, dict[str, tuple[str, callable]]] = {
    "run": {"seed": ("seed", int), "out": ("out", str)},
    "data": {"kind": ("data_kind", str), "n_train": ("n_train", int),
             "n_test": ("n_test", int), "n_classes": ("n_classes", int)},
    "diffusion": {"timesteps": ("timesteps", int), "schedule": ("schedule_kind", str),
                  "hidden": ("base_hidden", int), "epochs": ("base_epochs", int),
                  "batch_size": ("base_batch_size", int),
                  "learning_rate": ("base_learning_rate", float),
                  "cond_mode": ("cond_mode", str)},
    "solver": {"left_blocks": ("left_blocks", int), "right_blocks": ("right_blocks", int),
               "hidden_width": ("hidden_width", int), "cond_width": ("cond_width", int),
               "temb_width": ("temb_width", int)},
    "train": {"outer_iterations": ("outer_iterations", int),
              "k_per_iteration": ("k_per_iteration", _floats),
              "timestep_configs": ("timestep_configs", _ints),
              "epochs_per_config": ("epochs_per_config", _ints),
              "epoch_scale": ("epoch_scale", float), "alpha": ("alpha", float),
              "lambda1": ("lambda1", float), "lambda2": ("lambda2", float),
              "learning_rate": ("solver_learning_rate", float),
              "lr_finetune_factor": ("lr_finetune_factor", float),
              "batch_size": ("solver_batch_size", int),
              "extend_blocks": ("extend_blocks", int)},
    "eval": {"methods": ("methods", _strs), "fp_iters": ("fp_iters", int),
             "fp_damping": ("fp_damping", float), "max_range": ("max_range", float)},
}

_FORMATTERS = {
    tuple: lambda v: ",".join(str(x) for x in v),
}


def load_config(path: str | Path | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file, then CLI overrides; unknown keys are fatal."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                attr, parse = _SCHEMA[section][key]
                try:
                    setattr(cfg, attr, parse(raw))
                except ValueError as exc:
                    raise ConfigError(f"bad value for [{section}] {key}: {exc}")
    for attr, raw in (overrides or {}).items():
        current = getattr(cfg, attr)
        if isinstance(current, tuple):
            raise ConfigError(f"override for list key {attr} not supported")
        setattr(cfg, attr, type(current)(raw))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Reject illegal settings before any compute starts."""
    from .datasets import KINDS
    from .training import StageSchedule
    if cfg.data_kind not in KINDS:
        raise ConfigError(f"unknown data kind {cfg.data_kind!r}")
    if cfg.schedule_kind not in ("linear", "cosine"):
        raise ConfigError(f"unknown schedule kind {cfg.schedule_kind!r}")
    if cfg.cond_mode not in ("class", "none"):
        raise ConfigError(f"unknown cond_mode {cfg.cond_mode!r}")
    for m in cfg.methods:
        if m not in ("ddim", "fixed_point", "deepinv"):
            raise ConfigError(f"unknown eval method {m!r}")
    if cfg.timesteps < max(cfg.timestep_configs):
        raise ConfigError("diffusion timesteps must cover the largest timestep config")
    try:
        stage_schedule(cfg)
    except ValueError as exc:
        raise ConfigError(f"illegal training schedule: {exc}")


def stage_schedule(cfg: RunConfig, epoch_scale: float | None = None) -> "StageSchedule":
    from .training import StageSchedule
    return StageSchedule(
        outer_iterations=cfg.outer_iterations, k_per_iteration=cfg.k_per_iteration,
        timestep_configs=cfg.timestep_configs, epochs_per_config=cfg.epochs_per_config,
        epoch_scale=cfg.epoch_scale if epoch_scale is None else epoch_scale,
        alpha=cfg.alpha, lambda1=cfg.lambda1, lambda2=cfg.lambda2,
        learning_rate=cfg.solver_learning_rate,
        lr_finetune_factor=cfg.lr_finetune_factor, batch_size=cfg.solver_batch_size,
        extend_blocks=cfg.extend_blocks)


def resolved_text(cfg: RunConfig) -> str:
    """Canonical fully resolved config, suitable for byte-exact comparison."""
    lines = []
    for section in _SCHEMA:
        lines.append(f"[{section}]")
        for key, (attr, _) in _SCHEMA[section].items():
            value = getattr(cfg, attr)
            fmt = _FORMATTERS.get(type(value), str)
            lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)
