"""Binary container for checkpoints, datasets, trajectories, and latents.

Byte layout (little-endian throughout):

    magic   6 bytes  b"INVLAB"
    version u16      format version (currently 1)
    kind    str8     ascii payload kind tag
    precision str8   floating width tag ("float64")
    prng    str8     generator tag ("pcg64+box-muller")
    meta    u32 count, then per entry: key str16, value str16 (utf-8)
    tensors u32 count, then per tensor:
              name str16, dtype u8 (0=float64, 1=int64), ndim u8,
              dims u32 x ndim, raw payload (8 bytes per element)
    checksum u64     first 8 bytes of SHA-256 over all preceding bytes

str8/str16 are length-prefixed strings (u8/u16 length).  Loading verifies
magic, version, and checksum; parameters round-trip bit-exactly because
payloads are raw float64 bytes.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .autodiff import DTYPE, PRECISION_TAG, Tensor
from .rng import PRNG_TAG
from .schedule import NoiseSchedule

MAGIC = b"INVLAB"
FORMAT_VERSION = 1
_DTYPES = {0: np.float64, 1: np.int64}
_DTYPE_TAGS = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


class IntegrityError(RuntimeError):
    """Container bytes are damaged or not a container at all."""


class FormatVersionError(RuntimeError):
    """Container was written by a newer format revision."""


def _pack_str(s: str, wide: bool = False) -> bytes:
    raw = s.encode("utf-8")
    fmt = "<H" if wide else "<B"
    limit = 65535 if wide else 255
    if len(raw) > limit:
        raise ValueError(f"string too long for container field: {len(raw)}")
    return struct.pack(fmt, len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError("container truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def str8(self) -> str:
        return self.take(self.u8()).decode("utf-8")

    def str16(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def write_container(path, kind: str, meta: dict[str, str],
                    tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), _pack_str(kind),
             _pack_str(PRECISION_TAG), _pack_str(PRNG_TAG),
             struct.pack("<I", len(meta))]
    for key, value in meta.items():
        parts.append(_pack_str(key, wide=True))
        parts.append(_pack_str(str(value), wide=True))
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            arr = arr.astype(DTYPE)
        tag = _DTYPE_TAGS[arr.dtype]
        parts.append(_pack_str(name, wide=True))
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    payload = b"".join(parts)
    blob = payload + struct.pack("<Q", _checksum(payload))
    Path(path).write_bytes(blob)


def read_container(path, expected_kind: str | None = None
                   ) -> tuple[str, dict[str, str], dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 10 or blob[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not an invlab container")
    stored = struct.unpack("<Q", blob[-8:])[0]
    if _checksum(blob[:-8]) != stored:
        raise IntegrityError(f"{path}: checksum mismatch, file is corrupted")
    r = _Reader(blob[:-8])
    r.take(len(MAGIC))
    version = r.u16()
    if version > FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: written by format version {version}, this build reads <= {FORMAT_VERSION}")
    kind = r.str8()
    if expected_kind is not None and kind != expected_kind:
        raise IntegrityError(f"{path}: expected kind {expected_kind!r}, found {kind!r}")
    r.str8()  # precision tag
    r.str8()  # prng tag
    meta = {}
    for _ in range(r.u32()):
        key = r.str16()
        meta[key] = r.str16()
    tensors = {}
    for _ in range(r.u32()):
        name = r.str16()
        tag, ndim = r.u8(), r.u8()
        if tag not in _DTYPES:
            raise IntegrityError(f"{path}: unknown dtype tag {tag}")
        dims = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(dims)) if dims else 1
        raw = r.take(8 * count)
        tensors[name] = np.frombuffer(raw, dtype=_DTYPES[tag]).reshape(dims).copy()
    return kind, meta, tensors


def _fill(param: Tensor, value: np.ndarray) -> None:
    if param.shape != value.shape:
        raise IntegrityError(f"parameter shape {param.shape} != stored {value.shape}")
    param.data.flags.writeable = True
    param.data[...] = value
    param.data.flags.writeable = False


def _schedule_tensors(schedule: NoiseSchedule) -> dict[str, np.ndarray]:
    return {"schedule.alpha_bar": schedule.alpha_bar,
            "schedule.base_t": schedule.base_t}


def _schedule_from(meta: dict[str, str], tensors: dict[str, np.ndarray]) -> NoiseSchedule:
    ab = tensors["schedule.alpha_bar"]
    return NoiseSchedule(T=ab.shape[0] - 1, alpha_bar=ab,
                         kind=meta.get("schedule.kind", "linear"),
                         base_t=tensors["schedule.base_t"])


# -- backbone ----------------------------------------------------------------

def save_base(model, path) -> None:
    meta = {"latent_dim": model.latent_dim, "n_classes": model.n_classes,
            "hidden": model.hidden, "temb_width": model.temb_width,
            "cond_width": model.cond_width, "schedule.kind": model.schedule.kind,
            "frozen": int(model.frozen)}
    tensors = dict(_schedule_tensors(model.schedule))
    for name, p in model.parameters():
        tensors[f"param.{name}"] = p.data
    write_container(path, "base-denoiser", {k: str(v) for k, v in meta.items()}, tensors)


def load_base(path):
    from .diffusion import BaseDenoiser
    _, meta, tensors = read_container(path, "base-denoiser")
    schedule = _schedule_from(meta, tensors)
    model = BaseDenoiser(int(meta["latent_dim"]), schedule, int(meta["n_classes"]),
                         rng=None, hidden=int(meta["hidden"]),
                         temb_width=int(meta["temb_width"]),
                         cond_width=int(meta["cond_width"]))
    for name, p in model.parameters():
        _fill(p, tensors[f"param.{name}"])
    if meta.get("frozen") == "1":
        model.freeze()
    return model


# -- solver ------------------------------------------------------------------

def save_solver(solver, path, log_rows: int = 0) -> None:
    c = solver.config
    names = [n for n, _ in solver.parameters()]
    meta = {"latent_dim": c.latent_dim, "left_blocks": c.left_blocks,
            "right_blocks": c.right_blocks, "hidden_width": c.hidden_width,
            "cond_width": c.cond_width, "temb_width": c.temb_width,
            "sin_width": c.sin_width,
            "extension_history": ",".join(str(x) for x in solver.extension_history),
            "log_rows": log_rows}
    if solver.schedule is not None:
        meta["schedule.kind"] = solver.schedule.kind
    tensors: dict[str, np.ndarray] = {}
    if solver.schedule is not None:
        tensors.update(_schedule_tensors(solver.schedule))
    mask = np.array([1 if solver._trainable[n] else 0 for n in names], dtype=np.int64)
    tensors["trainable_mask"] = mask
    for name, p in solver.parameters():
        tensors[f"param.{name}"] = p.data
    write_container(path, "solver", {k: str(v) for k, v in meta.items()}, tensors)


def load_solver(path):
    from .solver import ConditionedBlock, DualBranchSolver, SolverConfig
    _, meta, tensors = read_container(path, "solver")
    config = SolverConfig(latent_dim=int(meta["latent_dim"]),
                          left_blocks=int(meta["left_blocks"]),
                          right_blocks=int(meta["right_blocks"]),
                          hidden_width=int(meta["hidden_width"]),
                          cond_width=int(meta["cond_width"]),
                          temb_width=int(meta["temb_width"]),
                          sin_width=int(meta["sin_width"]))
    schedule = _schedule_from(meta, tensors) if "schedule.alpha_bar" in tensors else None
    solver = DualBranchSolver(config, rng=None, schedule=schedule)
    history = [int(x) for x in meta["extension_history"].split(",") if x]
    for n_new in history:
        solver.right.extend(ConditionedBlock(config.hidden_width, config.temb_width, None)
                            for _ in range(n_new))
        solver.extension_history.append(n_new)
    solver._trainable = {name: True for name, _ in solver.parameters()}
    names = [n for n, _ in solver.parameters()]
    mask = tensors["trainable_mask"]
    if mask.shape[0] != len(names):
        raise IntegrityError("trainable mask length does not match parameters")
    for name, bit in zip(names, mask):
        solver._trainable[name] = bool(bit)
    for name, p in solver.parameters():
        _fill(p, tensors[f"param.{name}"])
    return solver


# -- datasets ----------------------------------------------------------------

def save_dataset(dataset, path) -> None:
    s = dataset.spec
    meta = {"kind": s.kind, "n_train": s.n_train, "n_test": s.n_test,
            "n_classes": s.n_classes, "seed": s.seed, "role": dataset.role}
    write_container(path, "dataset", {k: str(v) for k, v in meta.items()},
                    {"latents": dataset.latents, "labels": dataset.labels})


def load_dataset(path):
    from .datasets import Dataset, DatasetSpec
    _, meta, tensors = read_container(path, "dataset")
    spec = DatasetSpec(kind=meta["kind"], n_train=int(meta["n_train"]),
                       n_test=int(meta["n_test"]), n_classes=int(meta["n_classes"]),
                       seed=int(meta["seed"]))
    return Dataset(tensors["latents"], tensors["labels"], spec, meta["role"])


# -- trajectories and latents -------------------------------------------------

def save_trajectory(traj, path) -> None:
    meta = {"method_tag": traj.method_tag, "schedule.kind": traj.schedule.kind}
    tensors = dict(_schedule_tensors(traj.schedule))
    tensors["latents"] = np.stack(traj.latents)
    tensors["noises"] = np.stack(traj.noises)
    write_container(path, "trajectory", meta, tensors)


def load_trajectory(path):
    from .inversion import InversionTrajectory
    _, meta, tensors = read_container(path, "trajectory")
    schedule = _schedule_from(meta, tensors)
    return InversionTrajectory(latents=list(tensors["latents"]),
                               noises=list(tensors["noises"]),
                               method_tag=meta["method_tag"], schedule=schedule)


def save_latent(z: np.ndarray, t: int, schedule: NoiseSchedule, path) -> None:
    meta = {"t": str(t), "schedule.kind": schedule.kind}
    tensors = dict(_schedule_tensors(schedule))
    tensors["z"] = np.asarray(z, dtype=DTYPE)
    write_container(path, "latent", meta, tensors)


def load_latent(path) -> tuple[np.ndarray, int, NoiseSchedule]:
    _, meta, tensors = read_container(path, "latent")
    return tensors["z"], int(meta["t"]), _schedule_from(meta, tensors)
