"""Tape-based reverse-mode automatic differentiation over numpy arrays.

One floating-point width (float64) is used for every tensor; the width is
recorded in checkpoints by the serialization module.  Broadcasting is
deliberately restricted: elementwise ops accept equal shapes or a scalar on
one side, plus a dedicated ``add_bias`` primitive for row-vector bias terms.
Each primitive registers an explicit backward rule on the active tape, so
the whole differentiation surface stays small and auditable.

Primitives with backward rules: matmul, add, sub, mul, div, neg, silu,
layer_norm, mean_squared, sum_all, concat_last, add_bias.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

DTYPE = np.float64
PRECISION_TAG = "float64"

DIV_EPS = 1e-12
LAYER_NORM_EPS = 1e-5


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class NumericDomainError(ArithmeticError):
    """Input values fall outside the primitive's numeric domain."""


class ContractError(RuntimeError):
    """An operation was called in a way its contract forbids."""


Scalar = Union[int, float]


class Tensor:
    """Immutable n-d float64 array, optionally tracked on a tape.

    ``requires_grad`` marks a leaf parameter: any tape that consumes it
    registers it and will report a gradient for it.  Tensors produced by
    primitives under an active tape carry (tape, node) linkage; everything
    else is a plain constant.
    """

    __slots__ = ("data", "tape", "node", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        arr.flags.writeable = False
        self.data = arr
        self.tape: Optional[Tape] = None
        self.node: Optional[int] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("param")
        if self.node is not None:
            flags.append("taped")
        tag = ",".join(flags)
        return f"Tensor(shape={self.shape}{', ' + tag if tag else ''})"

    # Arithmetic sugar; scalar operands follow the scalar<->tensor rule.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data) -> Tensor:
    """Leaf tensor that collects gradients on every tape that consumes it."""
    return Tensor(data, requires_grad=True)


class _Node:
    """One primitive application: inputs by node id, explicit backward rule."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Optional[Callable]):
        self.op = op
        self.inputs = inputs  # tuple of node ids (None marks a leaf node)
        self.backward = backward  # grad_out -> tuple of grads aligned with inputs


_ACTIVE: Optional["Tape"] = None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Nodes are appended in execution order, which is a topological order by
    construction; ``backward`` walks the list once in reverse.  One tape per
    training step, never shared across concurrent steps.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaf_ids: dict[int, int] = {}  # id(tensor) -> node id
        self._leaf_refs: list[Tensor] = []  # keeps leaves alive for the map

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("tapes cannot be nested; one tape per training step")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def _leaf_id(self, t: Tensor) -> int:
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None))
            self._leaf_ids[id(t)] = nid
            self._leaf_refs.append(t)
        return nid

    def _node_id_of(self, t: Tensor) -> Optional[int]:
        if t.tape is self and t.node is not None:
            return t.node
        if t.requires_grad:
            return self._leaf_id(t)
        return self._leaf_ids.get(id(t))


def active_tape() -> Optional[Tape]:
    return _ACTIVE


class suspend_tape:
    """Context that hides the active tape; used for frozen-model inference."""

    def __enter__(self):
        global _ACTIVE
        self._saved = _ACTIVE
        _ACTIVE = None

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = self._saved
        return False


class GradientMap:
    """Gradients keyed by tensor; parameters not reached by the loss get zeros."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def of(self, t: Tensor) -> np.ndarray:
        nid = self._tape._node_id_of(t)
        if nid is None or nid not in self._grads:
            return np.zeros(t.shape, dtype=DTYPE)
        return self._grads[nid]


def _record(op: str, out_data: np.ndarray, inputs: Sequence[Optional[Tensor]],
            backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE
    if tape is None:
        return out
    ids = tuple(tape._node_id_of(t) if isinstance(t, Tensor) else None for t in inputs)
    if all(i is None for i in ids):
        return out
    out.tape = tape
    out.node = len(tape.nodes)
    tape.nodes.append(_Node(op, ids, backward))
    return out


def backward(loss: Tensor) -> GradientMap:
    """Reverse sweep from a scalar loss; visits each tape node exactly once."""
    if loss.data.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.tape is None or loss.node is None:
        raise ContractError("loss is not recorded on a tape")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.node: np.ones((), dtype=DTYPE)}
    for nid in range(loss.node, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward is None:
            continue
        for in_id, in_grad in zip(node.inputs, node.backward(g)):
            if in_id is None or in_grad is None:
                continue
            if in_id in grads:
                grads[in_id] = grads[in_id] + in_grad
            else:
                grads[in_id] = in_grad
    return GradientMap(tape, grads)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", ad @ bd, (a, b), bw)


def _binary_shapes(op: str, a: Tensor, b) -> tuple[Tensor, Optional[Tensor], bool]:
    """Normalize operands; returns (a, b_tensor_or_None, b_is_scalar)."""
    a = as_tensor(a)
    if isinstance(b, Tensor):
        if b.data.shape == () or a.data.shape == () or a.shape == b.shape:
            return a, b, b.data.shape == ()
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is scalar")
    if isinstance(b, (int, float, np.floating, np.integer)):
        return a, None, True
    raise DimensionError(f"{op}: unsupported operand type {type(b).__name__}")


def _reduce_like(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # scalar operand of a broadcast op accumulates the full sum
    return g if shape != () else np.asarray(np.sum(g), dtype=DTYPE)


def add(a, b) -> Tensor:
    a, bt, _ = _binary_shapes("add", a, b)
    bd = bt.data if bt is not None else DTYPE(b)

    def bw(g):
        return _reduce_like(g, a.shape), _reduce_like(g, bt.shape) if bt is not None else None

    return _record("add", a.data + bd, (a, bt), bw)


def sub(a, b) -> Tensor:
    a, bt, _ = _binary_shapes("sub", a, b)
    bd = bt.data if bt is not None else DTYPE(b)

    def bw(g):
        return _reduce_like(g, a.shape), _reduce_like(-g, bt.shape) if bt is not None else None

    return _record("sub", a.data - bd, (a, bt), bw)


def mul(a, b) -> Tensor:
    a, bt, _ = _binary_shapes("mul", a, b)
    ad = a.data
    bd = bt.data if bt is not None else DTYPE(b)

    def bw(g):
        ga = _reduce_like(g * bd, a.shape)
        gb = _reduce_like(g * ad, bt.shape) if bt is not None else None
        return ga, gb

    return _record("mul", ad * bd, (a, bt), bw)


def div(a, b) -> Tensor:
    a, bt, _ = _binary_shapes("div", a, b)
    ad = a.data
    bd = bt.data if bt is not None else DTYPE(b)
    if np.min(np.abs(bd)) < DIV_EPS:
        raise NumericDomainError(f"division by magnitude < {DIV_EPS}")

    def bw(g):
        ga = _reduce_like(g / bd, a.shape)
        gb = _reduce_like(-g * ad / (bd * bd), bt.shape) if bt is not None else None
        return ga, gb

    return _record("div", ad / bd, (a, bt), bw)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _record("neg", -a.data, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # sigmoid(x) = (1 + tanh(x/2)) / 2, overflow-free in one vector pass
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), applied per element."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    ad = a.data

    def bw(g):
        return (g * (s * (1.0 + ad * (1.0 - s))),)

    return _record("silu", ad * s, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Zero-mean unit-variance normalization of the last axis, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.data.ndim > 0 else 0
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last extent {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv
    gd = gain.data

    def bw(g):
        gy = g * gd
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        gx = (gy - m1 - xhat * m2) * inv
        ggain = np.sum(g * xhat, axis=tuple(range(g.ndim - 1)))
        gbias = np.sum(g, axis=tuple(range(g.ndim - 1)))
        return gx, ggain, gbias

    return _record("layer_norm", xhat * gd + bias.data, (x, gain, bias), bw)


def mean_squared(x: Tensor) -> Tensor:
    """Mean of squared elements; the squared-l2 reduction every loss uses."""
    x = as_tensor(x)
    if x.data.size == 0:
        raise NumericDomainError("mean_squared of an empty tensor")
    xd = x.data
    n = xd.size

    def bw(g):
        return (g * (2.0 / n) * xd,)

    return _record("mean_squared", np.asarray(np.mean(xd * xd)), (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g, shape).astype(DTYPE, copy=True),)

    return _record("sum_all", np.asarray(np.sum(x.data)), (x,), bw)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; leading extents must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last: incompatible shapes {a.shape} and {b.shape}")
    wa = a.shape[-1]

    def bw(g):
        return g[..., :wa], g[..., wa:]

    return _record("concat_last", np.concatenate([a.data, b.data], axis=-1), (a, b), bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a width-d row vector to every row of an [n, d] matrix."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: got {x.shape} and {b.shape}")

    def bw(g):
        return g, g.sum(axis=0)

    return _record("add_bias", x.data + b.data[None, :], (x, b), bw)
