"""Minimal dense-tensor reverse-mode autodiff with LSTM cell and Adam.

Everything is float64.  Ops record onto an explicit :class:`Graph` tape when
one is active; without an active graph they run value-only (inference mode).
Shapes are explicit: the only implicit broadcast is the bias add of a (1, F)
row onto a (B, F) matrix.  Scalar Python floats are accepted as the second
operand of the arithmetic ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CheckpointError, NumericDomainError, ShapeError, StateError

CHECKPOINT_TAG = "revol-ckpt-v1"


class Tensor:
    """A float64 array plus the tape links needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Graph-boundary constructor: casts to float64 and rejects NaN/Inf."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NumericDomainError("tensor rejects NaN/Inf values at the graph boundary")
    return Tensor(arr.copy(), requires_grad=requires_grad)


_ACTIVE: "Graph | None" = None


class Graph:
    """Operation tape for one forward pass; backward consumes it once."""

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        global _ACTIVE
        if _ACTIVE is not None:
            raise StateError("a graph is already recording; nested graphs are not supported")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None

    def __len__(self) -> int:
        return len(self._nodes)


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    if _ACTIVE is not None and any(p.tracked for p in parents):
        out = Tensor(out_data, parents=parents, backward=backward)
        _ACTIVE._nodes.append(out)
        return out
    return Tensor(out_data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf; clears the tape."""
    if graph._consumed:
        raise StateError("backward called twice on the same graph")
    if not graph._nodes:
        raise StateError("backward called before any forward op was recorded")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not loss._parents:
        raise StateError("loss is not connected to this graph's tape")
    graph._consumed = True
    nodes = graph._nodes
    graph._nodes = []

    loss.grad = np.ones_like(loss.data)
    for node in reversed(nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
    # free transient buffers; leaf grads persist for the optimizer
    for node in nodes:
        if not node.requires_grad:
            node.grad = None
        node._backward = None
        node._parents = ()


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def _as_operand(b) -> "Tensor | float":
    if isinstance(b, Tensor):
        return b
    if isinstance(b, (int, float)):
        return float(b)
    raise ShapeError(f"operand must be a Tensor or scalar, got {type(b).__name__}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs (n,k)@(k,m), got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), bwd)


def _check_same_or_bias(a: Tensor, b: Tensor, op: str) -> bool:
    """Returns True when b is a (1, F) bias row to broadcast over a (B, F) matrix."""
    if a.shape == b.shape:
        return False
    if (
        a.data.ndim == 2
        and b.data.ndim == 2
        and b.shape[0] == 1
        and b.shape[1] == a.shape[1]
    ):
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        def bwd_s(g: np.ndarray) -> None:
            _accum(a, g)
        return _record(a.data + b, (a,), bwd_s)
    bias = _check_same_or_bias(a, b, "add")
    out = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g.sum(axis=0, keepdims=True) if bias else g)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        def bwd_s(g: np.ndarray) -> None:
            _accum(a, g)
        return _record(a.data - b, (a,), bwd_s)
    bias = _check_same_or_bias(a, b, "sub")
    out = a.data - b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -(g.sum(axis=0, keepdims=True)) if bias else -g)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        def bwd_s(g: np.ndarray) -> None:
            _accum(a, g * b)
        return _record(a.data * b, (a,), bwd_s)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes must match, got {a.shape} and {b.shape}")
    out = a.data * b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    b = _as_operand(b)
    if isinstance(b, float):
        if b == 0.0:
            raise NumericDomainError("division by scalar zero")
        inv = 1.0 / b

        def bwd_s(g: np.ndarray) -> None:
            _accum(a, g * inv)
        return _record(a.data * inv, (a,), bwd_s)
    if a.shape != b.shape:
        raise ShapeError(f"div: shapes must match, got {a.shape} and {b.shape}")
    if np.any(b.data == 0.0):
        raise NumericDomainError("division by zero element")
    out = a.data / b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g / b.data)
        _accum(b, -g * out / b.data)

    return _record(out, (a, b), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * out)

    return _record(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericDomainError("log requires strictly positive inputs")
    out = np.log(a.data)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g / a.data)

    return _record(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * (1.0 - out * out))

    return _record(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    t = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * out * (1.0 - out))

    return _record(out, (a,), bwd)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * 2.0 * a.data)

    return _record(out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise NumericDomainError("sqrt requires nonnegative inputs")
    out = np.sqrt(a.data)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * 0.5 / out)

    return _record(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - inner))

    return _record(out, (a,), bwd)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum to a scalar (axis=None) or along one axis with keepdims."""
    if axis is None:
        out = a.data.sum()

        def bwd(g: np.ndarray) -> None:
            _accum(a, np.full_like(a.data, float(g)))

        return _record(np.asarray(out), (a,), bwd)
    out = a.data.sum(axis=axis, keepdims=True)

    def bwd_ax(g: np.ndarray) -> None:
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _record(out, (a,), bwd_ax)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.data.size
        out = a.data.mean()

        def bwd(g: np.ndarray) -> None:
            _accum(a, np.full_like(a.data, float(g) / n))

        return _record(np.asarray(out), (a,), bwd)
    n = a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=True)

    def bwd_ax(g: np.ndarray) -> None:
        _accum(a, np.broadcast_to(g, a.data.shape) / n)

    return _record(out, (a,), bwd_ax)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets, offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _record(out, tuple(tensors), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"slice_axis expects a 2-D tensor and axis 0/1, got {a.shape}")
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    idx = (slice(start, stop), slice(None)) if axis == 0 else (slice(None), slice(start, stop))
    out = a.data[idx].copy()

    def bwd(g: np.ndarray) -> None:
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += g

    return _record(out, (a,), bwd)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM step: gate order (input, forget, candidate, output)."""
    z = add(add(matmul(x, wx), matmul(h_prev, wh)), b)
    return lstm_cell_from_preact(z, c_prev)


def lstm_cell_from_preact(z: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """LSTM step given precomputed gate pre-activations (B, 4H)."""
    hdim = z.shape[1] // 4
    if z.shape[1] != 4 * hdim or c_prev.shape != (z.shape[0], hdim):
        raise ShapeError(f"lstm: preact {z.shape} vs cell {c_prev.shape}")
    i = sigmoid(slice_axis(z, 1, 0, hdim))
    f = sigmoid(slice_axis(z, 1, hdim, 2 * hdim))
    g = tanh(slice_axis(z, 1, 2 * hdim, 3 * hdim))
    o = sigmoid(slice_axis(z, 1, 3 * hdim, 4 * hdim))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# Parameters and optimizer
# ---------------------------------------------------------------------------

@dataclass
class ParamEntry:
    value: Tensor
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:
    """Named parameter tensors with gradients and Adam moment buffers."""

    def __init__(self) -> None:
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._entries:
            raise StateError(f"parameter {name!r} already registered")
        t = tensor(array, requires_grad=True)
        self._entries[name] = ParamEntry(t, np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def add_uniform(self, name: str, shape: tuple[int, ...],
                    rng: np.random.Generator, scale: float | None = None) -> Tensor:
        if scale is None:
            fan_in = shape[0] if shape else 1
            scale = 1.0 / math.sqrt(max(1, fan_in))
        return self.add(name, rng.uniform(-scale, scale, size=shape))

    def add_zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, ParamEntry]]:
        return iter(self._entries.items())

    def zero_grads(self) -> None:
        for e in self._entries.values():
            e.value.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: e.value.data.copy() for name, e in self._entries.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, e in self._entries.items():
            if name not in arrays:
                raise CheckpointError(f"missing parameter {name!r}")
            if arrays[name].shape != e.value.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: "
                    f"checkpoint {arrays[name].shape} vs config {e.value.data.shape}"
                )
            e.value.data = arrays[name].astype(np.float64).copy()


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Bias-corrected Adam with decoupled weight decay; zeroes gradients."""
    for _, e in store.items():
        g = e.value.grad
        if g is None:
            g = np.zeros_like(e.value.data)
        e.step += 1
        e.m = beta1 * e.m + (1.0 - beta1) * g
        e.v = beta2 * e.v + (1.0 - beta2) * (g * g)
        m_hat = e.m / (1.0 - beta1**e.step)
        v_hat = e.v / (1.0 - beta2**e.step)
        e.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            e.value.data -= lr * weight_decay * e.value.data
        e.value.grad = None


# ---------------------------------------------------------------------------
# Checkpoint I/O  (version tag "revol-ckpt-v1")
# ---------------------------------------------------------------------------

_SEPARATOR = b"\n---\n"


def save_arrays(arrays: dict[str, np.ndarray], path: str | Path) -> None:
    """Write named arrays as a plain-text manifest plus a little-endian buffer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_lines = [CHECKPOINT_TAG]
    blobs: list[bytes] = []
    offset = 0
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"parameter name {name!r} may not contain whitespace")
        a = np.ascontiguousarray(np.atleast_1d(np.asarray(arr, dtype="<f8")))
        shape = "x".join(str(d) for d in a.shape)
        manifest_lines.append(f"{name} <f8 {shape} {offset}")
        raw = a.tobytes()
        blobs.append(raw)
        offset += len(raw)
    payload = "\n".join(manifest_lines).encode() + _SEPARATOR + b"".join(blobs)
    path.write_bytes(payload)


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    sep = raw.find(_SEPARATOR)
    if sep < 0:
        raise CheckpointError(f"{path}: missing manifest separator")
    manifest, data = raw[:sep].decode(), raw[sep + len(_SEPARATOR):]
    lines = manifest.splitlines()
    if not lines or lines[0] != CHECKPOINT_TAG:
        raise CheckpointError(f"{path}: bad version tag {lines[:1]!r}, expected {CHECKPOINT_TAG!r}")
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        try:
            name, dtype, shape_s, offset_s = line.split()
            shape = tuple(int(d) for d in shape_s.split("x"))
            offset = int(offset_s)
        except ValueError as exc:
            raise CheckpointError(f"{path}: malformed manifest line {line!r}") from exc
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        if not np.isfinite(arr).all():
            raise CheckpointError(f"{path}: non-finite values in {name!r}")
        out[name] = arr.astype(np.float64)
    return out


def save_store(store: ParamStore, path: str | Path,
               meta: dict[str, float] | None = None) -> None:
    arrays = {name: e.value.data for name, e in store.items()}
    for key, value in (meta or {}).items():
        arrays[f"meta.{key}"] = np.asarray([float(value)])
    save_arrays(arrays, path)


def load_store(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Split a checkpoint into parameter arrays and `meta.*` scalars."""
    arrays = load_arrays(path)
    meta = {k[len("meta."):]: float(v.reshape(-1)[0])
            for k, v in arrays.items() if k.startswith("meta.")}
    params = {k: v for k, v in arrays.items() if not k.startswith("meta.")}
    return params, meta
