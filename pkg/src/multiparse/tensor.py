"""Dense float64 tensors with reverse-mode gradients on an explicit tape.

Vectors are 1-D arrays, matrices are 2-D, scalars are shape-(1,) tensors,
all row-major float64. The op set is the closure needed by a GRU
encoder-decoder with additive attention and a joint write/copy softmax:
matmul, a few elementwise ops with row broadcasting, masked softmax,
concat/reshape/gather, and the scalar reductions used by the training
loss. There is no general broadcasting engine.

Ops executed inside a `with Tape() as tape:` block record enough state to
replay the chain rule in reverse; outside any tape they are plain forward
computations. Gradients accumulate into Parameter.grad on
`tape.backward(loss)`. The backward pass never mutates forward values.
"""

from __future__ import annotations

import logging
import math
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Tensor", "Parameter", "Tape", "NumericError", "GradCheckResult",
    "matmul", "add", "sub", "mul", "tanh", "sigmoid", "softmax", "concat",
    "stack_rows", "reshape", "rows", "take", "sum_all", "scale", "log",
    "dropout", "record", "zeros", "zero_grads", "grad_check", "sgd_step",
    "save_params", "load_params", "restore_params",
]


class NumericError(RuntimeError):
    """A value that must be finite is not."""


# ---------- tensors ----------

class Tensor:
    """Dense float64 array. Treated as immutable once created."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor has {self.data.size} entries, expected 1")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """Named trainable tensor with a persistent gradient buffer of the same shape."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0


# ---------- tape ----------

_ACTIVE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_ACTIVE, "tape", None)


class Tape:
    """Ordered record of executed ops for one forward pass.

    Each record holds the output tensor, the input tensors, and a backward
    callable mapping the output gradient to one gradient (or None) per input.
    backward() walks the records once in reverse, accumulating into
    Parameter.grad for parameter leaves.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active in this thread")
        _ACTIVE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.tape = None

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self._records.append((out, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, bwd in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue  # op does not influence the loss
            for t, gi in zip(inputs, bwd(g)):
                if gi is None:
                    continue
                if isinstance(t, Parameter):
                    t.grad += gi
                else:
                    acc = grads.get(id(t))
                    grads[id(t)] = gi if acc is None else acc + gi


def record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
    """Register a custom op on the active tape, if any.

    `backward(grad_out)` must return one array or None per input, each
    matching that input's shape, without mutating anything it captured.
    """
    tape = _active_tape()
    if tape is not None:
        tape.record(out, inputs, backward)


# ---------- ops ----------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (m, k) @ b (k, n) -> (m, n)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)

    def backward(g):
        return g @ bd.T, ad.T @ g

    record(out, (a, b), backward)
    return out


def _is_row_of(small: tuple, big: tuple) -> bool:
    # (n,) or (1, n) broadcasts over the rows of (m, n)
    return len(big) == 2 and small in ((big[1],), (1, big[1]))


def _check_elementwise(name: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or _is_row_of(sb, sa) or _is_row_of(sa, sb):
        return
    raise ValueError(f"{name}: incompatible shapes {sa} and {sb}; "
                     "only exact match or row broadcast is supported")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the broadcast rows so it matches the operand shape."""
    if g.shape == shape:
        return g
    return g.sum(axis=0).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    out = Tensor(a.data + b.data)
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    record(out, (a, b), backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    out = Tensor(a.data - b.data)
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _reduce_to(g, sa), _reduce_to(-g, sb)

    record(out, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)

    def backward(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    record(out, (a, b), backward)
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    od = out.data

    def backward(g):
        return (g * (1.0 - od * od),)

    record(out, (x,), backward)
    return out


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # two-branch form keeps exp() off large positive arguments
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_sigmoid(x.data))
    od = out.data

    def backward(g):
        return (g * od * (1.0 - od),)

    record(out, (x,), backward)
    return out


def softmax_values(v: np.ndarray, mask=None) -> np.ndarray:
    """Plain-array stable softmax of a 1-D vector, probability exactly 0 where
    masked. Shared by every op that normalizes scores."""
    if v.ndim != 1:
        raise ValueError(f"softmax: expected 1-D input, got shape {v.shape}")
    if mask is None:
        e = np.exp(v - v.max())
        return e / e.sum()
    m = np.asarray(mask, dtype=bool)
    if m.shape != v.shape:
        raise ValueError(f"softmax: mask shape {m.shape} does not match {v.shape}")
    if m.all():
        e = np.exp(v - v.max())
        return e / e.sum()
    if not m.any():
        raise ValueError("softmax: all positions masked")
    vm = v[m]
    e = np.zeros_like(v)
    e[m] = np.exp(vm - vm.max())
    return e / e.sum()


def softmax(x: Tensor, mask=None) -> Tensor:
    """Stable softmax of a 1-D tensor; masked positions get probability exactly 0.

    mask is a boolean array, True where the position participates. At least
    one position must be unmasked.
    """
    out = Tensor(softmax_values(x.data, mask))
    pd = out.data

    def backward(g):
        # d/dx_i = p_i * (g_i - g.p); masked entries have p_i = 0
        return (pd * (g - float(g @ pd)),)

    record(out, (x,), backward)
    return out


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ValueError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    if not 0 <= axis < a.data.ndim:
        raise ValueError(f"concat: axis {axis} out of range for rank {a.data.ndim}")
    for ax in range(a.data.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise ValueError(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    out = Tensor(np.concatenate([a.data, b.data], axis=axis))
    k = a.data.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [k], axis=axis)
        return np.ascontiguousarray(ga), np.ascontiguousarray(gb)

    record(out, (a, b), backward)
    return out


def stack_rows(ts: Sequence[Tensor]) -> Tensor:
    """Stack n tensors of shape (1, d) into (n, d)."""
    if not ts:
        raise ValueError("stack_rows: empty input")
    for t in ts:
        if t.data.ndim != 2 or t.shape[0] != 1 or t.shape[1] != ts[0].shape[1]:
            raise ValueError(f"stack_rows: expected rows (1, {ts[0].shape[1]}), got {t.shape}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=0))

    def backward(g):
        return tuple(g[i:i + 1] for i in range(len(ts)))

    record(out, tuple(ts), backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    orig = x.data.shape

    def backward(g):
        return (g.reshape(orig),)

    record(out, (x,), backward)
    return out


def rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a (V, d) tensor: out[i] = table[ids[i]]. Used for embeddings."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"rows: ids must be 1-D, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise ValueError(f"rows: table must be 2-D, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError(f"rows: id out of range for table with {table.shape[0]} rows")
    td = table.data
    out = Tensor(td[idx])

    if isinstance(table, Parameter):
        # parameter tables can be huge; scatter straight into the gradient
        # buffer instead of materializing a dense table-sized array
        def backward(g):
            np.add.at(table.grad, idx, g)
            return (None,)
    else:
        def backward(g):
            gt = np.zeros_like(td)
            np.add.at(gt, idx, g)
            return (gt,)

    record(out, (table,), backward)
    return out


def take(x: Tensor, ids) -> Tensor:
    """Gather entries of a 1-D tensor: out[i] = x[ids[i]]."""
    idx = np.asarray(ids, dtype=np.intp)
    if x.data.ndim != 1:
        raise ValueError(f"take: expected 1-D input, got shape {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.size):
        raise ValueError(f"take: index out of range for length {x.data.size}")
    xd = x.data
    out = Tensor(xd[idx])

    def backward(g):
        gx = np.zeros_like(xd)
        np.add.at(gx, idx, g)
        return (gx,)

    record(out, (x,), backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, as a shape-(1,) tensor."""
    out = Tensor(np.array([x.data.sum()]))
    shape = x.data.shape

    def backward(g):
        return (np.full(shape, g[0]),)

    record(out, (x,), backward)
    return out


def add_n(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise sum of same-shaped tensors in a single record."""
    if not xs:
        raise ValueError("add_n: empty input list")
    shape = xs[0].data.shape
    for x in xs[1:]:
        if x.data.shape != shape:
            raise ValueError(f"add_n: shape {x.data.shape} does not match {shape}")
    total = xs[0].data.copy()
    for x in xs[1:]:
        total += x.data
    out = Tensor(total)
    n = len(xs)

    def backward(g):
        return (g,) * n

    record(out, tuple(xs), backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)

    def backward(g):
        return (g * c,)

    record(out, (x,), backward)
    return out


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log. With a floor, inputs below it are clamped first (zero
    gradient there) and the event is logged rather than silently ignored."""
    v = x.data
    if floor is None:
        if (v <= 0).any():
            raise NumericError("log: nonpositive input and no floor given")
        out = Tensor(np.log(v))

        def backward(g):
            return (g / v,)
    else:
        low = v < floor
        if low.any():
            logger.warning("log: %d value(s) floored at %.3g before log", int(low.sum()), floor)
        clipped = np.maximum(v, floor)
        out = Tensor(np.log(clipped))

        def backward(g):
            return (np.where(low, 0.0, g / clipped),)

    record(out, (x,), backward)
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p) so expectations match."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask)

    def backward(g):
        return (g * mask,)

    record(out, (x,), backward)
    return out


# ---------- optimizer ----------

def sgd_step(params: Iterable[Parameter], lr: float, clip_norm: float | None = 5.0) -> float:
    """Clip gradients to a global L2 norm, apply theta -= lr * grad, zero grads.

    Returns the pre-clip gradient norm. Non-finite gradients raise
    NumericError before any parameter is touched.
    """
    ps = list(params)
    total = 0.0
    for p in ps:
        s = float((p.grad * p.grad).sum())
        if not math.isfinite(s):
            raise NumericError(f"sgd_step: non-finite gradient in {p.name}; update skipped")
        total += s
    norm = math.sqrt(total)
    factor = 1.0
    if clip_norm is not None and norm > clip_norm > 0:
        factor = clip_norm / norm
    for p in ps:
        if factor != 1.0:
            p.grad *= factor
        p.data -= lr * p.grad
        p.grad[...] = 0.0
    return norm


# ---------- gradient checking ----------

@dataclass
class GradCheckResult:
    max_rel_err: float
    tol: float
    worst_param: str
    worst_index: int
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} "
                f"worst={self.worst_param}[{self.worst_index}] over {self.n_entries} entries")


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Parameter],
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckResult:
    """Compare tape gradients of a deterministic scalar loss to central differences.

    loss_fn must rebuild its forward pass on every call and must not use
    dropout or other nondeterminism. Relative error per entry is
    |a - b| / max(|a|, |b|, 1e-8), and the maximum over all entries of all
    params is reported.
    """
    ps = list(params)
    zero_grads(ps)
    with Tape() as tape:
        loss = loss_fn()
        base = loss.item()
    if not math.isfinite(base):
        raise NumericError("grad_check: loss is not finite")
    tape.backward(loss)
    analytic = [p.grad.copy() for p in ps]
    zero_grads(ps)

    worst = 0.0
    worst_param = ""
    worst_index = -1
    n_entries = 0
    for p, ga in zip(ps, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn().item()
            flat[i] = orig - h
            lm = loss_fn().item()
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError(f"grad_check: non-finite loss while perturbing {p.name}")
            num = (lp - lm) / (2.0 * h)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-8)
            if err > worst:
                worst, worst_param, worst_index = err, p.name, i
            n_entries += 1
    return GradCheckResult(worst, tol, worst_param, worst_index, n_entries)


# ---------- parameter serialization ----------

_MAGIC = b"MPAR"
_VERSION = 1


def save_params(params, path) -> None:
    """Write parameters as a flat sequence of (name, shape, float64 values) records.

    Accepts an iterable of Parameter or a name->array mapping. The binary
    layout is fixed little-endian, so identical values produce identical bytes.
    """
    if isinstance(params, Mapping):
        items = [(str(k), np.ascontiguousarray(v, dtype=np.float64)) for k, v in params.items()]
    else:
        items = [(p.name, p.data) for p in params]
    seen = set()
    for name, _ in items:
        if name in seen:
            raise ValueError(f"save_params: duplicate parameter name {name!r}")
        seen.add(name)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
            f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_params(path) -> dict[str, np.ndarray]:
    """Read a parameter file back into an ordered name->array dict."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"load_params: {path} is not a parameter file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise ValueError(f"load_params: unsupported format version {version}")
    (count,) = struct.unpack_from("<I", raw, 8)
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        if name in out:
            raise ValueError(f"load_params: duplicate parameter name {name!r}")
        out[name] = np.ascontiguousarray(arr)
    if off != len(raw):
        raise ValueError("load_params: trailing bytes after last record")
    return out


def restore_params(params: Iterable[Parameter], state: Mapping[str, np.ndarray]) -> None:
    """Copy saved arrays into parameters, matching strictly by name and shape."""
    ps = list(params)
    names = {p.name for p in ps}
    missing = names - set(state)
    extra = set(state) - names
    if missing or extra:
        raise ValueError(f"restore_params: missing={sorted(missing)} extra={sorted(extra)}")
    for p in ps:
        arr = state[p.name]
        if arr.shape != p.data.shape:
            raise ValueError(f"restore_params: {p.name} has shape {arr.shape}, expected {p.data.shape}")
        p.data[...] = arr
        p.grad[...] = 0.0
