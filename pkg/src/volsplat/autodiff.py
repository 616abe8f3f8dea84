"""Dense float64 tensors with a reverse-mode gradient tape.

A :class:`Tape` records every operation whose inputs are tracked.  Tracking
starts from leaves created with ``Tensor(..., requires_grad=True)`` while a
tape is active::

    with Tape() as tape:
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = (w @ w).sum()
    grads = backward(tape, loss)
    grads[w.node]

Tensors without a node are plain immutable arrays and can be shared freely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tape", "Tensor", "backward", "grad_check", "GradCheckReport", "record",
    "as_tensor", "matmul", "einsum", "softmax", "layer_norm", "add", "sub", "mul",
    "div", "neg", "exp", "log", "tanh", "sigmoid", "softplus", "gelu", "relu",
    "absolute", "sqrt", "square", "clip", "tsum", "mean", "reshape", "transpose",
    "take", "concat", "stack", "where", "segment_mean", "gather_weighted",
    "index", "active_tape",
]

_TAPES: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


@dataclass
class Tape:
    """Append-only record of tracked operations.

    Node ids are list positions, so inputs always precede outputs.
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def _add(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop recorded nodes and their saved values.

        Tensors point at their tape and backward closures point at tensors,
        so a finished tape is a reference cycle; clearing it lets a training
        loop free each step's memory without waiting for the cycle collector.
        """
        self.nodes.clear()


class Tensor:
    """An immutable float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node", "tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.node: int | None = None
        self.tape: Tape | None = None
        if requires_grad:
            tape = active_tape()
            if tape is None:
                raise ContractError("requires_grad=True needs an active Tape")
            self.tape = tape
            self.node = tape._add(_Node("leaf", (), None, arr.shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(out: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str = "custom") -> Tensor:
    """Wrap ``out`` as the result of an operation on ``inputs``.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    Saved values needed by the backward rule live in the closure.  When no
    input is tracked on the active tape the closure is discarded.
    """
    t = Tensor.__new__(Tensor)
    out = np.asarray(out, dtype=np.float64)
    out.flags.writeable = False
    t.data = out
    t.node = None
    t.tape = None
    tape = active_tape()
    if tape is None:
        return t
    ids = tuple(-1 if (x.node is None or x.tape is not tape) else x.node for x in inputs)
    if all(i < 0 for i in ids):
        return t
    t.tape = tape
    t.node = tape._add(_Node(op, ids, backward_fn, out.shape))
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``root``.

    Returns a map node id -> gradient for every node the root depends on.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if root.node is None or root.tape is not tape:
        return {}
    grads: dict[int, np.ndarray] = {root.node: np.ones(root.shape)}
    for nid in range(root.node, -1, -1):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.backward is None:
            continue
        parts = node.backward(g)
        for inp, gi in zip(node.inputs, parts):
            if inp < 0 or gi is None:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=np.float64), tape.nodes[inp].shape)
            prev = grads.get(inp)
            grads[inp] = gi.copy() if prev is None else prev + gi
    return grads


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.exp(x - out)
    return record(out, (a,), lambda g: (g * sig,), "softplus")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return record(out, (a,), bw, "gelu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return record(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def clip(a, lo, hi) -> Tensor:
    """Clamp; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    x = a.data
    out = np.clip(x, lo, hi)
    inside = (x >= lo) & (x <= hi)
    return record(out, (a,), lambda g: (g * inside,), "clip")


def where(mask, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    return record(np.where(mask, a.data, b.data), (a, b),
                  lambda g: (_unbroadcast(np.where(mask, g, 0.0), sa),
                             _unbroadcast(np.where(mask, 0.0, g), sb)), "where")


# ------------------------------------------------------------------ reductions

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# ---------------------------------------------------------------------- shapes

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def index(a, key) -> Tensor:
    """Basic or advanced indexing; the backward pass scatter-adds."""
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return record(a.data[key], (a,), bw, "index")


def take(a, idx, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        gm = np.moveaxis(g, axis, 0)
        om = np.moveaxis(out, axis, 0)
        np.add.at(om, idx, gm)
        return (out,)

    return record(np.take(a.data, idx, axis=axis), (a,), bw, "take")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return record(np.concatenate([p.data for p in parts], axis=axis), parts,
                  lambda g: np.split(g, cuts, axis=axis), "concat")


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    n = len(parts)
    return record(np.stack([p.data for p in parts], axis=axis), parts,
                  lambda g: [np.take(g, i, axis=axis) for i in range(n)], "stack")


# ---------------------------------------------------------------------- linear

def matmul(a, b) -> Tensor:
    """Matrix product; leading batch axes broadcast as in ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record(ad @ bd, (a, b), bw, "matmul")


def einsum(spec: str, *operands) -> Tensor:
    """``np.einsum`` with gradients.

    Every index of an operand must appear in the output or in another
    operand, and no operand may repeat an index.
    """
    ops = [as_tensor(o) for o in operands]
    lhs, out_sub = spec.replace(" ", "").split("->")
    subs = lhs.split(",")
    if len(subs) != len(ops):
        raise DimensionError(f"einsum '{spec}' expects {len(subs)} operands, got {len(ops)}")
    for s in subs:
        if len(set(s)) != len(s):
            raise ContractError(f"einsum operand '{s}' repeats an index")
    datas = [o.data for o in ops]
    out = np.einsum(spec, *datas, optimize=len(ops) > 2)

    def bw(g):
        grads = []
        for i, s in enumerate(subs):
            others = [subs[j] for j in range(len(ops)) if j != i]
            avail = set(out_sub).union(*others) if others else set(out_sub)
            missing = [c for c in s if c not in avail]
            if missing:
                raise ContractError(f"einsum '{spec}': index {missing} unreachable in backward")
            terms = ",".join([out_sub] + others)
            args = [g] + [datas[j] for j in range(len(ops)) if j != i]
            grads.append(np.einsum(f"{terms}->{s}", *args, optimize=len(args) > 2))
        return grads

    return record(out, ops, bw, "einsum")


# ----------------------------------------------------------------- normalizers

def softmax(x, axis: int = -1) -> Tensor:
    """Softmax with max subtraction; rows that are entirely -inf give zeros."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {x.shape}")
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    dead = ~np.isfinite(m)
    m = np.where(dead, 0.0, m)
    e = np.exp(d - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.where(dead, 0.0, e / np.where(dead, 1.0, s))

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return record(out, (x,), bw, "softmax")


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x = as_tensor(x)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = g * xhat
        return (inv * (g - gm - xhat * gx.mean(axis=-1, keepdims=True)),)

    out = record(xhat, (x,), bw, "layer_norm")
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


# -------------------------------------------------------------- gather/scatter

def segment_mean(x, seg: np.ndarray, n_seg: int) -> Tensor:
    """Mean of the rows of ``x`` sharing a segment id."""
    x = as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=n_seg).astype(np.float64)
    if np.any(counts == 0):
        raise ContractError("segment_mean: empty segment")
    out = np.zeros((n_seg,) + x.shape[1:])
    np.add.at(out, seg, x.data)
    scale = 1.0 / counts.reshape((-1,) + (1,) * (x.ndim - 1))
    out *= scale
    return record(out, (x,), lambda g: ((g * scale)[seg],), "segment_mean")


def gather_weighted(table, idx: np.ndarray, w: np.ndarray) -> Tensor:
    """``out[k] = sum_j w[k, j] * table[idx[k, j]]`` for a 2-D ``table``."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    rows = table.data[idx]  # (K, J, C)
    out = np.einsum("kj,kjc->kc", w, rows)
    shape = table.shape

    def bw(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx.reshape(-1), (w[..., None] * g[:, None, :]).reshape(-1, shape[1]))
        return (gt,)

    return record(out, (table,), bw, "gather_weighted")


# --------------------------------------------------------------- verification

@dataclass
class GradCheckReport:
    max_rel_error: float
    tape_grad: np.ndarray
    fd_grad: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-6, tol: float = 1e-5,
               coords: np.ndarray | None = None) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` with central differences.

    ``coords`` restricts the finite-difference probe to a subset of flat
    indices.  Relative error is ``|a - b| / max(|a|, |b|, 1e-8)`` per entry.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    with Tape() as tape:
        xt = Tensor(x0, requires_grad=True)
        y = f(xt)
        grads = backward(tape, y)
    tg = grads.get(xt.node, np.zeros_like(x0)).reshape(-1)
    flat = x0.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    fd = np.zeros(len(coords))
    for j, i in enumerate(coords):
        xp = flat.copy()
        xp[i] += step
        xm = flat.copy()
        xm[i] -= step
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        fd[j] = (fp - fm) / (2 * step)
    sel = tg[coords]
    denom = np.maximum(np.maximum(np.abs(sel), np.abs(fd)), 1e-8)
    rel = np.abs(sel - fd) / denom
    return GradCheckReport(float(rel.max(initial=0.0)), sel, fd, tol)

