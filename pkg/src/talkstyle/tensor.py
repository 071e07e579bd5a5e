"""Dense float64 tensors with a tape-based reverse-mode autodiff.

Operations only record onto a tape when one is active (``with Tape() as t``)
and at least one input requires a gradient.  Outside a tape everything runs
as plain numpy, which is what inference uses.

Broadcasting is deliberately limited to scalar scaling; row broadcasts go
through :func:`expand_rows` so that shapes stay explicit.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as operations execute, so the list is topologically
    ordered by construction.  Tapes are thread-local: a tape opened in one
    thread is invisible to others.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def apply(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``value`` as the output of a primitive.

    ``backward(g)`` must return one gradient (or None) per entry of
    ``inputs``.  This is the extension point for new primitives.
    """
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        node = _Node(out, tuple(inputs), backward)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every grad-requiring tensor on ``tape``.

    Leaf gradients accumulate across calls; tensors that are on the tape but
    not reachable from ``loss`` end up with zero gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = set()
    for node in tape.nodes:
        node.out.grad = None
        produced.add(id(node.out))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                # leaves may be rescaled in place later (clipping), never alias
                inp.grad = np.array(gi, dtype=np.float64, copy=True) if id(inp) not in produced else gi
            else:
                inp.grad = inp.grad + gi
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and inp.grad is None:
                inp.grad = np.zeros_like(inp.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def check_finite(*tensors: Tensor) -> None:
    """Audit: raise if any value or gradient is NaN/Inf."""
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError(f"non-finite values in {t!r}")
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise FloatingPointError(f"non-finite gradient in {t!r}")


# ---------------------------------------------------------------------------
# kink monitor: piecewise-linear ops report their branch pattern so the
# gradient checker can tell when a finite-difference stencil straddles a kink


class KinkMonitor:
    def __init__(self):
        self.patterns: list[bytes] = []

    def __enter__(self):
        self._prev = getattr(_local, "kinks", None)
        _local.kinks = self
        return self

    def __exit__(self, *exc):
        _local.kinks = self._prev


def _note_kink(mask: np.ndarray) -> None:
    mon = getattr(_local, "kinks", None)
    if mon is not None:
        mon.patterns.append(np.packbits(mask.reshape(-1)).tobytes())


# ---------------------------------------------------------------------------
# elementwise


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return apply(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return apply(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return apply(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return apply(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    _note_kink(mask)
    return apply(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    _note_kink(s > 0)
    return apply(np.abs(a.data), (a,), lambda g: (g * s,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return apply(x * x, (a,), lambda g: (2.0 * g * x,))


def sum_all(a: Tensor) -> Tensor:
    shp = a.shape
    return apply(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shp),))


def mean_all(a: Tensor) -> Tensor:
    shp, n = a.shape, a.size
    return apply(np.array(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shp),))


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return apply(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        val = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from e
    return apply(val, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return apply(a.data.T, (a,), lambda g: (g.T,))


def expand_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a length-D vector (or 1xD row) into an n x D matrix."""
    d = v.shape[-1]
    if v.size != d:
        raise ShapeError(f"expand_rows expects a vector, got {v.shape}")
    vshape = v.shape
    val = np.broadcast_to(v.data.reshape(1, d), (n, d)).copy()
    return apply(val, (v,), lambda g: (g.sum(axis=0).reshape(vshape),))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    shp = a.shape

    def bw(g):
        full = np.zeros(shp)
        full[start:stop] = g
        return (full,)

    return apply(a.data[start:stop], (a,), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shp = a.shape

    def bw(g):
        full = np.zeros(shp)
        full[:, start:stop] = g
        return (full,)

    return apply(a.data[:, start:stop], (a,), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return apply(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    heights = [p.shape[0] for p in parts]
    edges = np.cumsum([0] + heights)

    def bw(g):
        return tuple(g[edges[i]:edges[i + 1]] for i in range(len(parts)))

    return apply(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw)


def gather_rows(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    shp = table.shape

    def bw(g):
        full = np.zeros(shp)
        np.add.at(full, ids, g)
        return (full,)

    return apply(table.data[ids], (table,), bw)


def gather_cols(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shp = a.shape

    def bw(g):
        full = np.zeros(shp)
        np.add.at(full, (slice(None), idx), g)
        return (full,)

    return apply(a.data[:, idx], (a,), bw)


def repeat_rows(a: Tensor, counts) -> Tensor:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (a.shape[0],):
        raise ShapeError(f"repeat_rows: {len(counts)} counts for {a.shape[0]} rows")
    owner = np.repeat(np.arange(a.shape[0]), counts)
    shp = a.shape

    def bw(g):
        full = np.zeros(shp)
        np.add.at(full, owner, g)
        return (full,)

    return apply(a.data[owner], (a,), bw)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows, returned as 1 x D."""
    n, shp = a.shape[0], a.shape
    return apply(a.data.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g / n, shp),))


def maxpool_rows(a: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Temporal max pooling along rows (no padding, trailing rows dropped)."""
    n, d = a.shape
    if n < k:
        raise ShapeError(f"maxpool_rows: need at least {k} rows, got {n}")
    m = (n - k) // stride + 1
    win = np.stack([a.data[i * stride:i * stride + k] for i in range(m)])  # m,k,d
    arg = win.argmax(axis=1)
    _note_kink(np.eye(k, dtype=bool)[arg])
    src = arg * 1 + (np.arange(m) * stride)[:, None]  # m,d row indices

    def bw(g):
        full = np.zeros((n, d))
        np.add.at(full, (src, np.broadcast_to(np.arange(d), (m, d))), g)
        return (full,)

    return apply(np.take_along_axis(win, arg[:, None, :], axis=1)[:, 0, :], (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return apply(ad @ bd, (a, b), bw)


def const_matmul(m, a: Tensor) -> Tensor:
    """``m @ a`` for a constant (dense or scipy-sparse) matrix ``m``."""
    if m.shape[1] != a.shape[0]:
        raise ShapeError(f"const_matmul: {m.shape} @ {a.shape}")
    mt = m.T
    return apply(np.asarray(m @ a.data), (a,), lambda g: (np.asarray(mt @ g),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    y = matmul(x, transpose(weight))
    if bias is not None:
        y = add(y, expand_rows(bias, y.shape[0]))
    return y


def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return apply(y, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data.reshape(1, d)
    out = xhat * gd + bias.data.reshape(1, d)
    gshape, bshape = gain.shape, bias.shape

    def bw(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return (dx, (g * xhat).sum(axis=0).reshape(gshape), g.sum(axis=0).reshape(bshape))

    return apply(out, (x, gain, bias), bw)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length 1-D convolution over rows of a T x C_in input.

    ``weight`` has shape (C_out, C_in, k) with odd ``k``; zero padding of
    ``k // 2`` rows on each side.
    """
    c_out, c_in, k = weight.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel size must be odd, got {k}")
    t, cx = x.shape
    if cx != c_in:
        raise ShapeError(f"conv1d: input has {cx} channels, weight expects {c_in}")
    pad = k // 2
    xp = np.zeros((t + 2 * pad, c_in))
    xp[pad:pad + t] = x.data
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # t, c_in, k
    cols = cols.reshape(t, c_in * k)
    wmat = weight.data.reshape(c_out, c_in * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data.reshape(1, c_out)

    def bw(g):
        gw = (g.T @ cols).reshape(c_out, c_in, k) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g @ wmat).reshape(t, c_in, k)
            gxp = np.zeros((t + 2 * pad, c_in))
            for j in range(k):
                gxp[j:j + t] += gcols[:, :, j]
            gx = gxp[pad:pad + t]
        gb = g.sum(axis=0).reshape(bias.shape) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return apply(out, inputs, bw)
