"""Reverse-mode differentiation over dense 2-D arrays.

Every op returns a new :class:`Tensor`; when any input requires a gradient
the result remembers its parents and a closure mapping the output gradient
to input gradients.  :func:`backward` replays those records in reverse
execution order.  Index choices (top-k, argmax) are made by callers in
plain numpy and enter here only as constant index arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse, special

__all__ = [
    "Tensor",
    "ShapeError",
    "NotScalar",
    "NonFiniteError",
    "tensor",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "concat_cols",
    "slice_cols",
    "slice_rows",
    "tanh",
    "sigmoid",
    "softplus",
    "gated_softplus",
    "relu",
    "log",
    "exp",
    "clamp",
    "softmax",
    "sum_rows",
    "sum_cols",
    "sum_all",
    "mean_all",
    "row_select",
    "gather_sum",
    "segment_sum",
    "segment_softmax",
    "layer_norm",
    "backward",
    "finite_diff_check",
]

CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class NotScalar(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise NotScalar(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __mul__ = lambda self, other: mul(self, other)
    __matmul__ = lambda self, other: matmul(self, other)


def tensor(data, requires_grad: bool = True, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = fn
    return out


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def _bias_shape(a: Tensor, b: Tensor, op: str) -> bool:
    if a.shape == b.shape:
        return False
    if b.shape == (1, a.shape[1]):
        return True
    raise ShapeError(f"{op} {a.shape} with {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x cols row broadcast over rows."""
    a, b = constant(a), constant(b)
    row = _bias_shape(a, b, "add")
    back = (lambda g: (g, g.sum(axis=0, keepdims=True))) if row else (lambda g: (g, g))
    return _result(a.data + b.data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    row = _bias_shape(a, b, "sub")
    back = (lambda g: (g, -g.sum(axis=0, keepdims=True))) if row else (lambda g: (g, -g))
    return _result(a.data - b.data, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul {a.shape} with {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = constant(a)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, back, "concat_cols")


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    a = constant(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, lo:hi] = g
        return (full,)

    return _result(a.data[:, lo:hi], (a,), back, "slice_cols")


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    a = constant(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[lo:hi] = g
        return (full,)

    return _result(a.data[lo:hi], (a,), back, "slice_rows")


# -- elementwise ---------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    a = constant(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


_sigmoid = special.expit


def sigmoid(a: Tensor) -> Tensor:
    a = constant(a)
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _softplus(x: np.ndarray) -> np.ndarray:
    # stable log(1 + e^x); several times faster than np.logaddexp(0, x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a: Tensor) -> Tensor:
    a = constant(a)
    y = _softplus(a.data)
    # sigmoid(x) = 1 - exp(-softplus(x))
    return _result(y, (a,), lambda g: (g * -np.expm1(-y),), "softplus")


def gated_softplus(gate: Tensor, body: Tensor) -> Tensor:
    """sigmoid(gate) * softplus(body) as one fused op."""
    gate, body = constant(gate), constant(body)
    if gate.shape != body.shape:
        raise ShapeError(f"gated_softplus {gate.shape} with {body.shape}")
    s = _sigmoid(gate.data)
    sp = _softplus(body.data)

    def back(g):
        gs = g * s
        return gs * sp * (1.0 - s), gs * -np.expm1(-sp)

    return _result(s * sp, (gate, body), back, "gated_softplus")


def relu(a: Tensor) -> Tensor:
    a = constant(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def log(a: Tensor) -> Tensor:
    a = constant(a)
    x = a.data
    with np.errstate(divide="ignore"):
        y = np.log(x)
    return _result(y, (a,), lambda g: (g / x,), "log")


def exp(a: Tensor) -> Tensor:
    a = constant(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was inside."""
    a = constant(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def softmax(a: Tensor, axis: int = 1) -> Tensor:
    a = constant(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), back, "softmax")


# -- reductions and indexing ---------------------------------------------

def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows -> 1 x cols."""
    a = constant(a)
    n = a.shape[0]
    return _result(a.data.sum(axis=0, keepdims=True), (a,),
                   lambda g: (np.repeat(g, n, axis=0),), "sum_rows")


def sum_cols(a: Tensor) -> Tensor:
    """Sum across each row -> rows x 1."""
    a = constant(a)
    m = a.shape[1]
    return _result(a.data.sum(axis=1, keepdims=True), (a,),
                   lambda g: (np.repeat(g, m, axis=1),), "sum_cols")


def sum_all(a: Tensor) -> Tensor:
    a = constant(a)
    shape = a.shape
    return _result(a.data.sum().reshape(1, 1), (a,),
                   lambda g: (np.full(shape, g[0, 0], dtype=a.data.dtype),), "sum_all")


def mean_all(a: Tensor) -> Tensor:
    a = constant(a)
    return scale(sum_all(a), 1.0 / a.data.size)


def _scatter_matrix(index: np.ndarray, n_rows: int, dtype) -> sparse.csr_matrix:
    m = len(index)
    return sparse.csr_matrix((np.ones(m, dtype=dtype), (index, np.arange(m))), shape=(n_rows, m))


def row_select(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; repeated indices accumulate in backward."""
    a = constant(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"row index out of range for {n} rows")

    def back(g):
        return (_scatter_matrix(index, n, g.dtype) @ g,)

    return _result(a.data[index], (a,), back, "row_select")


def gather_sum(parts: Sequence[tuple[Tensor, np.ndarray | None]]) -> Tensor:
    """Sum of gathered rows: ``sum_k parts[k][0][parts[k][1]]``.

    An index of ``None`` means the tensor is a 1 x cols row broadcast to
    every output row.
    """
    parts = [(constant(t), None if idx is None else np.asarray(idx, dtype=np.int64)) for t, idx in parts]
    n_out = {len(idx) for _, idx in parts if idx is not None}
    if len(n_out) != 1:
        raise ShapeError("gather_sum needs at least one indexed part and equal index lengths")
    n_out = n_out.pop()
    cols = {t.shape[1] for t, _ in parts}
    if len(cols) != 1:
        raise ShapeError(f"gather_sum column mismatch: {[t.shape for t, _ in parts]}")
    out = np.zeros((n_out, cols.pop()), dtype=parts[0][0].data.dtype)
    for t, idx in parts:
        if idx is None:
            if t.shape[0] != 1:
                raise ShapeError(f"broadcast part must be one row, got {t.shape}")
            out += t.data
        else:
            out += t.data[idx]

    def back(g):
        grads = []
        for t, idx in parts:
            if idx is None:
                grads.append(g.sum(axis=0, keepdims=True))
            else:
                grads.append(np.asarray(_scatter_matrix(idx, t.shape[0], g.dtype) @ g))
        return tuple(grads)

    return _result(out, [t for t, _ in parts], back, "gather_sum")


def segment_sum(a: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Sum rows sharing a segment id -> n_segments x cols (empty segments are 0)."""
    a = constant(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (a.shape[0],):
        raise ShapeError(f"segment ids {seg.shape} for {a.shape}")
    S = _scatter_matrix(seg, n_segments, a.data.dtype)
    out = np.asarray(S @ a.data)
    return _result(out, (a,), lambda g: (g[seg],), "segment_sum")


def segment_softmax(a: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    a = constant(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (a.shape[0],):
        raise ShapeError(f"segment ids {seg.shape} for {a.shape}")
    x = a.data
    m = np.full((n_segments, x.shape[1]), -np.inf, dtype=x.dtype)
    np.maximum.at(m, seg, x)
    e = np.exp(x - m[seg])
    S = _scatter_matrix(seg, n_segments, x.dtype)
    y = e / np.asarray(S @ e)[seg]

    def back(g):
        gy = g * y
        return (gy - y * np.asarray(S @ gy)[seg],)

    return _result(y, (a,), back, "segment_softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean / unit variance, then affine."""
    a, gain, bias = constant(a), constant(gain), constant(bias)
    x = a.data
    d = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        gx = g * gain.data
        dx = inv / d * (d * gx - gx.sum(axis=1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _result(xhat * gain.data + bias.data, (a, gain, bias), back, "layer_norm")


# -- backward ------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.shape != (1, 1):
        raise NotScalar(f"backward needs a 1x1 loss, got {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not (parent.requires_grad or parent._backward is not None):
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      max_coords: int | None = None, rng: np.random.Generator | None = None,
                      pick: str = "random", floor: float = 1e-8) -> float:
    """Max relative error between backward() gradients and central differences.

    The error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    sets the magnitude below which a derivative counts as zero, and should sit
    above the round-off of the difference quotient (about ``1e-16 * |f| / eps``).
    ``f`` rebuilds the scalar loss from the current parameter values.  When
    ``max_coords`` is given, that many coordinates per tensor are checked:
    sampled uniformly (``pick="random"``) or those with the largest analytic
    gradient (``pick="largest"``), where difference quotients are far above
    round-off.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    backward(f())
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if pick == "largest":
                coords = np.argsort(-np.abs(analytic), kind="stable")[:max_coords]
            else:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = f().item()
            flat[c] = orig - eps
            down = f().item()
            flat[c] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
