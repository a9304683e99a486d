"""Dense float64 tensors with reverse-mode differentiation.

Covers exactly what the attention model and ranking loss need: matmul,
elementwise arithmetic, relu/tanh/exp, softmax, reductions, concat/slice,
and the two sparse-adjacency helpers (gather rows, segment sum).  The
gradient checker doubles as the acceptance instrument: central differences
with automatic exclusion of entries whose perturbation flips a relu.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class GradCheckError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_mask")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op
        self._mask = None  # relu sign pattern, used by grad_check

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)


def tensor(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # own copy; g may alias a child grad
    else:
        t.grad += g


def _make(data, parents, backward, op) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents,
                  backward=backward if req else None, op=op)


# -- primitives --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))
    return _make(out, (a, b), back, "add")


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return _make(out, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _make(out, (a, b), back, "div")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)
    return _make(out, (a, b), back, "matmul")


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: need equal-length vectors, got {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)
    return _make(out, (a, b), back, "dot")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def back(g):
        if a.requires_grad:
            _accum(a, g * mask)
    t = _make(out, (a,), back, "relu")
    t._mask = mask
    return t


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - out * out))
    return _make(out, (a,), back, "tanh")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def back(g):
        if a.requires_grad:
            _accum(a, g * out)
    return _make(out, (a,), back, "exp")


def softmax(a, axis: int = -1) -> Tensor:
    """Max-stabilized softmax; outputs sum to 1 along axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            _accum(a, (g - inner) * out)
    return _make(out, (a,), back, "softmax")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())
    return _make(out, (a,), back, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def back(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))
    return _make(out, (a,), back, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in ts)
        raise ShapeError(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                _accum(t, piece)
    return _make(out, tuple(ts), back, "concat")


def narrow(a, key) -> Tensor:
    """Basic slicing; gradient scatters back into the parent's shape."""
    a = _as_tensor(a)
    out = a.data[key]

    def back(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, key, g)
    return _make(out, (a,), back, "slice")


def _scatter_plan(idx: np.ndarray):
    """(order, starts, rows) for duplicate-safe scatter-add via reduceat;
    order is None when idx is already sorted."""
    if len(idx) == 0:
        return None, None, None
    if bool(np.all(idx[:-1] <= idx[1:])):
        order = None
        sorted_idx = idx
    else:
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
    starts = np.flatnonzero(np.concatenate([[True], sorted_idx[1:] != sorted_idx[:-1]]))
    return order, starts, sorted_idx[starts]


def _scatter_rows_add(target: np.ndarray, plan, g: np.ndarray) -> None:
    order, starts, rows = plan
    if starts is None:
        return
    gs = g if order is None else g[order]
    target[rows] += np.add.reduceat(gs, starts, axis=0)


def _segment_reduce(data: np.ndarray, seg: np.ndarray, n: int, ufunc, init: float) -> np.ndarray:
    """Per-segment ufunc reduction; fast path via reduceat when seg is sorted."""
    out = np.full((n,) + data.shape[1:], init, dtype=np.float64)
    if len(seg) == 0:
        return out
    if bool(np.all(seg[:-1] <= seg[1:])):
        starts = np.flatnonzero(np.concatenate([[True], seg[1:] != seg[:-1]]))
        out[seg[starts]] = ufunc.reduceat(data, starts, axis=0)
    else:
        ufunc.at(out, seg, data)
    return out


def gather(a, idx) -> Tensor:
    """Select rows (axis 0) by integer array; duplicate rows allowed."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]
    plan_cache: list = []

    def back(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            if not plan_cache:
                plan_cache.append(_scatter_plan(idx))
            _scatter_rows_add(a.grad, plan_cache[0], g)
    return _make(out, (a,), back, "gather")


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of a into num_segments buckets keyed by segment_ids."""
    a = _as_tensor(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != a.data.shape[0]:
        raise ShapeError(f"segment_sum: {seg.shape[0]} ids for {a.data.shape[0]} rows")
    out = _segment_reduce(a.data, seg, num_segments, np.add, 0.0)

    def back(g):
        if a.requires_grad:
            _accum(a, g[seg])
    return _make(out, (a,), back, "segment_sum")


def spmm(adj, adj_t, x) -> Tensor:
    """Fixed sparse matrix (scipy CSR) times dense tracked tensor; adj_t must
    be the precomputed transpose of adj."""
    x = _as_tensor(x)
    if adj.shape[1] != x.data.shape[0]:
        raise ShapeError(f"spmm: {adj.shape} @ {x.data.shape}")
    out = adj @ x.data

    def back(g):
        if x.requires_grad:
            _accum(x, adj_t @ g)
    return _make(out, (x,), back, "spmm")


def segment_softmax(logits: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, per column, max-stabilized.

    The per-segment max is treated as a constant shift, which leaves both the
    value and the gradient of the softmax unchanged.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    hi = _segment_reduce(logits.data, seg, num_segments, np.maximum, -np.inf)
    e = exp(add(logits, Tensor(-hi[seg])))
    denom = segment_sum(e, seg, num_segments)
    return div(e, gather(denom, seg))


# -- differentiation ----------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the graph below root."""
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
    """Accumulate d(loss)/d(param) into .grad of every tracked leaf.

    Interior gradients are recomputed per call; leaf gradients accumulate
    across calls until zero_grad.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    if loss.requires_grad:
        _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def relu_signature(loss: Tensor) -> bytes:
    """Digest of every relu activation pattern reachable from loss.

    Two evaluations with equal signatures lie on the same smooth piece of the
    function, so central differences across them see no kink.
    """
    h = hashlib.blake2b(digest_size=16)
    for node in _topo(loss):
        if node._mask is not None:
            h.update(np.asarray(node._mask.shape, dtype=np.int64).tobytes())
            h.update(np.packbits(node._mask.reshape(-1)).tobytes())
    return h.digest()


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    excluded: list  # (param name, flat index) entries straddling a relu kink

    def __float__(self):
        return self.max_rel_error


def grad_check(f, params: dict[str, Tensor], eps: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients of the scalar f() against central
    finite differences over every entry of every parameter.

    Relative error per entry is |analytic - numeric| / max(1e-8,
    |analytic| + |numeric|).  Entries whose +/-eps evaluations disagree on
    any relu sign are excluded rather than checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params.values():
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise GradCheckError("non-finite loss in gradient check")
    backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    max_err = 0.0
    n_checked = 0
    excluded: list[tuple[str, int]] = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = f()
            sig_p = relu_signature(lp)
            flat[i] = orig - eps
            lm = f()
            sig_m = relu_signature(lm)
            flat[i] = orig
            if not (np.isfinite(lp.data).all() and np.isfinite(lm.data).all()):
                raise GradCheckError(f"non-finite value perturbing {name}[{i}]")
            if sig_p != sig_m:
                excluded.append((name, i))
                continue
            numeric = (lp.item() - lm.item()) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            max_err = max(max_err, err)
            n_checked += 1
    return GradCheckResult(max_rel_error=max_err, n_checked=n_checked, excluded=excluded)
