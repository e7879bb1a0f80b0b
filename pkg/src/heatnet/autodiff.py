"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the graph model needs are implemented: matmul,
elementwise arithmetic, concatenation, row gathering, reductions,
row/segment softmax, leaky ReLU, dropout-mask application, and
cross-entropy. Everything is float64 and any op that produces NaN/Inf
raises NonFiniteError.

Reductions whose operand order depends on node/edge ordering (segment
aggregation, per-segment softmax denominators, column means) use exactly
rounded summation via math.fsum, so their results are independent of row
permutation. This is what makes node-relabeling equivariance bit-exact.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NonFiniteError, ShapeError

Array = np.ndarray

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: Array, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backward().

    Leaves are created directly with ``requires_grad=True``; every other
    tensor is produced by the ops below, which record a vector-Jacobian
    closure on the tape while grad mode is on.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], Sequence[Array | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def on_tape(self) -> bool:
        return self.requires_grad or self._vjp is not None

    def backward(self) -> dict["Tensor", Array]:
        return backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Operator sugar; scalars are lifted to constant tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.on_tape() for p in parents):
        out._parents = parents
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum out broadcast dimensions so grad matches the original shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), vjp, "add")


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return _make(-a.data, (a,), vjp, "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.on_tape() else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.on_tape() else None
        return (ga, gb)

    return _make(out, (a, b), vjp, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _make(a.data * s, (a,), vjp, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product, recorded on tape when grad mode is on."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T if a.on_tape() else None
        gb = a.data.T @ g if b.on_tape() else None
        return (ga, gb)

    return _make(out, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.data.shape}")

    def vjp(g):
        return (g.T.copy(),)

    return _make(a.data.T.copy(), (a,), vjp, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...] | list[int]) -> Tensor:
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _make(a.data.reshape(shape).copy(), (a,), vjp, "reshape")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(piece if p.on_tape() else None
                     for p, piece in zip(parts, np.split(g, offsets, axis=axis)))

    return _make(out, tuple(parts), vjp, "concat")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; duplicate indices are allowed."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a 1-D index array")
    n = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows index out of range for {n} rows")
    out = a.data[idx]

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)

    return _make(out, (a,), vjp, "gather_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got {a.data.shape}")

    def vjp(g):
        da = np.zeros_like(a.data)
        da[:, start:stop] = g
        return (da,)

    return _make(a.data[:, start:stop].copy(), (a,), vjp, "slice_cols")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        out = np.asarray(math.fsum(a.data.ravel().tolist()))

        def vjp(g):
            return (np.full(a.data.shape, float(g)),)

        return _make(out, (a,), vjp, "sum")

    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp_axis(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, (a,), vjp_axis, "sum")


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    if n == 0:
        raise ShapeError("mean over an empty axis")
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_rows(a: Tensor) -> Tensor:
    """Column means of a 2-D tensor as a (1, d) row, exactly rounded.

    Using fsum per column makes the result independent of row order, which
    the pooling layers rely on for permutation equivariance.
    """
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a 2-D tensor, got {a.data.shape}")
    n, d = a.data.shape
    if n == 0:
        raise ShapeError("mean_rows of an empty tensor")
    cols = a.data.T.tolist()
    out = np.array([[math.fsum(col) / n for col in cols]])

    def vjp(g):
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _make(out, (a,), vjp, "mean_rows")


# ---------------------------------------------------------------------------
# nonlinearities and losses
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by max subtraction."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got {x.data.shape}")
    if x.data.shape[1] == 0:
        raise ShapeError("softmax over an empty row dimension")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    w = ex / ex.sum(axis=1, keepdims=True)

    def vjp(g):
        dots = np.sum(g * w, axis=1, keepdims=True)
        return (w * (g - dots),)

    return _make(w, (x,), vjp, "softmax_rows")


def leaky_relu(x: Tensor, negative_slope: float = 0.01) -> Tensor:
    mask = np.where(x.data > 0.0, 1.0, negative_slope)

    def vjp(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), vjp, "leaky_relu")


def dropout(x: Tensor, drop_prob: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout: scales kept entries by 1/keep; identity in eval."""
    if not training or drop_prob == 0.0:
        return x
    if not 0.0 <= drop_prob < 1.0:
        raise ConfigError(f"drop_prob must be in [0, 1), got {drop_prob}")
    if rng is None:
        raise ConfigError("dropout in training mode requires an rng")
    keep = 1.0 - drop_prob
    mask = (rng.random(x.data.shape) < keep).astype(np.float64) / keep
    return mul(x, Tensor(mask))


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label] for a 1-D logits tensor, stabilized."""
    d = logits.data
    if d.ndim != 1:
        raise ShapeError(f"cross_entropy expects 1-D logits, got {d.shape}")
    n = d.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    m = d.max()
    lse = m + math.log(math.fsum(np.exp(d - m).tolist()))
    out = np.asarray(lse - d[label])

    def vjp(g):
        p = np.exp(d - lse)
        p[label] -= 1.0
        return (p * float(g),)

    return _make(out, (logits,), vjp, "cross_entropy")


# ---------------------------------------------------------------------------
# segment ops (attention over incoming edges, per-target aggregation)
# ---------------------------------------------------------------------------

def _check_partition(segments: Sequence[Array], n_rows: int, op: str) -> list[Array]:
    segs = [np.asarray(s, dtype=np.intp) for s in segments]
    total = sum(len(s) for s in segs)
    if total != n_rows:
        raise ContractError(f"{op}: segments cover {total} rows, tensor has {n_rows}")
    if n_rows:
        seen = np.zeros(n_rows, dtype=bool)
        for s in segs:
            seen[s] = True
        if not seen.all():
            raise ContractError(f"{op}: segments do not partition the rows")
    return segs


def segment_softmax(x: Tensor, segments: Sequence[Array]) -> Tensor:
    """Per-column softmax within each row segment of a 2-D tensor.

    Segments must partition the rows; an empty segment is a contract
    violation (a target node with no incoming edges).
    """
    if x.data.ndim != 2:
        raise ShapeError(f"segment_softmax expects a 2-D tensor, got {x.data.shape}")
    segs = _check_partition(segments, x.data.shape[0], "segment_softmax")
    out = np.empty_like(x.data)
    for seg in segs:
        if len(seg) == 0:
            raise ContractError("segment_softmax: empty segment (node without incoming edges)")
        block = x.data[seg]
        ex = np.exp(block - block.max(axis=0))
        for c in range(ex.shape[1]):
            out[seg, c] = ex[:, c] / math.fsum(ex[:, c].tolist())

    def vjp(g):
        dx = np.empty_like(x.data)
        for seg in segs:
            w = out[seg]
            gb = g[seg]
            for c in range(w.shape[1]):
                dot = math.fsum((gb[:, c] * w[:, c]).tolist())
                dx[seg, c] = w[:, c] * (gb[:, c] - dot)
        return (dx,)

    return _make(out, (x,), vjp, "segment_softmax")


def segment_reduce(x: Tensor, segments: Sequence[Array], mode: str = "mean") -> Tensor:
    """Aggregate row segments of a 2-D tensor to one output row per segment."""
    if x.data.ndim != 2:
        raise ShapeError(f"segment_reduce expects a 2-D tensor, got {x.data.shape}")
    if mode not in ("mean", "sum"):
        raise ConfigError(f"unknown segment_reduce mode {mode!r}")
    segs = _check_partition(segments, x.data.shape[0], "segment_reduce")
    d = x.data.shape[1]
    out = np.empty((len(segs), d))
    for i, seg in enumerate(segs):
        if len(seg) == 0:
            raise ContractError("segment_reduce: empty segment (node without incoming edges)")
        cols = x.data[seg].T.tolist()
        row = [math.fsum(col) for col in cols]
        out[i] = row
        if mode == "mean":
            out[i] /= len(seg)

    def vjp(g):
        dx = np.zeros_like(x.data)
        for i, seg in enumerate(segs):
            gi = g[i] / len(seg) if mode == "mean" else g[i]
            dx[seg] = gi
        return (dx,)

    return _make(out, (x,), vjp, "segment_reduce")


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def backward(loss: Tensor) -> dict[Tensor, Array]:
    """Propagate d(loss)/d(leaf) to every reachable grad-enabled leaf.

    Returns the leaf -> gradient map and also stores each gradient on the
    leaf's ``.grad``. The tape is consumed: a second backward through the
    same intermediate tensors is not possible.
    """
    if loss.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {loss.data.shape}")
    order = _topo(loss)
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, Array] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node.grad = g
                leaf_grads[node] = g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.on_tape():
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    for node in order:
        node._parents = ()
        node._vjp = None
    return leaf_grads


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-4) -> float:
    """Compare backward() gradients of f against central differences.

    ``f`` must rebuild its forward pass on every call and return a scalar
    tensor. Returns the maximum over all parameter coordinates of
    ``|g_a - g_n| / max(1e-8, |g_a| + |g_n|)``.
    """
    if not eps > 0.0:
        raise ConfigError(f"grad_check eps must be positive, got {eps}")
    out = f()
    if out.size != 1:
        raise ContractError("grad_check objective must be scalar")
    analytic = backward(out)
    worst = 0.0
    for p in params:
        ga = analytic.get(p)
        ga_flat = np.zeros(p.size) if ga is None else ga.reshape(-1)
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            with no_grad():
                fp = f().item()
            flat[j] = orig - eps
            with no_grad():
                fm = f().item()
            flat[j] = orig
            gn = (fp - fm) / (2.0 * eps)
            err = abs(ga_flat[j] - gn) / max(1e-8, abs(ga_flat[j]) + abs(gn))
            if err > worst:
                worst = err
    return worst
