"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to parent gradients.  :func:`backward`
orders the recorded nodes into a :class:`Tape` and replays it in reverse.

Broadcasting is deliberately narrow: binary operations accept equal shapes,
a vector broadcast over the rows of a matrix, or a scalar (size-1) operand.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A shaped float64 array that can participate in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    # ---- introspection -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean(self, axis)

    def max(self, axis: int = 0) -> "Tensor":
        return max_over_axis(self, axis)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of a differentiable operation.

    ``backward_fn`` receives the gradient w.r.t. the output and returns one
    gradient (or ``None``) per parent, each shaped like that parent.
    Custom fused kernels elsewhere in the package register through here.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# Tape and backward pass
# ---------------------------------------------------------------------------


class Tape:
    """Recorded operations reachable from one output, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run(self, seed_grad: np.ndarray) -> None:
        out = self.nodes[-1]
        grads: dict[int, np.ndarray] = {id(out): seed_grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call, so
    repeated calls add exactly one more copy of the leaf gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    tape = Tape.from_output(loss)
    tape.run(np.ones_like(loss.data))


# ---------------------------------------------------------------------------
# Binary elementwise operations
# ---------------------------------------------------------------------------


def _broadcast_mode(a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1 and b.ndim <= 1:
        return "scalar_b"
    if a.size == 1 and a.ndim <= 1:
        return "scalar_a"
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return "row_b"
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return "row_a"
    raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, mode: str, side: str, shape: tuple[int, ...]) -> np.ndarray:
    if mode == "same":
        return g
    if mode == f"scalar_{side}":
        return np.full(shape, g.sum())
    if mode == f"row_{side}":
        return g.sum(axis=0)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _broadcast_mode(a.data, b.data)
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _reduce_to(g, mode, "a", sa), _reduce_to(g, mode, "b", sb)

    return record(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _broadcast_mode(a.data, b.data)
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _reduce_to(g, mode, "a", sa), _reduce_to(-g, mode, "b", sb)

    return record(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _broadcast_mode(a.data, b.data)
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _reduce_to(g * bd, mode, "a", sa), _reduce_to(g * ad, mode, "b", sb)

    return record(ad * bd, (a, b), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        return g @ bd.T, ad.T @ g

    return record(ad @ bd, (a, b), _bw)


# ---------------------------------------------------------------------------
# Unary elementwise operations
# ---------------------------------------------------------------------------


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(t: Tensor) -> Tensor:
    t = as_tensor(t)
    y = _sigmoid_np(t.data)
    return record(y, (t,), lambda g: (g * y * (1.0 - y),))


def tanh(t: Tensor) -> Tensor:
    t = as_tensor(t)
    y = np.tanh(t.data)
    return record(y, (t,), lambda g: (g * (1.0 - y * y),))


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    mask = t.data > 0
    return record(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def exp(t: Tensor) -> Tensor:
    t = as_tensor(t)
    y = np.exp(t.data)
    return record(y, (t,), lambda g: (g * y,))


def log(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if np.any(t.data <= 0):
        raise DomainError("log of a non-positive value")
    x = t.data
    return record(np.log(x), (t,), lambda g: (g / x,))


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into ``[lo, hi]``; the gradient is zero where clamping is active."""
    t = as_tensor(t)
    inside = (t.data >= lo) & (t.data <= hi)
    return record(np.clip(t.data, lo, hi), (t,), lambda g: (g * inside,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise ValueError(f"{op} takes one operand")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ValueError(f"{op} takes two operands")
        return _BINARY[op](*args)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _check_axis(t: Tensor, axis: int | None) -> None:
    if axis is None:
        if t.size == 0:
            raise ShapeError("reduction over an empty tensor")
        return
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    if t.shape[axis] == 0:
        raise ShapeError(f"reduction over empty axis {axis}")


def sum_(t: Tensor, axis: int | None = None) -> Tensor:
    t = as_tensor(t)
    _check_axis(t, axis)
    shape = t.shape

    def _bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record(np.asarray(t.data.sum(axis=axis)), (t,), _bw)


def mean(t: Tensor, axis: int | None = None) -> Tensor:
    t = as_tensor(t)
    _check_axis(t, axis)
    count = t.size if axis is None else t.shape[axis]
    shape = t.shape

    def _bw(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record(np.asarray(t.data.mean(axis=axis)), (t,), _bw)


def max_over_axis(t: Tensor, axis: int = 0) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry only."""
    t = as_tensor(t)
    _check_axis(t, axis)
    axis = axis % t.ndim
    winners = np.argmax(t.data, axis=axis)
    out = np.take_along_axis(t.data, np.expand_dims(winners, axis), axis).squeeze(axis)
    shape = t.shape

    def _bw(g):
        gin = np.zeros(shape)
        np.put_along_axis(gin, np.expand_dims(winners, axis), np.expand_dims(g, axis), axis)
        return (gin,)

    return record(out, (t,), _bw)


def reduce(op: str, t: Tensor, axis: int | None = None) -> Tensor:
    if op == "sum":
        return sum_(t, axis)
    if op == "mean":
        return mean(t, axis)
    if op == "max_over_axis":
        return max_over_axis(t, 0 if axis is None else axis)
    raise ValueError(f"unknown reduction {op!r}")


def logsumexp_rows(t: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a matrix; ``-inf`` entries are allowed."""
    t = as_tensor(t)
    if t.ndim != 2 or t.shape[1] == 0:
        raise ShapeError(f"logsumexp_rows needs a non-empty matrix, got {t.shape}")
    x = t.data
    m = x.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise DomainError("logsumexp over a row with no finite entries")
    e = np.exp(x - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).reshape(-1)
    soft = e / s

    def _bw(g):
        return (g[:, None] * soft,)

    return record(out, (t,), _bw)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def transpose(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {t.shape}")
    return record(t.data.T.copy(), (t,), lambda g: (g.T,))


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    t = as_tensor(t)
    old = t.shape
    try:
        out = t.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return record(out, (t,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tensors, _bw)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of nothing")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack shape mismatch: {sorted(shapes)}")
    out = np.stack([t.data for t in tensors])

    def _bw(g):
        return tuple(g[i] for i in range(len(tensors)))

    return record(out, tensors, _bw)


def take_rows(t: Tensor, rows: Sequence[int]) -> Tensor:
    t = as_tensor(t)
    idx = np.asarray(rows, dtype=np.int64)
    shape = t.shape

    def _bw(g):
        gin = np.zeros(shape)
        np.add.at(gin, idx, g)
        return (gin,)

    return record(t.data[idx], (t,), _bw)


def take_cols(t: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice ``t[:, start:stop]`` of a matrix."""
    t = as_tensor(t)
    if t.ndim != 2 or not 0 <= start <= stop <= t.shape[1]:
        raise ShapeError(f"bad column slice [{start}:{stop}] of shape {t.shape}")
    shape = t.shape

    def _bw(g):
        gin = np.zeros(shape)
        gin[:, start:stop] = g
        return (gin,)

    return record(t.data[:, start:stop].copy(), (t,), _bw)


# ---------------------------------------------------------------------------
# Normalisation and regularisation
# ---------------------------------------------------------------------------


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean and unit (population) variance, then scale and shift."""
    t, gain, bias = as_tensor(t), as_tensor(gain), as_tensor(bias)
    d = t.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias {gain.shape}/{bias.shape} vs last dim {d}")
    x = t.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def _bw(g):
        dxhat = g * gd
        dx = inv / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record(out, (t, gain, bias), _bw)


def batch_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each column over the rows (batch statistics), then scale and shift."""
    t, gain, bias = as_tensor(t), as_tensor(gain), as_tensor(bias)
    if t.ndim != 2:
        raise ShapeError(f"batch_norm needs a matrix, got {t.shape}")
    n, d = t.shape
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"batch_norm gain/bias {gain.shape}/{bias.shape} vs width {d}")
    x = t.data
    xc = x - x.mean(axis=0)
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def _bw(g):
        dxhat = g * gd
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return record(out, (t, gain, bias), _bw)


def dropout_mask(shape: tuple[int, ...], rate: float, seed: int, counter: int) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(counter)])
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(t: Tensor, rate: float, rng_seed: int, training: bool, counter: int = 0) -> Tensor:
    """Inverted dropout; the mask depends only on ``(rng_seed, counter)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    t = as_tensor(t)
    if not training or rate == 0.0:
        return t
    scale = dropout_mask(t.shape, rate, rng_seed, counter)
    return record(t.data * scale, (t,), lambda g: (g * scale,))


class DropoutStream:
    """Supplies successive dropout calls with a deterministic counter."""

    def __init__(self, seed: int, training: bool = True):
        self.seed = int(seed)
        self.training = training
        self.counter = 0

    def __call__(self, t: Tensor, rate: float) -> Tensor:
        if not self.training or rate == 0.0:
            return dropout(t, rate, self.seed, False)
        out = dropout(t, rate, self.seed, True, self.counter)
        self.counter += 1
        return out


def normalize_rows(t: Tensor) -> Tensor:
    """Scale every row to unit Euclidean norm."""
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"normalize_rows needs a matrix, got {t.shape}")
    x = t.data
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise DomainError("cannot normalise a zero vector")
    y = x / norms

    def _bw(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return record(y, (t,), _bw)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity of the rows of ``a`` (P x d) and ``b`` (Q x d).

    Cross dot products and squared norms are reduced by the same summation,
    and ``sqrt(x * x) == x`` holds exactly in IEEE arithmetic, so a row paired
    with a bitwise copy of itself scores exactly 1.0.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix needs (P, d) and (Q, d) matrices, got {a.shape} and {b.shape}")
    x, y = a.data, b.data
    cross = (x[:, None, :] * y[None, :, :]).sum(axis=2)
    nx = (x * x).sum(axis=1)
    ny = (y * y).sum(axis=1)
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise DomainError("cosine similarity is undefined for a zero vector")
    denom = np.sqrt(nx[:, None] * ny[None, :])
    s = cross / denom

    def _bw(g):
        gd = g / denom
        gs = g * s
        da = gd @ y - (gs.sum(axis=1) / nx)[:, None] * x
        db = gd.T @ x - (gs.sum(axis=0) / ny)[:, None] * y
        return da, db

    return record(s, (a, b), _bw)


# ---------------------------------------------------------------------------
# Numerical gradient checking
# ---------------------------------------------------------------------------


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``x.data`` (mutated in place)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = fn().item()
        flat[k] = orig - step
        fm = fn().item()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``.

    The floor keeps gradients that vanish identically (a bias feeding a
    normalisation, say) from turning rounding noise into a relative error of 1.
    """
    num = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return num / den


def check_gradients(
    fn: Callable[[], Tensor], inputs: Iterable[Tensor], step: float = 1e-5
) -> float:
    """Worst relative error between analytic and numerical gradients over ``inputs``."""
    inputs = list(inputs)
    for x in inputs:
        x.zero_grad()
    backward(fn())
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, x, step)))
    return worst
