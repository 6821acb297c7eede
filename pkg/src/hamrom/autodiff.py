"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the tape that is active in the calling thread
(see :class:`Tape`).  Inputs that are plain numpy arrays or tensors unknown to
the active tape are treated as constants, so the same network code runs both
under a tape (training) and without one (inference).

Arrays carry an optional leading batch axis everywhere: ``matmul`` follows
``numpy.matmul`` semantics and ``conv1d_periodic`` accepts ``(..., C, L)``.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "take",
    "sum",
    "mean",
    "reduce_sum_squares",
    "activation",
    "activation_grad",
    "conv1d_periodic",
    "repeat2",
    "upsample2_smooth",
    "finite_diff_check",
    "ACTIVATIONS",
]

ACTIVATIONS = ("elu", "tanh", "swish", "none")


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional float64 array that may be a node on a tape."""

    __slots__ = ("data", "node", "tape")
    __array_priority__ = 100.0

    def __init__(self, data, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.node: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block on
    watched tensors (or tensors derived from them) are recorded.  A tape is
    bound to the thread that entered it.

    >>> with Tape() as tape:
    ...     x = tape.watch(Tensor([1.0, 2.0]))
    ...     y = reduce_sum_squares(x)
    >>> tape.gradient(y, [x])[0]
    array([2., 4.])
    """

    def __init__(self):
        # node id -> (vjp, parent ids); vjp is None for roots
        self.nodes: list[tuple[Callable | None, tuple[int, ...]]] = []
        self.roots: list[int] = []

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def watch(self, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a root (a parameter to differentiate)."""
        if not isinstance(tensor, Tensor):
            raise TypeError("only Tensor objects can be watched")
        tensor.node = len(self.nodes)
        tensor.tape = self
        self.nodes.append((None, ()))
        self.roots.append(tensor.node)
        return tensor

    def _record(self, vjp, parents: tuple[int, ...]) -> int:
        self.nodes.append((vjp, parents))
        return len(self.nodes) - 1

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Reverse accumulation of d(target)/d(source) for each source.

        ``target`` must hold a single value.  Sources not reached from the
        target receive zero gradients.
        """
        if target.data.size != 1:
            raise ValueError(f"gradient seed must be scalar, got shape {target.shape}")
        grads = self.backward(target)
        out = []
        for s in sources:
            g = grads.get(s.node) if s.tape is self else None
            out.append(np.zeros_like(s.data) if g is None else g)
        return out

    def backward(self, target: Tensor) -> dict[int, np.ndarray]:
        """Run the reverse sweep from a scalar target; returns root gradients by node id."""
        if target.data.size != 1:
            raise ValueError(f"gradient seed must be scalar, got shape {target.shape}")
        if target.tape is not self or target.node is None:
            return {}
        acc: dict[int, np.ndarray] = {target.node: np.ones_like(target.data)}
        nodes = self.nodes
        for nid in range(target.node, -1, -1):
            g = acc.get(nid)
            if g is None:
                continue
            vjp, parents = nodes[nid]
            if vjp is None:
                continue
            del acc[nid]
            for pid, pg in zip(parents, vjp(g)):
                if pid is None or pg is None:
                    continue
                prev = acc.get(pid)
                if prev is None:
                    acc[pid] = np.array(pg, dtype=np.float64, copy=True)
                else:
                    prev += pg
        return {r: acc[r] for r in self.roots if r in acc}


def _emit(out: np.ndarray, inputs, vjp) -> Tensor:
    """Wrap ``out`` and record ``vjp`` if any input lives on the active tape.

    ``vjp(g)`` returns one cotangent per input (None for constants).
    """
    result = Tensor.__new__(Tensor)
    result.data = out
    result.node = None
    result.tape = None
    tape = _active_tape()
    if tape is None:
        return result
    parents = []
    tracked = False
    for x in inputs:
        if isinstance(x, Tensor) and x.tape is tape and x.node is not None:
            parents.append(x.node)
            tracked = True
        else:
            parents.append(None)
    if tracked:
        result.node = tape._record(vjp, tuple(parents))
        result.tape = tape
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    return _emit(x + y, (a, b), lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    return _emit(x - y, (a, b), lambda g: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)))


def mul(a, b) -> Tensor:
    x, y = _data(a), _data(b)
    return _emit(
        x * y,
        (a, b),
        lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
    )


def neg(a) -> Tensor:
    return _emit(-_data(a), (a,), lambda g: (-g,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with ``numpy.matmul`` broadcasting over leading axes."""
    x, y = _data(a), _data(b)
    if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {x.shape} and {y.shape}")
    out = np.matmul(x, y)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape)
        return ga, gb

    return _emit(out, (a, b), vjp)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    return _emit(np.swapaxes(_data(a), -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    x = _data(a)
    return _emit(x.reshape(shape), (a,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    arrays = [_data(t) for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    splits = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(out, tuple(tensors), vjp)


def take(a, index) -> Tensor:
    """Basic (slice) indexing."""
    x = _data(a)

    def vjp(g):
        full = np.zeros_like(x)
        full[index] = g
        return (full,)

    return _emit(x[index], (a,), vjp)


# ---------------------------------------------------------------- reductions


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _data(a)
    out = np.sum(x, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _emit(np.asarray(out), (a,), vjp)


def mean(a, axis=None) -> Tensor:
    x = _data(a)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def reduce_sum_squares(a) -> Tensor:
    """Scalar sum of squared entries."""
    x = _data(a)
    return _emit(np.asarray(np.dot(x.ravel(), x.ravel())), (a,), lambda g: (2.0 * g * x,))


# ---------------------------------------------------------------- activations


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(x, kind):
    if kind == "tanh":
        return np.tanh(x)
    if kind == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "swish":
        return x * _sigmoid(x)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def _act_d1(x, kind):
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "elu":
        return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    if kind == "swish":
        s = _sigmoid(x)
        return s + x * s * (1.0 - s)
    if kind == "none":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


def _act_d2(x, kind):
    if kind == "tanh":
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)
    if kind == "elu":
        return np.where(x > 0, 0.0, np.exp(np.minimum(x, 0.0)))
    if kind == "swish":
        s = _sigmoid(x)
        ds = s * (1.0 - s)
        return 2.0 * ds + x * ds * (1.0 - 2.0 * s)
    if kind == "none":
        return np.zeros_like(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation(x, kind: str) -> Tensor:
    """Elementwise ``elu``, ``tanh``, ``swish`` (x * sigmoid(x)) or identity."""
    if kind == "none":
        return as_tensor(x)
    v = _data(x)
    return _emit(_act(v, kind), (x,), lambda g: (g * _act_d1(v, kind),))


def activation_grad(x, kind: str) -> Tensor:
    """Elementwise derivative of :func:`activation`, itself differentiable.

    Lets the input-gradient of an MLP be written as a forward computation so a
    single reverse sweep yields parameter gradients of that input-gradient.
    """
    v = _data(x)
    return _emit(_act_d1(v, kind), (x,), lambda g: (g * _act_d2(v, kind),))


# ---------------------------------------------------------------- convolutions


def _offsets(width: int) -> range:
    # width 3 -> (-1, 0, 1) centred; width 2 -> (0, 1); width 1 -> (0,)
    start = -((width - 1) // 2)
    return range(start, start + width)


def _tap(x, o: int, stride: int) -> np.ndarray:
    """Entries ``x[..., (i*stride + o) % L]`` for ``i < L // stride``."""
    if stride == 1:
        return np.roll(x, -o, axis=-1) if o else x
    length = x.shape[-1]
    if 0 <= o < stride:
        return x[..., o::stride]
    return x[..., (np.arange(length // stride) * stride + o) % length]


def _tap_add(gx: np.ndarray, g: np.ndarray, o: int, stride: int) -> None:
    """Adjoint of :func:`_tap`, accumulated into ``gx``."""
    if stride == 1:
        gx += np.roll(g, o, axis=-1) if o else g
        return
    length = gx.shape[-1]
    if 0 <= o < stride:
        gx[..., o::stride] += g
    else:
        np.add.at(gx, (..., (np.arange(length // stride) * stride + o) % length), g)


def conv1d_periodic(x, kernel, stride: int = 1) -> Tensor:
    """Periodic cross-correlation along the last axis.

    ``x`` has shape ``(..., C_in, L)`` and ``kernel`` ``(C_out, C_in, w)``.
    Output index ``i`` reads input positions ``i*stride + o`` (mod L) for the
    offsets ``o`` of the kernel taps: ``(-1, 0, 1)`` for odd width 3 and
    ``(0, 1)`` for width 2.
    """
    xv, kv = _data(x), _data(kernel)
    if stride < 1:
        raise DimensionError(f"conv1d_periodic: stride must be positive, got {stride}")
    if kv.ndim != 3 or xv.ndim < 2 or xv.shape[-2] != kv.shape[1]:
        raise DimensionError(
            f"conv1d_periodic: input {xv.shape} incompatible with kernel {kv.shape}"
        )
    length = xv.shape[-1]
    if length % stride:
        raise DimensionError(f"conv1d_periodic: length {length} not divisible by stride {stride}")
    n_out = length // stride
    lead = xv.shape[:-2]
    c_out, c_in, width = kv.shape
    offsets = list(_offsets(width))
    x3 = xv.reshape((-1, c_in, length))
    nb = x3.shape[0]
    # one GEMM over the batch: columns laid out (C_in, w, B, L_out)
    xt = x3.transpose(1, 0, 2)
    cols = np.empty((c_in, width, nb, n_out))
    for j, o in enumerate(offsets):
        cols[:, j] = _tap(xt, o, stride)
    cols = cols.reshape(c_in * width, nb * n_out)
    k2 = kv.reshape(c_out, c_in * width)
    out = (k2 @ cols).reshape(c_out, nb, n_out).transpose(1, 0, 2).reshape(lead + (c_out, n_out))

    def vjp(g):
        gt = np.ascontiguousarray(g.reshape(nb, c_out, n_out).transpose(1, 0, 2)).reshape(c_out, -1)
        gk = (gt @ cols.T).reshape(kv.shape)
        gcols = (k2.T @ gt).reshape(c_in, width, nb, n_out)
        gx = np.zeros((c_in, nb, length))
        for j, o in enumerate(offsets):
            _tap_add(gx, gcols[:, j], o, stride)
        return gx.transpose(1, 0, 2).reshape(xv.shape), gk

    return _emit(out, (x, kernel), vjp)


def repeat2(x) -> Tensor:
    """Duplicate every entry along the last axis: [a, b] -> [a, a, b, b]."""
    v = _data(x)
    out = np.repeat(v, 2, axis=-1)
    return _emit(out, (x,), lambda g: (g[..., 0::2] + g[..., 1::2],))


def upsample2_smooth(x, kernel) -> Tensor:
    """Repeat each value once along the length axis, then smooth with a width-2 kernel."""
    if _data(kernel).shape[-1] != 2:
        raise DimensionError("upsample2_smooth expects a width-2 kernel")
    return conv1d_periodic(repeat2(x), kernel, stride=1)


# ---------------------------------------------------------------- checking


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Largest relative discrepancy between tape gradients and central differences.

    ``f`` maps a tensor to a scalar tensor.  The discrepancy of a coordinate is
    ``|fd - ad| / (|fd| + |ad| + 1e-12)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(_data(x), dtype=np.float64)
    with Tape() as tape:
        xt = tape.watch(Tensor(x0.copy()))
        y = f(xt)
    ad = tape.gradient(y, [xt])[0]
    flat = x0.ravel()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        xm = flat.copy()
        xm[i] -= eps
        fp = float(_data(f(Tensor(xp.reshape(x0.shape)))))
        fm = float(_data(f(Tensor(xm.reshape(x0.shape)))))
        fd[i] = (fp - fm) / (2.0 * eps)
    ad = ad.ravel()
    return float(np.max(np.abs(fd - ad) / (np.abs(fd) + np.abs(ad) + 1e-12)))
