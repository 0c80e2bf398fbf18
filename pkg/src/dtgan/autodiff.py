"""Reverse-mode automatic differentiation over dense float64 arrays.

Every network in the package is built from the primitives in this module.
A :class:`DiffArray` wraps a numpy array together with a gradient buffer;
operations record a closure that pushes the output gradient back to their
inputs, and :meth:`DiffArray.backward` replays those closures in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block (inference, critic inputs)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


def _as_values(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that numpy broadcasting introduced or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class DiffArray:
    """A float64 array that participates in reverse-mode differentiation."""

    __slots__ = ("values", "_grad", "requires_grad", "_parents", "_backward", "op")
    # make ``ndarray <op> DiffArray`` defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.values = _as_values(values)
        self._grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = _op

    # -- introspection -------------------------------------------------
    @property
    def grad(self) -> np.ndarray:
        # allocated on first use; most intermediates never need one
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.asarray(value, dtype=np.float64)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"DiffArray(shape={self.shape}, op={self.op or 'leaf'!r})"

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "DiffArray":
        return DiffArray(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    # -- graph ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into the ``grad`` of every reachable leaf.

        Gradients accumulate; callers zero them between steps.
        """
        if self.values.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        # intermediate buffers are rebuilt on every call; only leaves accumulate
        for node in order:
            if node._parents:
                node._grad = np.zeros_like(node.values)
        self.grad = self.grad + np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node._grad)

    # -- operator sugar ------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological_order(root: DiffArray) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _needs_grad(*xs: DiffArray) -> bool:
    return any(x.requires_grad for x in xs)


def _result(values, parents: Sequence[DiffArray], op: str, backward) -> DiffArray:
    track = _GRAD_ENABLED and _needs_grad(*parents)
    out = DiffArray(values, requires_grad=track, _parents=tuple(parents) if track else (), _op=op)
    if track:
        out._backward = backward
    return out


def _accumulate(x: DiffArray, g: np.ndarray) -> None:
    if x.requires_grad:
        x.grad += g


def _broadcast_shape(op: str, a: DiffArray, b: DiffArray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.values + b.values, (a, b), "add", backward)


def sub(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.values - b.values, (a, b), "sub", backward)


def mul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.values, a.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _result(a.values * b.values, (a, b), "mul", backward)


def div(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    _broadcast_shape("div", a, b)
    out_values = a.values / b.values

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.values, a.shape))
        _accumulate(b, _unbroadcast(-g * out_values / b.values, b.shape))

    return _result(out_values, (a, b), "div", backward)


def matmul(a, b) -> DiffArray:
    """Matrix product with numpy's batching rules (both operands ndim >= 2)."""
    a, b = as_diff(a), as_diff(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        values = a.values @ b.values
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape))

    return _result(values, (a, b), "matmul", backward)


# ----------------------------------------------------------------------
# nonlinearities
# ----------------------------------------------------------------------
def exp(x) -> DiffArray:
    x = as_diff(x)
    out_values = np.exp(x.values)
    return _result(out_values, (x,), "exp", lambda g: _accumulate(x, g * out_values))


def log(x) -> DiffArray:
    x = as_diff(x)
    return _result(np.log(x.values), (x,), "log", lambda g: _accumulate(x, g / x.values))


def sqrt(x) -> DiffArray:
    x = as_diff(x)
    out_values = np.sqrt(x.values)
    return _result(out_values, (x,), "sqrt", lambda g: _accumulate(x, g * 0.5 / out_values))


def square(x) -> DiffArray:
    x = as_diff(x)
    return _result(x.values * x.values, (x,), "square", lambda g: _accumulate(x, 2.0 * g * x.values))


def tanh(x) -> DiffArray:
    x = as_diff(x)
    out_values = np.tanh(x.values)
    return _result(out_values, (x,), "tanh", lambda g: _accumulate(x, g * (1.0 - out_values**2)))


def sigmoid(x) -> DiffArray:
    x = as_diff(x)
    # split by sign so neither branch overflows
    v = x.values
    out_values = np.empty_like(v)
    pos = v >= 0
    out_values[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_values[~pos] = ev / (1.0 + ev)
    return _result(out_values, (x,), "sigmoid",
                   lambda g: _accumulate(x, g * out_values * (1.0 - out_values)))


def relu(x) -> DiffArray:
    x = as_diff(x)
    mask = x.values > 0
    return _result(np.where(mask, x.values, 0.0), (x,), "relu", lambda g: _accumulate(x, g * mask))


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> DiffArray:
    x = as_diff(x)
    scale = np.where(x.values > 0, 1.0, slope)
    return _result(x.values * scale, (x,), "leaky_relu", lambda g: _accumulate(x, g * scale))


def softmax(x, axis: int = -1, mask=None) -> DiffArray:
    """Softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``x``) marks entries that take part;
    masked-out entries get probability exactly 0 and receive no gradient.
    """
    x = as_diff(x)
    v = x.values
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        v = np.where(mask, v, -np.inf)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_values).sum(axis=axis, keepdims=True)
        _accumulate(x, out_values * (g - inner))

    return _result(out_values, (x,), "softmax", backward)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------
def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = as_diff(x)
    return _result(x.values.sum(axis=axis, keepdims=keepdims), (x,), "sum",
                   lambda g: _accumulate(x, _expand_reduced(g, x.shape, axis, keepdims)))


def mean(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = as_diff(x)
    out_values = x.values.mean(axis=axis, keepdims=keepdims)
    count = x.values.size // max(np.size(out_values), 1)

    def backward(g):
        _accumulate(x, _expand_reduced(g, x.shape, axis, keepdims) / count)

    return _result(out_values, (x,), "mean", backward)


def min_(x, axis: int) -> DiffArray:
    """Minimum along one axis; the gradient flows to the first arg-min."""
    x = as_diff(x)
    idx = np.expand_dims(np.argmin(x.values, axis=axis), axis)
    out_values = np.take_along_axis(x.values, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.values)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full)

    return _result(out_values, (x,), "min", backward)


# ----------------------------------------------------------------------
# structural
# ----------------------------------------------------------------------
def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def take(x, index) -> DiffArray:
    x = as_diff(x)
    out_values = x.values[index]
    basic = _is_basic(index)

    def backward(g):
        if not x.requires_grad:
            return
        if basic:
            # basic indexing never repeats an element, so a view add is exact
            x.grad[index] += g
        else:
            full = np.zeros_like(x.values)
            np.add.at(full, index, g)
            _accumulate(x, full)

    return _result(np.array(out_values, dtype=np.float64), (x,), "slice", backward)


def reshape(x, shape) -> DiffArray:
    x = as_diff(x)
    try:
        out_values = x.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None
    return _result(out_values, (x,), "reshape", lambda g: _accumulate(x, g.reshape(x.shape)))


def transpose(x, axes=None) -> DiffArray:
    x = as_diff(x)
    inverse = None if axes is None else np.argsort(axes)
    return _result(np.transpose(x.values, axes), (x,), "transpose",
                   lambda g: _accumulate(x, np.transpose(g, inverse)))


def concat(xs: Iterable, axis: int = 0) -> DiffArray:
    xs = [as_diff(x) for x in xs]
    try:
        out_values = np.concatenate([x.values for x in xs], axis=axis)
    except ValueError:
        shapes = ", ".join(str(x.shape) for x in xs)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(x, g[tuple(sl)])

    return _result(out_values, xs, "concat", backward)


def stack(xs: Iterable, axis: int = 0) -> DiffArray:
    xs = [as_diff(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):])
                for x in xs]
    return concat(expanded, axis=axis)


def pad_axis(x, axis: int, before: int, after: int) -> DiffArray:
    """Zero-pad one axis."""
    x = as_diff(x)
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    out_values = np.pad(x.values, widths)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(before, before + x.shape[axis])
    sl = tuple(sl)
    return _result(out_values, (x,), "pad", lambda g: _accumulate(x, g[sl]))


def conv1d(x, weight, bias=None, dilation: int = 1, padding=(0, 0)) -> DiffArray:
    """1-D cross-correlation.

    x: [B, C_in, L]; weight: [C_out, C_in, k]; bias: [C_out].
    ``padding`` is a (left, right) pair of zero-padding widths, so a causal
    convolution is ``padding=((k - 1) * dilation, 0)``.
    """
    x, weight = as_diff(x), as_diff(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} and kernel {weight.shape} do not conform")
    left, right = padding
    k = weight.shape[2]
    xp = np.pad(x.values, ((0, 0), (0, 0), (left, right)))
    length = xp.shape[2] - dilation * (k - 1)
    if length < 1:
        raise ShapeError(f"conv1d: input {x.shape} too short for kernel {weight.shape}")
    w = weight.values
    out_values = np.zeros((x.shape[0], w.shape[0], length))
    for tap in range(k):
        seg = xp[:, :, tap * dilation: tap * dilation + length]
        out_values += np.einsum("oc,bcl->bol", w[:, :, tap], seg)
    parents = [x, weight]
    if bias is not None:
        bias = as_diff(bias)
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"conv1d: bias {bias.shape} does not match kernel {weight.shape}")
        out_values += bias.values[None, :, None]
        parents.append(bias)

    def backward(g):
        if weight.requires_grad:
            gw = np.empty_like(w)
            for tap in range(k):
                seg = xp[:, :, tap * dilation: tap * dilation + length]
                gw[:, :, tap] = np.einsum("bol,bcl->oc", g, seg)
            _accumulate(weight, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for tap in range(k):
                gxp[:, :, tap * dilation: tap * dilation + length] += np.einsum("oc,bol->bcl", w[:, :, tap], g)
            _accumulate(x, gxp[:, :, left: left + x.shape[2]])
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2)))

    return _result(out_values, parents, "conv1d", backward)


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------
def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(loss_fn, params: Sequence[DiffArray], n_entries: int, rng: np.random.Generator,
              h: float = 1e-6) -> list:
    """Compare analytic gradients with central differences on random entries.

    ``loss_fn`` rebuilds the graph from the current parameter values and
    returns a scalar DiffArray. Returns ``(param_index, flat_index, analytic,
    numeric, rel_error)`` tuples.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    sizes = np.array([p.values.size for p in params])
    picks = rng.choice(sizes.sum(), size=min(n_entries, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    report = []
    for flat in picks:
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = int(flat - offsets[pi])
        p = params[pi]
        orig = p.values.flat[idx]
        p.values.flat[idx] = orig + h
        up = loss_fn().item()
        p.values.flat[idx] = orig - h
        down = loss_fn().item()
        p.values.flat[idx] = orig
        numeric = (up - down) / (2 * h)
        a = float(analytic[pi].flat[idx])
        report.append((pi, idx, a, numeric, relative_error(a, numeric)))
    return report
