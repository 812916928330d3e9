"""Dense float64 tensors with a dynamic reverse-mode tape.

Operations record themselves on the tape that is active in the current
context (see :class:`Tape`). Without an active tape nothing is recorded,
which is how inference runs, and it lets many threads share the same
parameters read-only.

Example::

    w = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = mean(abs_(w))
    backprop(tape, loss)
    w.grad  # array([1.])
"""
from __future__ import annotations

import contextlib
import contextvars

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_ACTIVE_TAPE = contextvars.ContextVar("harvestcast_active_tape", default=None)


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {where}")


class Tensor:
    """Shaped float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # ascontiguousarray alone would promote 0-d to 1-d
        _check_finite(arr, name or "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return abs_(self)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), ()))


class Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Use as a context manager; ops executed inside the ``with`` block are
    appended in execution order, which is a valid topological order.
    """

    def __init__(self):
        self.nodes = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        backprop(self, loss)


@contextlib.contextmanager
def no_tape():
    """Suspend recording inside the block, even if an outer tape is active."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def record(op, out, inputs, backward):
    """Wrap ``out`` in a Tensor and record ``backward`` on the active tape.

    ``backward(grad_out)`` must return one gradient (or ``None``) per input.
    Custom fused ops in other modules go through this function too.
    """
    _check_finite(out, op)
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, track)
    if track:
        tape.nodes.append(Node(op, tuple(inputs), result, backward))
    return result


def backprop(tape, loss):
    """Fill ``.grad`` on every tracked tensor that ``loss`` depends on.

    Gradients from fan-out are summed in tape order, so repeated calls on
    identical inputs give bit-identical results.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced through the tape")
    grads = {id(loss): np.ones_like(loss.data)}
    seen = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        node.output.grad = g
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise DimensionError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
            if not np.isfinite(gi).all():
                raise NumericError(f"non-finite gradient in backward of {node.op}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                seen[key] = t
    for key, g in grads.items():
        seen[key].grad = g


# -- primitive ops -----------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    with np.errstate(over="ignore", invalid="ignore"):  # non-finite results raise in record()
        out = ad @ bd
    return record("matmul", out, (a, b), backward)


def add(a, b):
    """Elementwise sum; ``b`` may also be a bias vector over ``a``'s last axis."""
    b = _as_tensor(b)
    if a.shape == b.shape:
        return record("add", a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        lead = tuple(range(a.ndim - 1))
        return record("add_bias", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=lead)))
    if b.ndim == 0:
        return record("add_scalar", a.data + b.data, (a, b), lambda g: (g, np.asarray(g.sum())))
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c):
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def concat(a, b):
    """Join ``a`` then ``b`` along the feature (last) axis."""
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise DimensionError(f"concat: need two vectors or two matrices, got {a.shape} and {b.shape}")
    if a.ndim == 2 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: batch sizes differ, {a.shape} vs {b.shape}")
    m = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return record("concat", out, (a, b), lambda g: (g[..., :m], g[..., m:]))


def slice_last(a, start, stop):
    """Columns ``start:stop`` of the last axis."""
    n = a.shape[-1]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice {start}:{stop} out of range for width {n}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return record("slice", np.ascontiguousarray(a.data[..., start:stop]), (a,), backward)


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return record("reshape", out, (a,), lambda g: (g.reshape(old),))


def abs_(a):
    ad = a.data
    # subgradient 0 at exactly 0
    return record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def sum_(a):
    shape = a.shape
    return record("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a):
    if a.size == 0:
        raise ContractError("mean of an empty tensor")
    shape, n = a.shape, a.size
    return record("mean", np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def exp(a):
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError in record()
        out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def tanh(a):
    out = np.tanh(a.data)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    out = 0.5 + 0.5 * np.tanh(0.5 * a.data)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def zeros(*shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def grad_check(f, point, eps=1e-4, coords=None):
    """Largest relative gap between the tape gradient and central differences.

    ``f(point)`` must return a scalar Tensor. ``point.data`` is perturbed in
    place and restored, so ``f`` may ignore its argument and close over a
    model that owns ``point``. ``coords`` restricts the check to a subset
    of flat indices. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    was_tracked = point.requires_grad
    point.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(point)
        if loss.data.size != 1:
            raise ContractError("grad_check needs a scalar-valued function")
        backprop(tape, loss)
        analytic = (point.grad if point.grad is not None else np.zeros(point.shape)).reshape(-1).copy()
    finally:
        point.requires_grad = was_tracked
        point.grad = None
    flat = point.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_tape():
        for i in idx:
            orig = flat[i]
            try:
                flat[i] = orig + eps
                fp = float(f(point).data)
                flat[i] = orig - eps
                fm = float(f(point).data)
            finally:
                flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite probe value at coordinate {i}")
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst
