"""Reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` wraps a numpy array. Operations executed while a `Tape` is
active are recorded; `Tape.backward` walks the records in reverse and
returns gradients for every watched leaf. Everything is 64-bit: the
downstream solvers differentiate through an SVD, and float32 noise would
drown the finite-difference tolerances this library is tested against.

Gradient conventions:
  * accumulation over fan-out is summation,
  * ReLU's subgradient at 0 is 0,
  * broadcasting in binary ops is undone by summing the broadcast axes.

Only first-order gradients are supported; calling `backward` twice on one
tape, or differentiating a gradient, raises.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "AutodiffError",
    "custom_vjp",
    "apply_op",
    "constant",
    "concat",
    "stack",
    "where",
    "matmul",
    "sumsq",
]


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an operation."""


class AutodiffError(RuntimeError):
    """Raised on misuse of the tape (double backward, non-scalar loss, ...)."""


_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self._tape: "Tape | None" = None

    # -- introspection ---------------------------------------------------
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

    def numpy(self) -> np.ndarray:
        """The underlying array (shared, do not mutate during a forward pass)."""
        return self.data

    def detach(self) -> "Tensor":
        """A view of the same data severed from the tape."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar --------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __pow__(self, exponent):
        return power(self, float(exponent))

    def sum(self, axis=None, keepdims: bool = False):
        return sum_reduce(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean_reduce(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes=axes)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def constant(value) -> Tensor:
    """Wrap a value as a non-differentiable tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


class _Node:
    __slots__ = ("name", "input_ids", "input_shapes", "output_ids",
                 "output_shapes", "ctx", "backward_fn")

    def __init__(self, name, input_ids, input_shapes, output_ids,
                 output_shapes, ctx, backward_fn):
        self.name = name
        self.input_ids = input_ids
        self.input_shapes = input_shapes
        self.output_ids = output_ids
        self.output_shapes = output_shapes
        self.ctx = ctx
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Use as a context manager; tensors with ``requires_grad=True`` touched
    inside the context become watched leaves. One `backward` call is
    permitted per tape.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._next_id = 0
        self._leaves: dict[int, tuple[int, ...]] = {}
        self._consumed = False
        self.grads: dict[int, Tensor] | None = None

    # -- context management ----------------------------------------------
    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            self._outer = _STATE.tape
        else:
            self._outer = None
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = self._outer
        return False

    # -- recording ---------------------------------------------------------
    def _tensor_id(self, t: Tensor, produced: bool) -> int | None:
        """Assign this tape's handle to `t`; watch leaves on first touch."""
        if not t.requires_grad:
            return None
        if t._tape is not self:
            t._tape = self
            t.node_id = self._next_id
            self._next_id += 1
            if not produced:
                self._leaves[t.node_id] = t.data.shape
        return t.node_id

    def record(self, name: str, inputs: Sequence[Tensor],
               outputs: Sequence[Tensor], ctx: dict,
               backward_fn: Callable) -> None:
        input_ids = tuple(self._tensor_id(t, produced=False) for t in inputs)
        output_ids = []
        for t in outputs:
            t.requires_grad = True
            output_ids.append(self._tensor_id(t, produced=True))
        node = _Node(
            name,
            input_ids,
            tuple(t.data.shape for t in inputs),
            tuple(output_ids),
            tuple(t.data.shape for t in outputs),
            ctx,
            backward_fn,
        )
        self._nodes.append(node)

    # -- differentiation ---------------------------------------------------
    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Backpropagate from a scalar loss.

        Returns a map from leaf node_id to gradient tensor (zeros for
        watched leaves the loss does not depend on).
        """
        if self._consumed:
            raise AutodiffError(
                "tape already backpropagated; one backward pass per forward pass")
        if loss.data.shape != ():
            raise AutodiffError(
                f"backward requires a scalar loss, got shape {loss.data.shape}")
        if loss._tape is not self or loss.node_id is None:
            raise AutodiffError("loss tensor was not produced on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones(())}
        for node in reversed(self._nodes):
            out_grads = []
            any_grad = False
            for oid, oshape in zip(node.output_ids, node.output_shapes):
                g = grads.pop(oid, None)
                if g is None:
                    g = np.zeros(oshape)
                else:
                    any_grad = True
                out_grads.append(g)
            if not any_grad:
                continue
            in_grads = node.backward_fn(node.ctx, *out_grads)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            if len(in_grads) != len(node.input_ids):
                raise AutodiffError(
                    f"custom op '{node.name}': backward returned "
                    f"{len(in_grads)} gradients for {len(node.input_ids)} inputs")
            for iid, ishape, g in zip(node.input_ids, node.input_shapes, in_grads):
                if iid is None or g is None:
                    continue
                g = np.asarray(g, dtype=np.float64)
                if g.shape != ishape:
                    raise ShapeError(
                        f"custom op '{node.name}': backward produced gradient of "
                        f"shape {g.shape} for input of shape {ishape}")
                if iid in grads:
                    grads[iid] = grads[iid] + g
                else:
                    grads[iid] = g

        result = {}
        for leaf_id, shape in self._leaves.items():
            g = grads.get(leaf_id)
            result[leaf_id] = Tensor(g if g is not None else np.zeros(shape))
        self.grads = result
        return result

    def grad(self, t: Tensor) -> Tensor:
        """Gradient of the last backward pass w.r.t. a watched leaf."""
        if self.grads is None:
            raise AutodiffError("backward has not been called on this tape")
        if t._tape is not self or t.node_id not in self.grads:
            raise AutodiffError("tensor is not a watched leaf of this tape")
        return self.grads[t.node_id]


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

class _Primitive:
    __slots__ = ("name", "forward", "backward", "n_outputs")

    def __init__(self, name, forward, backward, n_outputs):
        self.name = name
        self.forward = forward
        self.backward = backward
        self.n_outputs = n_outputs


_PRIMITIVES: dict[str, _Primitive] = {}


def custom_vjp(name: str, forward: Callable, backward: Callable,
               n_outputs: int = 1) -> Callable:
    """Register a differentiable primitive and return it as a callable.

    `forward(ctx, *arrays) -> array | tuple` computes outputs from numpy
    inputs and may stash values in `ctx` for the backward pass.
    `backward(ctx, *output_grads) -> tuple` returns one gradient per input
    (None for inputs that need no gradient), each matching its input shape.
    """
    if name in _PRIMITIVES:
        raise ValueError(f"primitive '{name}' is already registered")
    prim = _Primitive(name, forward, backward, n_outputs)
    _PRIMITIVES[name] = prim

    def call(*inputs, **params):
        return apply_op(name, *inputs, **params)

    call.__name__ = name
    return call


def apply_op(name: str, *inputs, **params):
    """Evaluate a registered primitive, recording it on the active tape."""
    prim = _PRIMITIVES.get(name)
    if prim is None:
        raise KeyError(f"unknown primitive '{name}'")
    tensors = [constant(t) for t in inputs]
    needs = tuple(t.requires_grad for t in tensors)
    tape = _active_tape()
    track = tape is not None and any(needs)

    ctx = {"params": params, "needs_input_grad": needs}
    raw = prim.forward(ctx, *(t.data for t in tensors))
    if prim.n_outputs == 1:
        outputs = (Tensor(raw),)
    else:
        outputs = tuple(Tensor(r) for r in raw)

    if track:
        tape.record(name, tensors, outputs, ctx, prim.backward)
    return outputs[0] if prim.n_outputs == 1 else outputs


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary_shape_check(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast")


# -- arithmetic -------------------------------------------------------------

def _add_fwd(ctx, a, b):
    _binary_shape_check("add", a, b)
    ctx["shapes"] = (a.shape, b.shape)
    return a + b


def _add_bwd(ctx, g):
    sa, sb = ctx["shapes"]
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


add = custom_vjp("add", _add_fwd, _add_bwd)


def _sub_fwd(ctx, a, b):
    _binary_shape_check("sub", a, b)
    ctx["shapes"] = (a.shape, b.shape)
    return a - b


def _sub_bwd(ctx, g):
    sa, sb = ctx["shapes"]
    return _unbroadcast(g, sa), _unbroadcast(-g, sb)


sub = custom_vjp("sub", _sub_fwd, _sub_bwd)


def _mul_fwd(ctx, a, b):
    _binary_shape_check("mul", a, b)
    ctx["a"], ctx["b"] = a, b
    return a * b


def _mul_bwd(ctx, g):
    a, b = ctx["a"], ctx["b"]
    na, nb = ctx["needs_input_grad"]
    ga = _unbroadcast(g * b, a.shape) if na else None
    gb = _unbroadcast(g * a, b.shape) if nb else None
    return ga, gb


mul = custom_vjp("mul", _mul_fwd, _mul_bwd)


def _div_fwd(ctx, a, b):
    _binary_shape_check("div", a, b)
    ctx["a"], ctx["b"] = a, b
    return a / b


def _div_bwd(ctx, g):
    a, b = ctx["a"], ctx["b"]
    na, nb = ctx["needs_input_grad"]
    ga = _unbroadcast(g / b, a.shape) if na else None
    gb = _unbroadcast(-g * a / (b * b), b.shape) if nb else None
    return ga, gb


div = custom_vjp("div", _div_fwd, _div_bwd)


def _neg_fwd(ctx, a):
    return -a


def _neg_bwd(ctx, g):
    return (-g,)


neg = custom_vjp("neg", _neg_fwd, _neg_bwd)


def _matmul_fwd(ctx, a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast")
    ctx["a"], ctx["b"] = a, b
    return a @ b


def _matmul_bwd(ctx, g):
    a, b = ctx["a"], ctx["b"]
    na, nb = ctx["needs_input_grad"]
    ga = gb = None
    if na:
        ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
    if nb:
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
    return ga, gb


matmul = custom_vjp("matmul", _matmul_fwd, _matmul_bwd)


# -- elementwise nonlinearities ---------------------------------------------

def _relu_fwd(ctx, a):
    out = np.maximum(a, 0.0)
    ctx["out"] = out
    return out


def _relu_bwd(ctx, g):
    # subgradient at 0 is 0: strict inequality masks the kink out
    return (np.where(ctx["out"] > 0.0, g, 0.0),)


relu = custom_vjp("relu", _relu_fwd, _relu_bwd)


def _sin_fwd(ctx, a):
    ctx["a"] = a
    return np.sin(a)


def _sin_bwd(ctx, g):
    return (g * np.cos(ctx["a"]),)


sin = custom_vjp("sin", _sin_fwd, _sin_bwd)


def _cos_fwd(ctx, a):
    ctx["a"] = a
    return np.cos(a)


def _cos_bwd(ctx, g):
    return (-g * np.sin(ctx["a"]),)


cos = custom_vjp("cos", _cos_fwd, _cos_bwd)


def _exp_fwd(ctx, a):
    out = np.exp(a)
    ctx["out"] = out
    return out


def _exp_bwd(ctx, g):
    return (g * ctx["out"],)


exp = custom_vjp("exp", _exp_fwd, _exp_bwd)


def _log_fwd(ctx, a):
    ctx["a"] = a
    return np.log(a)


def _log_bwd(ctx, g):
    return (g / ctx["a"],)


log = custom_vjp("log", _log_fwd, _log_bwd)


def _reciprocal_fwd(ctx, a):
    out = 1.0 / a
    ctx["out"] = out
    return out


def _reciprocal_bwd(ctx, g):
    out = ctx["out"]
    return (-g * out * out,)


reciprocal = custom_vjp("reciprocal", _reciprocal_fwd, _reciprocal_bwd)


def _sqrt_fwd(ctx, a):
    out = np.sqrt(a)
    ctx["out"] = out
    return out


def _sqrt_bwd(ctx, g):
    return (g * 0.5 / ctx["out"],)


sqrt = custom_vjp("sqrt", _sqrt_fwd, _sqrt_bwd)


def _sigmoid_fwd(ctx, a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    ctx["out"] = out
    return out


def _sigmoid_bwd(ctx, g):
    s = ctx["out"]
    return (g * s * (1.0 - s),)


sigmoid = custom_vjp("sigmoid", _sigmoid_fwd, _sigmoid_bwd)


def _softplus_fwd(ctx, a):
    ctx["a"] = a
    return np.logaddexp(0.0, a)


def _softplus_bwd(ctx, g):
    a = ctx["a"]
    return (g / (1.0 + np.exp(-a)),)


softplus = custom_vjp("softplus", _softplus_fwd, _softplus_bwd)


def _power_fwd(ctx, a):
    c = ctx["params"]["exponent"]
    ctx["a"] = a
    return a ** c


def _power_bwd(ctx, g):
    c = ctx["params"]["exponent"]
    return (g * c * ctx["a"] ** (c - 1.0),)


_power = custom_vjp("power", _power_fwd, _power_bwd)


def power(a, exponent: float):
    return _power(a, exponent=exponent)


def _cbrt_fwd(ctx, a):
    out = np.cbrt(a)
    ctx["out"] = out
    return out


def _cbrt_bwd(ctx, g):
    out = ctx["out"]
    return (g / (3.0 * out * out),)


cbrt = custom_vjp("cbrt", _cbrt_fwd, _cbrt_bwd)


# -- reductions ---------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _reduce_expand(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    if not keepdims:
        for a in sorted(axis):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, in_shape)


def _sum_fwd(ctx, a):
    axis = _norm_axis(ctx["params"].get("axis"), a.ndim)
    keepdims = ctx["params"].get("keepdims", False)
    ctx["axis"], ctx["keepdims"], ctx["in_shape"] = axis, keepdims, a.shape
    return np.sum(a, axis=axis, keepdims=keepdims)


def _sum_bwd(ctx, g):
    return (_reduce_expand(g, ctx["in_shape"], ctx["axis"], ctx["keepdims"]).copy(),)


_sum = custom_vjp("sum", _sum_fwd, _sum_bwd)


def sum_reduce(a, axis=None, keepdims: bool = False):
    return _sum(a, axis=axis, keepdims=keepdims)


def _mean_fwd(ctx, a):
    axis = _norm_axis(ctx["params"].get("axis"), a.ndim)
    keepdims = ctx["params"].get("keepdims", False)
    ctx["axis"], ctx["keepdims"], ctx["in_shape"] = axis, keepdims, a.shape
    if axis is None:
        ctx["count"] = a.size
    else:
        ctx["count"] = int(np.prod([a.shape[i] for i in axis]))
    return np.mean(a, axis=axis, keepdims=keepdims)


def _mean_bwd(ctx, g):
    g = _reduce_expand(g, ctx["in_shape"], ctx["axis"], ctx["keepdims"])
    return (g / ctx["count"],)


_mean = custom_vjp("mean", _mean_fwd, _mean_bwd)


def mean_reduce(a, axis=None, keepdims: bool = False):
    return _mean(a, axis=axis, keepdims=keepdims)


def _sumsq_fwd(ctx, a):
    ctx["a"] = a
    return np.sum(a * a)


def _sumsq_bwd(ctx, g):
    return (2.0 * g * ctx["a"],)


sumsq = custom_vjp("sumsq", _sumsq_fwd, _sumsq_bwd)


def _cumsum_fwd(ctx, a):
    axis = ctx["params"]["axis"]
    ctx["axis"] = axis
    return np.cumsum(a, axis=axis)


def _cumsum_bwd(ctx, g):
    axis = ctx["axis"]
    return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)


_cumsum = custom_vjp("cumsum", _cumsum_fwd, _cumsum_bwd)


def cumsum(a, axis: int):
    return _cumsum(a, axis=axis)


# -- shape manipulation -------------------------------------------------------

def _reshape_fwd(ctx, a):
    shape = ctx["params"]["shape"]
    ctx["in_shape"] = a.shape
    try:
        return a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")


def _reshape_bwd(ctx, g):
    return (g.reshape(ctx["in_shape"]),)


_reshape = custom_vjp("reshape", _reshape_fwd, _reshape_bwd)


def reshape(a, shape):
    return _reshape(a, shape=tuple(shape))


def _transpose_fwd(ctx, a):
    axes = ctx["params"].get("axes")
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    ctx["axes"] = axes
    return np.transpose(a, axes)


def _transpose_bwd(ctx, g):
    inv = np.argsort(ctx["axes"])
    return (np.transpose(g, inv),)


_transpose = custom_vjp("transpose", _transpose_fwd, _transpose_bwd)


def transpose(a, axes=None):
    return _transpose(a, axes=axes)


def swapaxes(a, axis_a: int, axis_b: int):
    t = constant(a)
    axes = list(range(t.ndim))
    axes[axis_a], axes[axis_b] = axes[axis_b], axes[axis_a]
    return transpose(t, axes=tuple(axes))


def _broadcast_fwd(ctx, a):
    shape = ctx["params"]["shape"]
    ctx["in_shape"] = a.shape
    try:
        return np.broadcast_to(a, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}")


def _broadcast_bwd(ctx, g):
    return (_unbroadcast(g, ctx["in_shape"]),)


_broadcast = custom_vjp("broadcast", _broadcast_fwd, _broadcast_bwd)


def broadcast_to(a, shape):
    return _broadcast(a, shape=tuple(shape))


def _getitem_fwd(ctx, a):
    index = ctx["params"]["index"]
    ctx["index"], ctx["in_shape"] = index, a.shape
    return np.array(a[index])


def _getitem_bwd(ctx, g):
    out = np.zeros(ctx["in_shape"])
    np.add.at(out, ctx["index"], g)
    return (out,)


_getitem = custom_vjp("slice", _getitem_fwd, _getitem_bwd)


def getitem(a, index):
    return _getitem(a, index=index)


def _concat_fwd(ctx, *arrays):
    axis = ctx["params"]["axis"]
    ctx["axis"] = axis
    ctx["sizes"] = [arr.shape[axis] for arr in arrays]
    return np.concatenate(arrays, axis=axis)


def _concat_bwd(ctx, g):
    axis, sizes = ctx["axis"], ctx["sizes"]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


_concat = custom_vjp("concat", _concat_fwd, _concat_bwd)


def concat(tensors, axis: int = 0):
    return _concat(*tensors, axis=axis)


def _stack_fwd(ctx, *arrays):
    axis = ctx["params"]["axis"]
    ctx["axis"] = axis
    return np.stack(arrays, axis=axis)


def _stack_bwd(ctx, g):
    axis = ctx["axis"]
    return tuple(np.moveaxis(g, axis, 0))


_stack = custom_vjp("stack", _stack_fwd, _stack_bwd)


def stack(tensors, axis: int = 0):
    return _stack(*tensors, axis=axis)


def _where_fwd(ctx, cond, a, b):
    mask = cond.astype(bool)
    ctx["mask"] = mask
    ctx["shapes"] = (a.shape, b.shape)
    return np.where(mask, a, b)


def _where_bwd(ctx, g):
    mask = ctx["mask"]
    sa, sb = ctx["shapes"]
    ga = _unbroadcast(np.where(mask, g, 0.0), sa)
    gb = _unbroadcast(np.where(mask, 0.0, g), sb)
    return None, ga, gb


_where = custom_vjp("where", _where_fwd, _where_bwd)


def where(cond, a, b):
    cond_t = Tensor(np.asarray(cond, dtype=np.float64))
    return _where(cond_t, a, b)


def _det_fwd(ctx, a):
    ctx["a"] = a
    out = np.linalg.det(a)
    ctx["out"] = out
    return np.array(out)


def _det_bwd(ctx, g):
    a, out = ctx["a"], ctx["out"]
    inv_t = np.swapaxes(np.linalg.inv(a), -1, -2)
    return (np.asarray(g)[..., None, None] * np.asarray(out)[..., None, None] * inv_t,)


det = custom_vjp("det", _det_fwd, _det_bwd)


def _matinv_fwd(ctx, a):
    out = np.linalg.inv(a)
    ctx["out"] = out
    return out


def _matinv_bwd(ctx, g):
    inv = ctx["out"]
    inv_t = np.swapaxes(inv, -1, -2)
    return (-inv_t @ g @ inv_t,)


matinv = custom_vjp("matinv", _matinv_fwd, _matinv_bwd)
