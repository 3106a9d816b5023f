"""The fixed primitive-operation set.

Broadcasting is limited to the trailing-dimension form: the lower-rank
operand's shape must equal the trailing part of the other's shape (scalars
always broadcast). That covers bias-adds and per-feature scaling, which is
all the models need.
"""
from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from ..errors import DimensionError
from .core import Primitive, Tensor, apply

PRIMITIVES: dict[str, Primitive] = {}


def _register(prim: Primitive) -> Primitive:
    PRIMITIVES[prim.name] = prim
    return prim


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of trailing/numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


def check_trailing(a: tuple[int, ...], b: tuple[int, ...], op: str) -> None:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if len(short) and long_[len(long_) - len(short):] != short:
        raise DimensionError(
            f"{op}: shapes {a} and {b} are not trailing-broadcast compatible"
        )


def _binary(name, fwd, vjp_a, vjp_b):
    def forward(a, b):
        check_trailing(a.shape, b.shape, name)
        return fwd(a, b)

    def vjp(g, out, a, b):
        return unbroadcast(vjp_a(g, out, a, b), a.shape), unbroadcast(vjp_b(g, out, a, b), b.shape)

    return _register(Primitive(name, forward, vjp))


_ADD = _binary("add", np.add, lambda g, o, a, b: g, lambda g, o, a, b: g)
_SUB = _binary("sub", np.subtract, lambda g, o, a, b: g, lambda g, o, a, b: -g)
_MUL = _binary("mul", np.multiply, lambda g, o, a, b: g * b, lambda g, o, a, b: g * a)
_DIV = _binary("div", np.divide, lambda g, o, a, b: g / b, lambda g, o, a, b: -g * a / (b * b))

_NEG = _register(Primitive("neg", np.negative, lambda g, o, x: (-g,)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


_SIGMOID = _register(Primitive("sigmoid", _sigmoid, lambda g, o, x: (g * o * (1.0 - o),)))
_TANH = _register(Primitive("tanh", np.tanh, lambda g, o, x: (g * (1.0 - o * o),)))
_RELU = _register(
    Primitive("relu", lambda x: np.maximum(x, 0.0), lambda g, o, x: (g * (x > 0),))
)
_EXP = _register(Primitive("exp", np.exp, lambda g, o, x: (g * o,)))
_LOG = _register(Primitive("log", np.log, lambda g, o, x: (g / x,)))


def check_matmul(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if len(sa) < 1 or len(sb) < 2:
        raise DimensionError(f"matmul: shapes {sa} and {sb} need rank >= 1 and >= 2")
    if sa[-1] != sb[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {sa} and {sb}")
    la, lb = sa[:-2], sb[:-2]
    if la and lb and la != lb:
        raise DimensionError(f"matmul: batch dimensions differ for shapes {sa} and {sb}")


def _matmul_fwd(a, b):
    check_matmul(a.shape, b.shape)
    return np.matmul(a, b)


def _matmul_vjp(g, out, a, b):
    if a.ndim == 1:
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.multiply.outer(a, g) if b.ndim == 2 else a[:, None] * g[..., None, :]
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


_MATMUL = _register(Primitive("matmul", _matmul_fwd, _matmul_vjp))


def _softmax_fwd(x, axis=-1, mask=None):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _softmax_vjp(g, out, x, axis=-1, mask=None):
    return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


_SOFTMAX = _register(Primitive("softmax", _softmax_fwd, _softmax_vjp))


def _log_softmax_fwd(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


_LOG_SOFTMAX = _register(
    Primitive(
        "log_softmax",
        _log_softmax_fwd,
        lambda g, o, x, axis=-1: (g - np.exp(o) * np.sum(g, axis=axis, keepdims=True),),
    )
)


def _normalize_fwd(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _normalize_vjp(g, y, x, eps=1e-5):
    var = ((x - x.mean(axis=-1, keepdims=True)) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (inv * (g - g.mean(axis=-1, keepdims=True) - y * (g * y).mean(axis=-1, keepdims=True)),)


_NORMALIZE = _register(Primitive("normalize", _normalize_fwd, _normalize_vjp))


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def _reduced_count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[a] for a in axes]))


_SUM = _register(
    Primitive(
        "sum",
        lambda x, axis=None: np.sum(x, axis=axis),
        lambda g, o, x, axis=None: (_expand_reduced(g, x.shape, axis),),
    )
)
_MEAN = _register(
    Primitive(
        "mean",
        lambda x, axis=None: np.mean(x, axis=axis),
        lambda g, o, x, axis=None: (_expand_reduced(g, x.shape, axis) / _reduced_count(x.shape, axis),),
    )
)
_RESHAPE = _register(
    Primitive(
        "reshape",
        lambda x, shape: np.reshape(x, shape),
        lambda g, o, x, shape: (np.reshape(g, x.shape),),
    )
)


def _transpose_fwd(x, axes=None):
    return np.transpose(x, axes)


def _transpose_vjp(g, o, x, axes=None):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


_TRANSPOSE = _register(Primitive("transpose", _transpose_fwd, _transpose_vjp))


def _getitem_vjp(g, o, x, index):
    z = np.zeros_like(x)
    np.add.at(z, index, g)
    return (z,)


_GETITEM = _register(Primitive("getitem", lambda x, index: x[index], _getitem_vjp))


def _concat_vjp(g, out, arrays, axis=0):
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _stack_vjp(g, out, arrays, axis=0):
    return tuple(np.moveaxis(g, axis, 0))


_CONCAT = _register(
    Primitive("concat", lambda arrays, axis=0: np.concatenate(arrays, axis=axis), _concat_vjp, variadic=True)
)
_STACK = _register(
    Primitive("stack", lambda arrays, axis=0: np.stack(arrays, axis=axis), _stack_vjp, variadic=True)
)


# --- public functions -------------------------------------------------------

def add(a, b):
    return apply(_ADD, (a, b))


def sub(a, b):
    return apply(_SUB, (a, b))


def mul(a, b):
    return apply(_MUL, (a, b))


def div(a, b):
    return apply(_DIV, (a, b))


def neg(x):
    return apply(_NEG, (x,))


def sigmoid(x):
    return apply(_SIGMOID, (x,))


def tanh(x):
    return apply(_TANH, (x,))


def relu(x):
    return apply(_RELU, (x,))


def exp(x):
    return apply(_EXP, (x,))


def log(x):
    return apply(_LOG, (x,))


def matmul(a, b):
    return apply(_MATMUL, (a, b))


def softmax(x, axis: int = -1, mask: np.ndarray | None = None):
    """Softmax with max-subtraction; ``mask`` (bool, broadcastable) zeroes excluded entries."""
    return apply(_SOFTMAX, (x,), {"axis": _neg_axis(x, axis), "mask": mask})


def log_softmax(x, axis: int = -1):
    return apply(_LOG_SOFTMAX, (x,), {"axis": _neg_axis(x, axis)})


def normalize(x, eps: float = 1e-5):
    """Zero-mean, unit-variance normalisation over the last axis (layer norm without affine)."""
    return apply(_NORMALIZE, (x,), {"eps": eps})


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    return apply(_SUM, (x,), {"axis": _norm_axes(x, axis)})


def mean(x, axis=None):
    return apply(_MEAN, (x,), {"axis": _norm_axes(x, axis)})


def reshape(x, shape: Sequence[int]):
    return apply(_RESHAPE, (x,), {"shape": tuple(int(s) for s in shape)})


def transpose(x, axes: Sequence[int] | None = None):
    return apply(_TRANSPOSE, (x,), {"axes": None if axes is None else tuple(axes)})


def getitem(x, index):
    if not isinstance(index, tuple):
        index = (index,)
    index = tuple(np.asarray(i, dtype=np.intp) if isinstance(i, (list, np.ndarray)) else i for i in index)
    return apply(_GETITEM, (x,), {"index": index})


def concat(xs: Sequence[Any], axis: int = 0):
    return apply(_CONCAT, (list(xs),), {"axis": axis})


def stack(xs: Sequence[Any], axis: int = 0):
    return apply(_STACK, (list(xs),), {"axis": axis})


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div, "sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(op: str, *args):
    """Dispatch one of the elementwise primitives by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


def _ndim(x) -> int:
    return len(x.shape) if hasattr(x, "shape") else np.ndim(x)


def _neg_axis(x, axis: int) -> int:
    nd = _ndim(x)
    return axis - nd if axis >= 0 else axis


def _norm_axes(x, axis):
    if axis is None:
        return None
    nd = _ndim(x)
    if isinstance(axis, int):
        return axis % nd
    return tuple(a % nd for a in axis)
