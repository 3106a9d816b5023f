"""Decomposed tensors and the per-primitive propagation rules.

A :class:`DecomposedTensor` stands in for an activation during a forward
pass and answers every tensor primitive through ``__nnl_function__``. It
comes in two forms:

``coalition``
    ``values[k]`` is the activation the network produces when only the
    groups in coalition ``k`` of the method's plan are present (absent
    groups contribute zero input). Every primitive is applied to all
    coalitions at once, so each node's game is evaluated on the inputs the
    node really receives under that coalition. Slots are derived on demand
    by the method's estimator. This is the default form.

``slots``
    ``values[g]`` is the contribution of group ``g`` and ``values[G]`` the
    bias slot. Linear and structural primitives act slot-wise (constants go
    to the bias slot); everything else goes through
    :func:`rule_interaction`, whose game is the primitive applied to the
    bias slot plus the summed slots of a coalition.

In both forms the slots of every node sum to the ordinary activation.
"""
from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from ..errors import CapabilityError, ContractError
from ..tensor import PRIMITIVES, Primitive, Tensor, emit_trace, tracing_active
from ..tensor.ops import check_matmul, check_trailing
from .methods import AttributionMethod

FORMS = ("coalition", "slots")

_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}
_ROW_WISE = {"neg", "sigmoid", "tanh", "relu", "exp", "log", "softmax", "log_softmax", "normalize"}
_STRUCTURAL = {"neg", "reshape", "transpose", "getitem", "sum", "mean", "concat", "stack"}
SUPPORTED = set(_BINARY) | _ROW_WISE | _STRUCTURAL | {"matmul"}


class DecomposedTensor:
    __slots__ = ("values", "method", "G", "form")

    def __init__(self, values: np.ndarray, method: AttributionMethod, G: int, form: str = "slots"):
        if form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        self.values = np.asarray(values, dtype=np.float64)
        self.method, self.G, self.form = method, G, form
        lead = method.plan(G).size if form == "coalition" else G + 1
        if self.values.shape[0] != lead:
            raise ContractError(f"{form} tensor needs a leading axis of {lead}, got {self.values.shape}")

    @classmethod
    def from_slots(cls, slots, method: AttributionMethod) -> "DecomposedTensor":
        slots = np.asarray(slots, dtype=np.float64)
        return cls(slots, method, slots.shape[0] - 1, "slots")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def plan(self):
        return self.method.plan(self.G)

    @property
    def slots(self) -> np.ndarray:
        """``(G + 1, *shape)``: group contributions followed by the bias slot."""
        if self.form == "slots":
            return self.values
        plan = self.plan
        return np.concatenate([plan.combine(self.values), self.values[plan.empty_index][None]])

    def total(self) -> np.ndarray:
        return self.slots.sum(axis=0)

    def to_slots(self) -> "DecomposedTensor":
        return self if self.form == "slots" else DecomposedTensor(self.slots, self.method, self.G, "slots")

    def __repr__(self) -> str:
        return f"DecomposedTensor(form={self.form}, G={self.G}, shape={self.shape})"

    @classmethod
    def __nnl_function__(cls, prim: Primitive, args: Sequence[Any], params: dict):
        dec = [a for a in args if isinstance(a, DecomposedTensor)]
        first = dec[0]
        for d in dec[1:]:
            if d.G != first.G or d.form != first.form or d.method != first.method:
                raise ContractError(f"{prim.name}: decomposed operands disagree on groups, form or method")
        if prim.name not in SUPPORTED:
            raise CapabilityError(f"no decomposition rule for primitive {prim.name!r}")
        if first.form == "coalition":
            out = batched_apply(prim, _operands(args), params)
            result = DecomposedTensor(out, first.method, first.G, "coalition")
        else:
            result = _propagate_slots(prim, args, params, first)
        if tracing_active():
            emit_trace(prim.name, result.total())
        return result

    # operator sugar mirrors Tensor
    def __add__(self, o): return _ops().add(self, o)
    def __radd__(self, o): return _ops().add(o, self)
    def __sub__(self, o): return _ops().sub(self, o)
    def __rsub__(self, o): return _ops().sub(o, self)
    def __mul__(self, o): return _ops().mul(self, o)
    def __rmul__(self, o): return _ops().mul(o, self)
    def __matmul__(self, o): return _ops().matmul(self, o)
    def __rmatmul__(self, o): return _ops().matmul(o, self)
    def __neg__(self): return _ops().neg(self)
    def __getitem__(self, index): return _ops().getitem(self, index)


def _ops():
    from ..tensor import ops

    return ops


def _operands(args) -> list[tuple[np.ndarray, bool]]:
    """(array, has leading batch axis) per argument."""
    return [(a.values, True) if isinstance(a, DecomposedTensor) else (np.asarray(a.data), False) for a in args]


def _pad(a: np.ndarray, rank: int) -> np.ndarray:
    """Insert unit axes after the batch axis so the per-item rank becomes ``rank``."""
    inner = a.shape[1:]
    return a.reshape((a.shape[0],) + (1,) * (rank - len(inner)) + inner)


def _shift(axis: int) -> int:
    return axis + 1 if axis >= 0 else axis


def _batched_matmul(a, a_b, b, b_b):
    sa = a.shape[1:] if a_b else a.shape
    sb = b.shape[1:] if b_b else b.shape
    check_matmul(sa, sb)
    nb = max(len(sa) - 2, len(sb) - 2, 0)
    squeeze = False
    if a_b:
        if len(sa) == 1:
            a = a.reshape((a.shape[0],) + (1,) * nb + (1, sa[0]))
            squeeze = True
        else:
            a = _pad(a, nb + 2)
    if b_b:
        b = _pad(b, nb + 2)
    out = np.matmul(a, b)
    return out[..., 0, :] if squeeze else out


def batched_apply(prim: Primitive | str, operands: list[tuple[np.ndarray, bool]], params: dict | None = None):
    """Apply a primitive to operands where batched ones carry a leading axis.

    Shapes are validated on the per-item shapes, exactly as the plain
    primitive would; the result has the shared leading axis.
    """
    name = prim if isinstance(prim, str) else prim.name
    params = params or {}
    lead = next(a.shape[0] for a, b in operands if b)
    if name in _BINARY:
        (a, a_b), (b, b_b) = operands
        sa, sb = (a.shape[1:] if a_b else a.shape), (b.shape[1:] if b_b else b.shape)
        check_trailing(sa, sb, name)
        rank = max(len(sa), len(sb))
        return _BINARY[name](_pad(a, rank) if a_b else a, _pad(b, rank) if b_b else b)
    if name == "matmul":
        (a, a_b), (b, b_b) = operands
        return _batched_matmul(a, a_b, b, b_b)
    if name in _ROW_WISE:
        # these act on trailing axes only (softmax axes are stored negative)
        return PRIMITIVES[name].forward(operands[0][0], **params)
    x = operands[0][0]
    if name in ("sum", "mean"):
        axis = params.get("axis")
        if axis is None:
            axis = tuple(range(1, x.ndim))
        elif isinstance(axis, int):
            axis = _shift(axis % (x.ndim - 1))
        else:
            axis = tuple(_shift(a % (x.ndim - 1)) for a in axis)
        return np.sum(x, axis=axis) if name == "sum" else np.mean(x, axis=axis)
    if name == "reshape":
        return np.reshape(x, (lead,) + tuple(params["shape"]))
    if name == "transpose":
        inner = x.ndim - 1
        axes = params.get("axes")
        axes = tuple(reversed(range(inner))) if axes is None else tuple(a % inner for a in axes)
        return np.transpose(x, (0,) + tuple(a + 1 for a in axes))
    if name == "getitem":
        index = params["index"]
        index = index if isinstance(index, tuple) else (index,)
        return x[(slice(None),) + index]
    if name in ("concat", "stack"):
        arrays = [a if b else np.broadcast_to(a, (lead,) + a.shape) for a, b in operands]
        axis = _shift(params.get("axis", 0))
        return np.concatenate(arrays, axis=axis) if name == "concat" else np.stack(arrays, axis=axis)
    raise CapabilityError(f"no decomposition rule for primitive {name!r}")


def _constant_slots(value: np.ndarray, G: int) -> np.ndarray:
    slots = np.zeros((G + 1,) + value.shape)
    slots[G] = value
    return slots


def _is_const(a) -> bool:
    return not isinstance(a, DecomposedTensor)


def _propagate_slots(prim: Primitive, args, params, first: DecomposedTensor) -> DecomposedTensor:
    name, G, method = prim.name, first.G, first.method
    linear = name in _STRUCTURAL or name in ("add", "sub")
    if name in ("mul", "matmul") and any(_is_const(a) for a in args):
        linear = True
    if name == "div" and _is_const(args[1]):
        linear = True
    if not linear:
        return rule_interaction(args, prim, method, params)
    if name in ("add", "sub", "concat", "stack"):
        # constants are static information: they belong to the bias slot only
        operands = [(a.values, True) if not _is_const(a) else (_constant_slots(np.asarray(a.data), G), True)
                    for a in args]
    else:
        operands = _operands(args)
    return DecomposedTensor(batched_apply(prim, operands, params), method, G, "slots")


def _as_slot_tensor(x) -> DecomposedTensor:
    if not isinstance(x, DecomposedTensor):
        raise ContractError(f"expected a DecomposedTensor, got {type(x).__name__}")
    return x.to_slots()


def rule_linear(x: DecomposedTensor, W, b=None) -> DecomposedTensor:
    """``x @ W + b`` per slot, with ``b`` added to the bias slot only."""
    x = _as_slot_tensor(x)
    W = np.asarray(W.data if isinstance(W, Tensor) else W, dtype=np.float64)
    out = _batched_matmul(x.values, True, W, False)
    if b is not None:
        b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
        check_trailing(out.shape[1:], b.shape, "rule_linear")
        out = out.copy()
        out[x.G] = out[x.G] + b
    return DecomposedTensor(out, x.method, x.G, "slots")


def rule_add(a: DecomposedTensor, b: DecomposedTensor) -> DecomposedTensor:
    """Slot-wise sum of two decompositions over the same groups."""
    a, b = _as_slot_tensor(a), _as_slot_tensor(b)
    if a.G != b.G:
        raise ContractError(f"rule_add: group counts differ ({a.G} vs {b.G})")
    out = batched_apply("add", [(a.values, True), (b.values, True)])
    return DecomposedTensor(out, a.method, a.G, "slots")


def _primitive(f) -> Primitive | None:
    if f == "identity" or f is None:
        return None
    if isinstance(f, Primitive) and PRIMITIVES.get(f.name) is f and f.name in SUPPORTED:
        return f
    if isinstance(f, str) and f in PRIMITIVES and f in SUPPORTED:
        return PRIMITIVES[f]
    label = getattr(f, "name", None) or getattr(f, "__name__", None) or repr(f)
    raise CapabilityError(f"rule_interaction only accepts primitives from the tensor engine, got {label!r}")


def rule_interaction(inputs: Sequence[Any], f, method: AttributionMethod | None = None,
                     params: dict | None = None) -> DecomposedTensor:
    """Shapley split of a nonlinear primitive.

    The game is ``v(C) = f(bias slots + sum of the slots of groups in C)``
    over the decomposed inputs (plain tensors stay fixed). Output slot ``g``
    is the method's estimate of group ``g``'s Shapley value and the bias slot
    is ``v(empty)``.
    """
    prim = _primitive(f)
    dec = [x.to_slots() if isinstance(x, DecomposedTensor) else x for x in inputs]
    firsts = [x for x in dec if isinstance(x, DecomposedTensor)]
    if not firsts:
        raise ContractError("rule_interaction needs at least one decomposed input")
    G = firsts[0].G
    if any(x.G != G for x in firsts):
        raise ContractError("rule_interaction: inputs disagree on the number of groups")
    method = method or firsts[0].method
    plan = method.plan(G)
    member = plan.membership()
    operands = []
    for x in dec:
        if isinstance(x, DecomposedTensor):
            groups = np.tensordot(member, x.values[:G], axes=(1, 0))
            operands.append((x.values[G][None] + groups, True))
        else:
            operands.append((np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64), False))
    if prim is None:
        if len(operands) != 1:
            raise ContractError("identity takes exactly one input")
        values = operands[0][0]
    else:
        values = batched_apply(prim, operands, params)
    slots = np.concatenate([plan.combine(values), values[plan.empty_index][None]])
    return DecomposedTensor(slots, method, G, "slots")
