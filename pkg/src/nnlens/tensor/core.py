"""Immutable f64 tensors and the append-only recording graph.

Every public operation on tensors goes through :func:`apply`, which does three
things in order:

1. if any argument type defines ``__nnl_function__`` the call is handed over
   to it (this is how the attribution engine intercepts a model's forward
   pass without the model knowing about it);
2. the primitive's numpy kernel is run;
3. when a :class:`Graph` is active and at least one input lives on it, a node
   is appended so that :func:`backward` can later walk the graph in reverse.

Arrays are stored C-contiguous (row-major) as ``float64``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..errors import ContractError

_local = threading.local()


def _graph_stack() -> list["Graph"]:
    stack = getattr(_local, "graphs", None)
    if stack is None:
        stack = _local.graphs = []
    return stack


def _tracers() -> list[list]:
    tracers = getattr(_local, "tracers", None)
    if tracers is None:
        tracers = _local.tracers = []
    return tracers


def active_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense row-major array of 64-bit floats.

    ``node_id`` is set when the tensor was produced while a graph was
    recording; it indexes into ``graph.nodes``.
    """

    __slots__ = ("_array", "node_id", "graph")
    __array_priority__ = 100

    def __init__(self, data: Any, *, node_id: int | None = None, graph: "Graph | None" = None):
        if isinstance(data, Tensor):
            data = data._array
        arr = np.array(data, dtype=np.float64, order="C")
        arr.flags.writeable = False
        self._array = arr
        self.node_id = node_id
        self.graph = graph

    @classmethod
    def _wrap(cls, arr: np.ndarray, node_id: int | None = None, graph: "Graph | None" = None) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out._array = arr
        out.node_id = node_id
        out.graph = graph
        return out

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def ndim(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    def numpy(self) -> np.ndarray:
        return self._array.copy()

    def item(self) -> float:
        return float(self._array.reshape(-1)[0]) if self._array.size == 1 else _not_scalar(self.shape)

    def tolist(self):
        return self._array.tolist()

    def flat(self) -> list[float]:
        return self._array.reshape(-1).tolist()

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag}, data={np.array2string(self._array, precision=4, threshold=20)})"

    # operator sugar; the implementations live in ops.py
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __rmatmul__(self, other):
        return _ops().matmul(other, self)

    def __getitem__(self, index):
        return _ops().getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return _ops().transpose(self)

    def sum(self, axis=None) -> "Tensor":
        return _ops().sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return _ops().mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)


def _not_scalar(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


def _ops():
    from . import ops

    return ops


@dataclass(frozen=True)
class Primitive:
    """A differentiable operation: numpy forward kernel plus vector-Jacobian product.

    ``vjp(grad_out, out, *inputs, **params)`` returns one gradient (or ``None``)
    per tensor input.
    """

    name: str
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]
    variadic: bool = False  # inputs arrive as one list (concat, stack)


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], tuple] | None


class Graph:
    """Append-only recording of primitive applications.

    Use as a context manager; only tensors registered with :meth:`leaf` (and
    anything computed from them while the graph is active) are recorded.
    Confined to the thread that created it.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def leaf(self, value: Any) -> Tensor:
        arr = value._array if isinstance(value, Tensor) else np.array(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), None))
        return Tensor._wrap(arr, node_id=len(self.nodes) - 1, graph=self)

    def _record(self, prim: Primitive, inputs, arrays, out, params) -> int:
        def vjp(g, _prim=prim, _arrays=arrays, _out=out, _params=params):
            return _prim.vjp(g, _out, *_arrays, **_params)

        self.nodes.append(Node(prim.name, tuple(inputs), vjp))
        return len(self.nodes) - 1


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if hasattr(type(value), "__nnl_function__"):
        return value
    return Tensor(value)


def apply(prim: Primitive, args: Sequence[Any], params: dict | None = None):
    params = params or {}
    flat = list(args[0]) if prim.variadic else list(args)
    flat = [as_tensor(a) for a in flat]
    for t in flat:
        handler = getattr(type(t), "__nnl_function__", None)
        if handler is not None:
            return handler(prim, flat, params)

    arrays = [t._array for t in flat]
    out = prim.forward(arrays, **params) if prim.variadic else prim.forward(*arrays, **params)
    graph = active_graph()
    node_id = None
    if graph is not None:
        ids = [t.node_id if t.graph is graph else None for t in flat]
        if any(i is not None for i in ids):
            if prim.variadic:
                node_id = graph._record(_variadic_adapter(prim), ids, (arrays,), out, params)
            else:
                node_id = graph._record(prim, ids, arrays, out, params)
    result = Tensor._wrap(out, node_id=node_id, graph=graph if node_id is not None else None)
    for trace in _tracers():
        trace.append((prim.name, result._array))
    return result


def _variadic_adapter(prim: Primitive) -> Primitive:
    return Primitive(prim.name, prim.forward, lambda g, out, arrays, **p: prim.vjp(g, out, arrays, **p))


def tracing_active() -> bool:
    return bool(_tracers())


def emit_trace(name: str, value: np.ndarray) -> None:
    """Record an op output on every active tracer (used by intercepting handlers)."""
    for trace in _tracers():
        trace.append((name, value))


class tracing:
    """Context manager collecting ``(op name, output array)`` for every primitive call."""

    def __enter__(self) -> list:
        self.records: list = []
        _tracers().append(self.records)
        return self.records

    def __exit__(self, *exc) -> None:
        _tracers().remove(self.records)


def backward(root: Tensor) -> dict[int, Tensor]:
    """Reverse-mode sweep from a scalar ``root``.

    Returns gradients of ``root`` for every node reachable from it, keyed by
    node id (leaves included).
    """
    if not isinstance(root, Tensor) or root.size != 1:
        shape = getattr(root, "shape", None)
        raise ContractError(f"backward() needs a scalar root tensor, got shape {shape}")
    if root.node_id is None or root.graph is None:
        raise ContractError("backward() root is not on a recording graph")
    graph = root.graph
    grads: dict[int, np.ndarray] = {root.node_id: np.ones(root.shape)}
    for nid in range(root.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = graph.nodes[nid]
        if node.vjp is None:
            continue
        for inp, ig in zip(node.inputs, node.vjp(g)):
            if inp is None or ig is None:
                continue
            prev = grads.get(inp)
            grads[inp] = ig if prev is None else prev + ig
    return {k: Tensor._wrap(v) for k, v in grads.items()}
