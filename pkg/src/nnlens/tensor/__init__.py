from .container import load_tensors, save_tensors
from .core import Graph, Primitive, Tensor, active_graph, apply, backward, emit_trace, tracing, tracing_active
from .ops import (
    PRIMITIVES,
    add,
    concat,
    div,
    elementwise,
    exp,
    getitem,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    normalize,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    sum,
    tanh,
    transpose,
)

__all__ = [
    "Graph", "Primitive", "Tensor", "PRIMITIVES", "active_graph", "apply", "backward", "emit_trace", "tracing", "tracing_active",
    "load_tensors", "save_tensors",
    "add", "concat", "div", "elementwise", "exp", "getitem", "log", "log_softmax", "matmul", "mean",
    "mul", "neg", "normalize", "relu", "reshape", "sigmoid", "softmax", "stack", "sub", "sum", "tanh",
    "transpose",
]
