"""Dense float64 tensors, a small reverse-mode graph, Adam, and gradient checking.

Values are plain ``numpy.ndarray`` objects of dtype float64, marked read-only
once they enter the graph. A :class:`Node` is built eagerly (its value is
computed on construction) and remembers its op and inputs, so the graph can
be re-evaluated from new leaf values with :func:`eval_graph` and
differentiated with :func:`backward`.
"""

from __future__ import annotations

import builtins
import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs: shape mismatches, non-scalar roots, bad values."""

    def __init__(self, message: str, node: Optional["Node"] = None):
        if node is not None:
            message = f"{node.label}: {message}"
        super().__init__(message)
        self.node = node


def as_tensor(data, name: str = "tensor") -> np.ndarray:
    """Return a read-only float64 copy of ``data``; NaN and Inf are rejected."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GraphError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


# --------------------------------------------------------------------------
# primitive rules: forward(values, attrs) and vjp(grad_out, values, out, attrs)


def _unbroadcast_leading(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def _sum_fwd(v, a):
    return np.sum(v[0], axis=a.get("axis"))


def _sum_vjp(g, v, out, a):
    axis = a.get("axis")
    if axis is None:
        return [np.broadcast_to(g, v[0].shape).copy()]
    return [np.broadcast_to(np.expand_dims(g, axis), v[0].shape).copy()]


def _mean_fwd(v, a):
    return np.mean(v[0], axis=a.get("axis"))


def _mean_vjp(g, v, out, a):
    axis = a.get("axis")
    n = v[0].size if axis is None else v[0].shape[axis]
    return [x / n for x in _sum_vjp(g, v, out, a)]


def _sqnorm_fwd(v, a):
    return np.sum(v[0] * v[0], axis=a.get("axis"))


def _sqnorm_vjp(g, v, out, a):
    axis = a.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [2.0 * v[0] * g]


def _sqrt_vjp(g, v, out, a):
    # subgradient 0 at the origin keeps norms of identical rows finite
    safe = np.where(out > 0.0, out, 1.0)
    return [np.where(out > 0.0, g / (2.0 * safe), 0.0)]


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _xent_fwd(v, a):
    logp = log_softmax(v[0])
    labels = a["labels"]
    if logp.ndim == 1:
        return -logp[labels]
    return -logp[np.arange(logp.shape[0]), labels]


def _xent_vjp(g, v, out, a):
    p = np.exp(log_softmax(v[0]))
    labels = a["labels"]
    if p.ndim == 1:
        p[labels] -= 1.0
        return [g * p]
    p[np.arange(p.shape[0]), labels] -= 1.0
    return [p * np.asarray(g)[:, None]]


def _concat_vjp(g, v, out, a):
    axis = a["axis"]
    bounds = np.cumsum([x.shape[axis] for x in v])[:-1]
    return list(np.split(g, bounds, axis=axis))


def _slice_index(a, ndim):
    idx = [builtins.slice(None)] * ndim
    idx[a["axis"]] = builtins.slice(a["start"], a["stop"])
    return tuple(idx)


def _slice_vjp(g, v, out, a):
    full = np.zeros_like(v[0])
    full[_slice_index(a, v[0].ndim)] = g
    return [full]


@dataclass(frozen=True)
class Rule:
    forward: Callable
    vjp: Callable
    arity: int


RULES: Dict[str, Rule] = {
    "add": Rule(lambda v, a: v[0] + v[1], lambda g, v, o, a: [g, g], 2),
    "sub": Rule(lambda v, a: v[0] - v[1], lambda g, v, o, a: [g, -g], 2),
    "mul": Rule(lambda v, a: v[0] * v[1], lambda g, v, o, a: [g * v[1], g * v[0]], 2),
    "matmul": Rule(lambda v, a: v[0] @ v[1], lambda g, v, o, a: [g @ v[1].T, v[0].T @ g], 2),
    "relu": Rule(lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: [g * (v[0] > 0.0)], 1),
    "tanh": Rule(lambda v, a: np.tanh(v[0]), lambda g, v, o, a: [g * (1.0 - o * o)], 1),
    "exp": Rule(lambda v, a: np.exp(v[0]), lambda g, v, o, a: [g * o], 1),
    "log": Rule(lambda v, a: np.log(v[0]), lambda g, v, o, a: [g / v[0]], 1),
    "sqrt": Rule(lambda v, a: np.sqrt(v[0]), _sqrt_vjp, 1),
    "sum": Rule(_sum_fwd, _sum_vjp, 1),
    "mean": Rule(_mean_fwd, _mean_vjp, 1),
    "broadcast": Rule(
        lambda v, a: np.broadcast_to(v[0], a["shape"]).copy(),
        lambda g, v, o, a: [_unbroadcast_leading(g, v[0].shape)],
        1,
    ),
    "reshape": Rule(
        lambda v, a: v[0].reshape(a["shape"]),
        lambda g, v, o, a: [g.reshape(v[0].shape)],
        1,
    ),
    "concat": Rule(lambda v, a: np.concatenate(v, axis=a["axis"]), _concat_vjp, -1),
    "slice": Rule(lambda v, a: v[0][_slice_index(a, v[0].ndim)].copy(), _slice_vjp, 1),
    "softmax_xent": Rule(_xent_fwd, _xent_vjp, 1),
    "squared_norm": Rule(_sqnorm_fwd, _sqnorm_vjp, 1),
}


def _check_shapes(op: str, values: Sequence[np.ndarray], attrs: dict, node: "Node") -> None:
    if op in ("add", "sub", "mul"):
        if values[0].shape != values[1].shape:
            raise GraphError(f"{op} operands have shapes {values[0].shape} and {values[1].shape}", node)
    elif op == "matmul":
        a, b = values
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise GraphError(f"matmul of {a.shape} by {b.shape}", node)
    elif op == "broadcast":
        src, dst = values[0].shape, tuple(attrs["shape"])
        if len(src) > len(dst) or dst[len(dst) - len(src):] != src:
            raise GraphError(f"cannot broadcast {src} to {dst} by leading dimensions", node)
    elif op == "reshape":
        if int(np.prod(attrs["shape"])) != values[0].size:
            raise GraphError(f"cannot reshape {values[0].shape} to {attrs['shape']}", node)
    elif op == "concat":
        axis = attrs["axis"]
        ref = list(values[0].shape)
        for v in values[1:]:
            other = list(v.shape)
            if len(other) != len(ref) or other[:axis] + other[axis + 1:] != ref[:axis] + ref[axis + 1:]:
                raise GraphError(f"concat shapes {[x.shape for x in values]} disagree off axis {axis}", node)
    elif op == "softmax_xent":
        logits, labels = values[0], np.asarray(attrs["labels"])
        k = logits.shape[-1]
        rows = () if logits.ndim == 1 else (logits.shape[0],)
        if logits.ndim not in (1, 2) or labels.shape != rows:
            raise GraphError(f"labels shape {labels.shape} does not match logits {logits.shape}", node)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise GraphError(f"label outside [0, {k})", node)


# --------------------------------------------------------------------------
# graph nodes

_ids = itertools.count()


class Node:
    """A value in the differentiation graph.

    Leaves are created with :meth:`leaf` (trainable) or :meth:`const`; every
    other node is produced by one of the primitive functions in this module.
    """

    __slots__ = ("id", "op", "inputs", "value", "grad", "attrs", "name", "requires_grad")

    def __init__(self, op: str, inputs: Sequence["Node"], value: np.ndarray, attrs=None,
                 name: Optional[str] = None, requires_grad: bool = False):
        self.id = next(_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.attrs = attrs or {}
        self.name = name
        self.requires_grad = requires_grad

    @classmethod
    def leaf(cls, value, name: Optional[str] = None) -> "Node":
        return cls("leaf", (), as_tensor(value, name or "leaf"), name=name, requires_grad=True)

    @classmethod
    def const(cls, value, name: Optional[str] = None) -> "Node":
        return cls("const", (), as_tensor(value, name or "const"), name=name)

    @property
    def is_leaf(self) -> bool:
        return self.op in ("leaf", "const")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def label(self) -> str:
        return f"node {self.id} ({self.op}{', ' + self.name if self.name else ''})"

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return sub(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)


def _apply(op: str, inputs: Sequence[Node], name: Optional[str] = None, **attrs) -> Node:
    inputs = [x if isinstance(x, Node) else Node.const(x) for x in inputs]
    node = Node(op, inputs, None, attrs, name, any(x.requires_grad for x in inputs))
    values = [x.value for x in inputs]
    _check_shapes(op, values, attrs, node)
    node.value = _frozen(RULES[op].forward(values, attrs))
    return node


def add(a, b, name=None):
    return _apply("add", (a, b), name)


def sub(a, b, name=None):
    return _apply("sub", (a, b), name)


def mul(a, b, name=None):
    return _apply("mul", (a, b), name)


def matmul(a, b, name=None):
    return _apply("matmul", (a, b), name)


def relu(a, name=None):
    return _apply("relu", (a,), name)


def tanh(a, name=None):
    return _apply("tanh", (a,), name)


def exp(a, name=None):
    return _apply("exp", (a,), name)


def log(a, name=None):
    return _apply("log", (a,), name)


def sqrt(a, name=None):
    return _apply("sqrt", (a,), name)


def sum(a, axis: Optional[int] = None, name=None):  # noqa: A001 - mirrors numpy
    return _apply("sum", (a,), name, axis=axis)


def mean(a, axis: Optional[int] = None, name=None):
    return _apply("mean", (a,), name, axis=axis)


def broadcast(a, shape: Sequence[int], name=None):
    return _apply("broadcast", (a,), name, shape=tuple(shape))


def reshape(a, shape: Sequence[int], name=None):
    return _apply("reshape", (a,), name, shape=tuple(shape))


def concat(nodes: Sequence[Node], axis: int = -1, name=None):
    nodes = [x if isinstance(x, Node) else Node.const(x) for x in nodes]
    ndim = nodes[0].value.ndim
    return _apply("concat", nodes, name, axis=axis % ndim)


def slice(a, start: int, stop: int, axis: int = 0, name=None):  # noqa: A001
    return _apply("slice", (a,), name, axis=axis, start=start, stop=stop)


def softmax_xent(logits, labels, name=None):
    """Cross-entropy of ``softmax(logits)`` against integer ``labels``, one value per row."""
    return _apply("softmax_xent", (logits,), name, labels=np.asarray(labels, dtype=np.int64))


def squared_norm(a, axis: Optional[int] = None, name=None):
    return _apply("squared_norm", (a,), name, axis=axis)


def scale(a: Node, c: float, name=None) -> Node:
    """Multiply by a constant scalar (a broadcast constant and ``mul``)."""
    return mul(a, broadcast(Node.const(c), a.shape), name)


# --------------------------------------------------------------------------
# evaluation and differentiation


def topo_order(root: Node) -> List[Node]:
    """Inputs-first ordering, deterministic in input order."""
    order: List[Node] = []
    seen = set()
    stack: List[Tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for x in reversed(node.inputs):
            if x.id not in seen:
                stack.append((x, False))
    return order


def leaves(root: Node) -> List[Node]:
    return [n for n in topo_order(root) if n.op == "leaf"]


def eval_graph(root: Node, rules: Optional[Mapping[str, Rule]] = None) -> np.ndarray:
    """Recompute every interior node from the current leaf values and return the root value."""
    rules = rules or RULES
    for node in topo_order(root):
        if node.is_leaf:
            continue
        values = [x.value for x in node.inputs]
        _check_shapes(node.op, values, node.attrs, node)
        out = rules[node.op].forward(values, node.attrs)
        if not np.all(np.isfinite(out)):
            raise GraphError("non-finite value", node)
        node.value = _frozen(out)
    return root.value


def backward(root: Node, wrt: Iterable[Node] = (),
             rules: Optional[Mapping[str, Rule]] = None) -> Dict[int, np.ndarray]:
    """Reverse-mode gradients of a scalar ``root``.

    Returns a map from leaf id to gradient for every trainable leaf reachable
    from ``root`` plus any extra leaves in ``wrt`` (zeros when unreachable).
    Each node's ``grad`` attribute is also set.
    """
    rules = rules or RULES
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}", root)
    order = topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.is_leaf or node.grad is None or not node.requires_grad:
            continue
        values = [x.value for x in node.inputs]
        grads = rules[node.op].vjp(node.grad, values, node.value, node.attrs)
        for x, g in zip(node.inputs, grads):
            if not x.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(x.value.shape)
            x.grad = g if x.grad is None else x.grad + g
    out: Dict[int, np.ndarray] = {}
    for node in order:
        if node.op == "leaf":
            out[node.id] = node.grad if node.grad is not None else np.zeros_like(node.value)
    for node in wrt:
        if node.id not in out:
            out[node.id] = np.zeros_like(node.value)
    return out


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, np.ndarray],
              grads: Mapping[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new params and a new state; inputs are untouched."""
    if set(params) != set(grads):
        raise ValueError(f"params and grads name different tensors: {sorted(set(params) ^ set(grads))}")
    step = state.step + 1
    c1 = 1.0 - state.beta1 ** step
    c2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape:
            raise ValueError(f"moment for {name!r} has shape {m.shape}, parameter {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_params[name] = _frozen(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
        new_m[name], new_v[name] = m, v
    new_state = AdamState(state.learning_rate, state.beta1, state.beta2, state.epsilon, step, new_m, new_v)
    return new_params, new_state


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    tolerance: float
    leaf_errors: Dict[str, float]
    node_failures: List[str]

    @property
    def max_error(self) -> float:
        return max(self.leaf_errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance and not self.node_failures

    @property
    def failures(self) -> List[str]:
        bad = [f"leaf {k}: rel. error {e:.3e}" for k, e in self.leaf_errors.items() if not e < self.tolerance]
        return bad + self.node_failures


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Elementwise ``|a - b| / max(|a|, |b|, 1)``, maximised; absolute for small entries."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))


def numeric_grad(root: Node, leaf: Node, step: float = 1e-5,
                 rules: Optional[Mapping[str, Rule]] = None) -> np.ndarray:
    """Central finite differences of ``root`` with respect to ``leaf``."""
    base = np.array(leaf.value)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    try:
        for k in range(base.size):
            bumped = base.copy().reshape(-1)
            bumped[k] += step
            leaf.value = _frozen(bumped.reshape(base.shape))
            hi = float(eval_graph(root, rules))
            bumped[k] -= 2 * step
            leaf.value = _frozen(bumped.reshape(base.shape))
            lo = float(eval_graph(root, rules))
            flat[k] = (hi - lo) / (2 * step)
    finally:
        leaf.value = _frozen(base)
        eval_graph(root, rules)
    return grad


def _local_check(node: Node, rules: Mapping[str, Rule], step: float, tolerance: float,
                 rng: np.random.Generator) -> Optional[str]:
    """Check one node's vector-Jacobian rule against finite differences of its own forward."""
    values = [np.array(x.value) for x in node.inputs]
    rule = rules[node.op]
    cot = rng.standard_normal(node.value.shape)
    analytic = rule.vjp(cot, values, rule.forward(values, node.attrs), node.attrs)
    for k, (x, ga) in enumerate(zip(node.inputs, analytic)):
        if not x.requires_grad:
            continue
        ga = np.asarray(ga).reshape(values[k].shape)
        gn = np.zeros_like(values[k])
        flat = gn.reshape(-1)
        for e in range(values[k].size):
            vals = [v.copy() for v in values]
            vals[k].reshape(-1)[e] += step
            hi = float(np.sum(cot * rule.forward(vals, node.attrs)))
            vals[k].reshape(-1)[e] -= 2 * step
            lo = float(np.sum(cot * rule.forward(vals, node.attrs)))
            flat[e] = (hi - lo) / (2 * step)
        err = relative_error(ga, gn)
        if not err < tolerance:
            return f"{node.label} input {k}: rel. error {err:.3e}"
    return None


def grad_check(root: Node, tolerance: float = 1e-4, step: float = 1e-5,
               rules: Optional[Mapping[str, Rule]] = None, seed: int = 0) -> GradCheckReport:
    """Compare :func:`backward` against central differences for every trainable leaf.

    When a leaf fails, each interior node's own rule is also checked so the
    report names the offending node.
    """
    rules = rules or RULES
    eval_graph(root, rules)
    grads = backward(root, rules=rules)
    order = topo_order(root)
    errors: Dict[str, float] = {}
    for node in order:
        if node.op != "leaf":
            continue
        key = node.name or str(node.id)
        errors[key] = relative_error(grads[node.id], numeric_grad(root, node, step, rules))
    failures: List[str] = []
    if not max(errors.values(), default=0.0) < tolerance:
        rng = np.random.default_rng(seed)
        for node in order:
            if node.is_leaf or not node.requires_grad or node.op not in rules:
                continue
            msg = _local_check(node, rules, step, tolerance, rng)
            if msg:
                failures.append(msg)
    return GradCheckReport(tolerance, errors, failures)
