"""Small reverse-mode automatic differentiation engine over dense float64 arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order, which makes the record topologically sorted by construction.
``backward`` walks the record in reverse and returns a gradient for every leaf
that was registered on the tape.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "AdamState",
    "ShapeError",
    "DomainError",
    "NonFiniteError",
    "apply_primitive",
    "bce_from_logits",
    "backward",
    "adam_step",
    "glorot_uniform",
    "PRIMITIVES",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A forward pass produced NaN or Inf."""


class Tensor:
    """Dense float64 array that can participate in a computation record."""

    __slots__ = ("values", "node_id", "_tape", "name")

    def __init__(self, values, name: str | None = None):
        arr = np.asarray(values, dtype=np.float64)
        self.values = arr
        self.node_id: int | None = None
        self._tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"

    # Operator sugar; every operator routes through apply_primitive.
    def __add__(self, other):
        return apply_primitive("add", self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return apply_primitive("mul", self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return apply_primitive("neg", self)

    def __sub__(self, other):
        return apply_primitive("add", self, apply_primitive("neg", _as_tensor(other)))

    def __rsub__(self, other):
        return apply_primitive("add", _as_tensor(other), apply_primitive("neg", self))

    def __matmul__(self, other):
        return apply_primitive("matmul", self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict
    saved: tuple  # input values followed by the output value


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """The computation record. Use as a context manager to capture operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaf_values: dict[int, np.ndarray] = {}
        self._next_id = 0

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def owns(self, t: Tensor) -> bool:
        return t._tape is self and t.node_id is not None

    def watch(self, *tensors: Tensor) -> None:
        """Register tensors as leaves so they get a (possibly zero) gradient."""
        for t in tensors:
            if not self.owns(t):
                t._tape = self
                t.node_id = self._new_id()
                self.leaf_values[t.node_id] = t.values

    def gradient(self, output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        self.watch(*wrt)
        ids = [t.node_id for t in wrt]
        grads = backward(self, output, ids)
        return [grads[i] for i in ids]

    def replay(self, leaves: dict[int, np.ndarray] | None = None) -> dict[int, np.ndarray]:
        """Re-run the recorded forward pass; returns node_id -> value."""
        values = dict(self.leaf_values)
        if leaves:
            values.update(leaves)
        for node in self.nodes:
            fwd = PRIMITIVES[node.kind][0]
            values[node.output] = fwd(*(values[i] for i in node.inputs), **node.attrs)
        return values


# ----------------------------------------------------------------------------
# primitive table: kind -> (forward(*arrays, **attrs), backward(g, saved, attrs))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _fwd_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    return a @ b


def _bwd_matmul(g, saved, attrs):
    a, b, _ = saved
    return g @ b.T, a.T @ g


def _fwd_add(a, b):
    try:
        return a + b
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _bwd_add(g, saved, attrs):
    a, b, _ = saved
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _fwd_mul(a, b):
    try:
        return a * b
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _bwd_mul(g, saved, attrs):
    a, b, _ = saved
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fwd_relu(x):
    return np.maximum(x, 0.0)


def _bwd_relu(g, saved, attrs):
    x, _ = saved
    return (g * (x > 0),)


def _fwd_leaky(x, slope=0.2):
    if 0.0 <= slope <= 1.0:
        return np.maximum(x, slope * x)
    return np.where(x > 0, x, slope * x)


def _bwd_leaky(g, saved, attrs):
    x, _ = saved
    return (np.where(x > 0, g, attrs.get("slope", 0.2) * g),)


def _bwd_sigmoid(g, saved, attrs):
    _, y = saved
    return (g * y * (1.0 - y),)


def _bwd_tanh(g, saved, attrs):
    _, y = saved
    return (g * (1.0 - y * y),)


def _fwd_log(x):
    if np.any(x <= 0):
        raise DomainError("log of a non-positive value")
    return np.log(x)


def _bwd_log(g, saved, attrs):
    x, _ = saved
    return (g / x,)


def _bwd_exp(g, saved, attrs):
    _, y = saved
    return (g * y,)


def _fwd_sum(x, axis=None):
    return np.sum(x, axis=axis)


def _bwd_sum(g, saved, attrs):
    x, _ = saved
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _fwd_mean(x, axis=None):
    return np.mean(x, axis=axis)


def _bwd_mean(g, saved, attrs):
    x, y = saved
    (gx,) = _bwd_sum(g, saved, attrs)
    return (gx * (y.size / x.size),)


def _fwd_reshape(x, shape):
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape)


def _bwd_reshape(g, saved, attrs):
    x, _ = saved
    return (g.reshape(x.shape),)


def _fwd_concat(*xs, axis=0):
    try:
        return np.concatenate(xs, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _bwd_concat(g, saved, attrs):
    xs = saved[:-1]
    axis = attrs.get("axis", 0)
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _fwd_bce(logits, target=1.0):
    # -[t log s(l) + (1-t) log(1-s(l))] == softplus((1-2t) l) for t in {0, 1};
    # written this way there is no cancellation for large |l|
    return np.mean(_softplus((1.0 - 2.0 * target) * logits))


def _bwd_bce(g, saved, attrs):
    logits, _ = saved
    sign = 1.0 - 2.0 * attrs.get("target", 1.0)
    # sign * s(sign * l) == s(l) - t
    return (g * sign * expit(sign * logits) / logits.size,)


PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_fwd_matmul, _bwd_matmul),
    "add": (_fwd_add, _bwd_add),
    "mul": (_fwd_mul, _bwd_mul),
    "neg": (np.negative, lambda g, s, a: (-g,)),
    "relu": (_fwd_relu, _bwd_relu),
    "leaky_relu": (_fwd_leaky, _bwd_leaky),
    "sigmoid": (expit, _bwd_sigmoid),
    "tanh": (np.tanh, _bwd_tanh),
    "log": (_fwd_log, _bwd_log),
    "exp": (np.exp, _bwd_exp),
    "mean": (_fwd_mean, _bwd_mean),
    "sum": (_fwd_sum, _bwd_sum),
    "reshape": (_fwd_reshape, _bwd_reshape),
    "concat": (_fwd_concat, _bwd_concat),
    "bce_logits": (_fwd_bce, _bwd_bce),
}


def apply_primitive(kind: str, *inputs: Tensor, **attrs) -> Tensor:
    """Evaluate one primitive and record it on the active tape, if any."""
    try:
        fwd = PRIMITIVES[kind][0]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    arrays = [t.values for t in inputs]
    out = np.asarray(fwd(*arrays, **attrs), dtype=np.float64)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{kind} produced a non-finite value")
    result = Tensor(out)
    tape = _active_tape()
    if tape is not None:
        tape.watch(*inputs)
        result._tape = tape
        result.node_id = tape._new_id()
        tape.nodes.append(
            Node(kind, tuple(t.node_id for t in inputs), result.node_id, attrs, (*arrays, out))
        )
    return result


# thin functional wrappers
def matmul(a, b):
    return apply_primitive("matmul", a, b)


def add(a, b):
    return apply_primitive("add", a, b)


def mul(a, b):
    return apply_primitive("mul", a, b)


def neg(x):
    return apply_primitive("neg", x)


def relu(x):
    return apply_primitive("relu", x)


def leaky_relu(x, slope: float = 0.2):
    return apply_primitive("leaky_relu", x, slope=slope)


def sigmoid(x):
    return apply_primitive("sigmoid", x)


def tanh(x):
    return apply_primitive("tanh", x)


def log(x):
    return apply_primitive("log", x)


def exp(x):
    return apply_primitive("exp", x)


def mean(x, axis=None):
    return apply_primitive("mean", x, axis=axis)


def sum_(x, axis=None):
    return apply_primitive("sum", x, axis=axis)


def reshape(x, shape):
    return apply_primitive("reshape", x, shape=tuple(shape))


def concat(xs: Sequence[Tensor], axis: int = 0):
    return apply_primitive("concat", *xs, axis=axis)


def bce_from_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a label.

    ``target`` is 0 or 1, or an array of 0/1 labels shaped like ``logits``.
    Evaluated as ``softplus((1 - 2 target) l)``, which stays finite and
    accurate for any finite logit.
    """
    if np.ndim(target) == 0:
        if target not in (0, 1):
            raise ValueError("target must be 0 or 1")
        return apply_primitive("bce_logits", logits, target=float(target))
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape or np.any((target != 0) & (target != 1)):
        raise ValueError("per-row targets must be 0/1 and match the logits shape")
    return apply_primitive("bce_logits", logits, target=target)


def backward(record: Tape, output: Tensor, wrt: Iterable[int] | None = None) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``output`` for the nodes on ``record``.

    Every registered leaf gets an entry; leaves the output does not depend on
    receive zeros.  Passing ``wrt`` (leaf node ids) prunes the sweep to paths
    that reach those leaves; other leaves then also read zero.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not record.owns(output):
        raise ValueError("output is not on this record")
    live: set[int] | None = None
    if wrt is not None:
        live = set(wrt)
        for node in record.nodes:
            if any(i in live for i in node.inputs):
                live.add(node.output)
    grads: dict[int, np.ndarray] = {output.node_id: np.ones_like(output.values)}
    for node in reversed(record.nodes):
        g = grads.get(node.output)
        if g is None:
            continue
        if node.kind == "matmul" and live is not None:
            input_grads = _bwd_matmul_pruned(g, node, live)
        else:
            input_grads = PRIMITIVES[node.kind][1](g, node.saved, node.attrs)
        for nid, gi in zip(node.inputs, input_grads):
            if gi is None or (live is not None and nid not in live):
                continue
            if nid in grads:
                grads[nid] = grads[nid] + gi
            else:
                grads[nid] = gi
    for nid, value in record.leaf_values.items():
        if nid not in grads:
            grads[nid] = np.zeros_like(value)
    return grads


def _bwd_matmul_pruned(g, node: Node, live: set[int]):
    a, b, _ = node.saved
    ga = g @ b.T if node.inputs[0] in live else None
    gb = a.T @ g if node.inputs[1] in live else None
    return ga, gb


# ----------------------------------------------------------------------------
# optimizer and initialization


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update. Parameters are rebound to new arrays."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.values.shape or state.m[i].shape != p.values.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.values.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.values)) for p in params)
