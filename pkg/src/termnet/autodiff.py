"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Supports exactly the operator set needed to train the graph-pooled LSTM
forecaster: batched matmul, elementwise ops, reductions, and the usual
activations. Gradients are accumulated by walking the implicit tape
(topologically sorted graph of Tensor nodes) backwards.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# When True, every forward op asserts its output is finite.
DEBUG_CHECK_FINITE = False

# Guard inside the sd square root; prevents NaN gradients on constant input.
SD_EPS = 1e-12


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=""):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name
        if DEBUG_CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {name!r}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}, name={self.name!r})"

    # -- graph construction helpers -------------------------------------

    def _accum(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Backpropagate from this scalar tensor to all reachable leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name="") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# -- binary ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd, name="add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd, name="sub")


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd, name="mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd, name="div")


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def bwd(g):
        if a.requires_grad:
            a._accum(g * c)

    return Tensor(out_data, parents=(a,), backward=bwd, name="scalar_mul")


def matmul(a, b) -> Tensor:
    """Matrix product; supports stacked (batched) operands per numpy rules.

    A 2-D operand against a 3-D one acts as a shared matrix across the
    leading axis; its gradient sums over that axis.
    """
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd, name="matmul")


def graph_mix(a_hat: np.ndarray, h: Tensor) -> Tensor:
    """Mix node representations with a constant N x N matrix.

    h has shape (N, ...); output[v] = sum_u a_hat[v, u] * h[u].
    """
    h = as_tensor(h)
    a_hat = _as_array(a_hat)
    out_data = np.tensordot(a_hat, h.data, axes=1)

    def bwd(g):
        if h.requires_grad:
            h._accum(np.tensordot(a_hat.T, g, axes=1))

    return Tensor(out_data, parents=(h,), backward=bwd, name="graph_mix")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accum(p)

    return Tensor(out_data, parents=tuple(tensors), backward=bwd, name="concat")


def tslice(a, key) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[key]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a._accum(full)

    return Tensor(out_data, parents=(a,), backward=bwd, name="slice")


# -- elementwise --------------------------------------------------------


def _elementwise(a, fwd, dfunc, name):
    a = as_tensor(a)
    out_data = fwd(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * dfunc(a.data, out_data))

    return Tensor(out_data, parents=(a,), backward=bwd, name=name)


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _elementwise(a, fwd, lambda x, y: y * (1.0 - y), "sigmoid")


def tanh(a) -> Tensor:
    return _elementwise(a, np.tanh, lambda x, y: 1.0 - y * y, "tanh")


def relu(a) -> Tensor:
    return _elementwise(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64), "relu")


def exp(a) -> Tensor:
    return _elementwise(a, np.exp, lambda x, y: y, "exp")


def log(a) -> Tensor:
    return _elementwise(a, np.log, lambda x, y: 1.0 / x, "log")


def absolute(a) -> Tensor:
    # subgradient 0 at exactly zero
    return _elementwise(a, np.abs, lambda x, y: np.sign(x), "abs")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through inside [lo, hi], zero outside."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a._accum(g * inside)

    return Tensor(out_data, parents=(a,), backward=bwd, name="clip")


# -- reductions ---------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accum(np.broadcast_to(g, a.shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                a._accum(np.broadcast_to(g, a.shape).copy())

    return Tensor(out_data, parents=(a,), backward=bwd, name="sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def sd(a) -> Tensor:
    """Population standard deviation of all entries (scalar output)."""
    a = as_tensor(a)
    m = a.data.mean()
    centered = a.data - m
    var = (centered * centered).mean()
    s = np.sqrt(var + SD_EPS)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * centered / (a.data.size * s))

    return Tensor(s, parents=(a,), backward=bwd, name="sd")


# -- optimizer ----------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam; paper training defaults."""

    step_size: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Tensor]) -> None:
    """Apply one Adam update in place using each parameter's .grad."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if i not in state.m:
            state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1 ** state.t)
        v_hat = state.v[i] / (1.0 - b2 ** state.t)
        p.data -= state.step_size * m_hat / (np.sqrt(v_hat) + state.eps)


def l1_penalty(weights: list[Tensor], lam: float = 1e-5) -> Tensor:
    """lam * sum |w| over the given weight tensors (biases excluded by caller)."""
    total = None
    for w in weights:
        term = tsum(absolute(w))
        total = term if total is None else add(total, term)
    if total is None:
        return Tensor(0.0)
    return scalar_mul(total, lam)


# -- checkpoint format --------------------------------------------------

CHECKPOINT_VERSION = 1


def save_params(params: dict[str, Tensor], path) -> None:
    payload = {
        "format": "termnet-params",
        "version": CHECKPOINT_VERSION,
        "tensors": {
            name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
            for name, p in sorted(params.items())
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_params(path) -> dict[str, Tensor]:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("format") != "termnet-params":
        raise ValueError("not a termnet parameter checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    out = {}
    for name, rec in payload["tensors"].items():
        out[name] = parameter(np.array(rec["data"], dtype=np.float64).reshape(rec["shape"]), name=name)
    return out
