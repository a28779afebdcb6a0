"""Dense float64 tensors with reverse-mode differentiation.

Every operation records a node whose backward rule is written in terms of
other tensor operations, so gradients can themselves be differentiated
(``create_graph=True``). A handful of fused kernels (``conv1d``) only support
first-order gradients and raise if asked for more.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

_ids = itertools.count()
_state = threading.local()

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    prev = is_grad_enabled()
    _state.enabled = mode
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


class ShapeError(ValueError):
    pass


class Tensor:
    """An array node in the (implicit) computation graph.

    Node ids come from a global counter, so a node's parents always carry
    smaller ids and sorting by id gives a valid topological order.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)
        self.parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self.op = _op
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    # operator sugar
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def backward(self, create_graph: bool = False):
        return backward(self, create_graph=create_graph)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward_fn, _op=op)
    return Tensor(data, _op=op)


def _first_order_only(op: str):
    if is_grad_enabled():
        raise NotImplementedError(f"{op} does not support double backward")


# ---------------------------------------------------------------- broadcasting

def sum_to(x, shape: tuple[int, ...]) -> Tensor:
    """Sum a broadcast result back down to ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    return _node(data, (x,), lambda g: (broadcast_to(g, x.shape),), "sum_to")


def broadcast_to(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _node(data, (x,), lambda g: (sum_to(g, x.shape),), "broadcast_to")


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)), "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    if np.isscalar(b):
        return scale(a, b)
    if np.isscalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)), "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (scale(g, c),), "scale")


def div(a, b) -> Tensor:
    if np.isscalar(b):
        return scale(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out_data = a.data / b.data

    def bw(g):
        ga = div(g, b)
        return sum_to(ga, a.shape), sum_to(neg(mul(ga, div(a, b))), b.shape)

    return _node(out_data, (a, b), bw, "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.exp(a.data), (a,), lambda g: (mul(g, out),), "exp")
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (mul(g, scale(a, 2.0)),), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.sqrt(a.data), (a,), lambda g: (div(scale(g, 0.5), out),), "sqrt")
    return out


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _node(a.data ** p, (a,), lambda g: (mul(g, scale(power(a, p - 1.0), p)),), f"pow{p:g}")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _node(data, (a,), lambda g: (mul(g, mul(out, sub(1.0, out))),), "sigmoid")
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    a = as_tensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node(data, (a,), lambda g: (mul(g, sigmoid(a)),), "softplus")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _node(a.data * mask, (a,), lambda g: (mul(g, mask),), "relu")


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    return _node(a.data * ndtr(a.data), (a,), lambda g: (mul(g, _gelu_prime(a)),), "gelu")


def _gelu_prime(a: Tensor) -> Tensor:
    x = a.data
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    data = ndtr(x) + x * pdf
    # third derivatives are never requested; the second one enters as a constant
    return _node(data, (a,), lambda g: (mul(g, pdf * (2.0 - x * x)),), "gelu_prime")


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _node(data, (a,), lambda g: (reshape(g, a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _node(data, tensors, bw, "concat")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    return _node(a.data[index], (a,), lambda g: (_scatter(g, index, a.shape),), "getitem")


def _scatter(g: Tensor, index, shape) -> Tensor:
    data = np.zeros(shape)
    np.add.at(data, index, g.data)
    return _node(data, (g,), lambda gg: (getitem(gg, index),), "scatter")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_back(g: Tensor, shape, axes, keepdims) -> Tensor:
    if not keepdims:
        kept = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kept)
    return broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _node(data, (a,), lambda g: (_expand_back(g, a.shape, axes, keepdims),), "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    data = a.data.mean(axis=axes, keepdims=keepdims)
    return _node(data, (a,), lambda g: (scale(_expand_back(g, a.shape, axes, keepdims), 1.0 / n),), "mean")


def norm(a, axis=-1, keepdims=False) -> Tensor:
    """Euclidean norm along ``axis``. The gradient at a zero vector is taken as 0."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    data = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))
    zero = (data == 0).astype(np.float64)
    out_data = data if keepdims else data.reshape([s for i, s in enumerate(a.shape) if i not in axes])

    def bw(g):
        gk = g if keepdims else reshape(g, data.shape)
        safe = add(out_k, zero)  # zero rows of a make the quotient 0
        return (mul(broadcast_to(div(gk, safe), a.shape), a),)

    out = _node(out_data, (a,), bw, "norm")
    out_k = out if keepdims else reshape(out, data.shape)
    return out


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        return sum_to(matmul(g, swapaxes(b, -1, -2)), a.shape), sum_to(matmul(swapaxes(a, -1, -2), g), b.shape)

    return _node(data, (a, b), bw, "matmul")


# ---------------------------------------------------------------- normalisers

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = sum_(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out = _node(data, (a,), bw, "softmax")
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (sub(g, mul(exp(out), sum_(g, axis=axis, keepdims=True))),)

    out = _node(data, (a,), bw, "log_softmax")
    return out


def layernorm(a, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean, unit variance (no affine part)."""
    a = as_tensor(a)
    centered = sub(a, mean(a, axis=-1, keepdims=True))
    var = mean(square(centered), axis=-1, keepdims=True)
    return mul(centered, power(add(var, eps), -0.5))


# ---------------------------------------------------------------- convolution

def conv1d(x, w, b=None) -> Tensor:
    """'same'-padded 1-D convolution. x: [B, C, T], w: [F, C, K], b: [F]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    bsz, c, t = x.shape
    f, _, k = w.shape
    left = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, k - 1 - left)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B, C, T, K]
    cols = win.transpose(0, 2, 1, 3).reshape(bsz * t, c * k)
    wmat = w.data.reshape(f, c * k)
    data = (cols @ wmat.T).reshape(bsz, t, f)
    if b is not None:
        data = data + as_tensor(b).data
    data = data.transpose(0, 2, 1)

    def bw(g):
        _first_order_only("conv1d")
        g2 = g.data.transpose(0, 2, 1).reshape(bsz * t, f)
        gw = (g2.T @ cols).reshape(f, c, k)
        gcols = (g2 @ wmat).reshape(bsz, t, c, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + t] += gcols[..., j].transpose(0, 2, 1)
        grads = [Tensor(gxp[:, :, left:left + t]), Tensor(gw)]
        if b is not None:
            grads.append(Tensor(g2.sum(axis=0)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, as_tensor(b))
    return _node(np.ascontiguousarray(data), parents, bw, "conv1d")


# ---------------------------------------------------------------- backward pass

def _topo(root: Tensor) -> list[Tensor]:
    seen = {root.id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                seen[p.id] = p
                stack.append(p)
    return [seen[i] for i in sorted(seen, reverse=True)]


def _run(loss: Tensor, create_graph: bool, targets: Iterable[Tensor] | None = None) -> dict[int, Tensor]:
    if not isinstance(loss, Tensor):
        raise TypeError("backward: loss must be a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not part of a graph (no input requires grad)")
    order = _topo(loss)
    if targets is None:
        needed = None
    else:
        # only nodes lying on a path from a target to the loss
        needed = {t.id for t in targets}
        for node in reversed(order):
            if any(p.id in needed for p in node.parents):
                needed.add(node.id)
    grads: dict[int, Tensor] = {loss.id: Tensor(np.ones_like(loss.data))}
    leaves: dict[int, Tensor] = {}
    with set_grad_enabled(create_graph):
        for node in order:
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.is_leaf:
                leaves[node.id] = g
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if needed is not None and parent.id not in needed:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else add(prev, pg)
    return leaves


def backward(loss: Tensor, create_graph: bool = False) -> dict[int, Tensor]:
    """Gradients of a scalar ``loss`` for every requires-grad leaf, keyed by node id.

    Leaf ``.grad`` arrays are accumulated as a side effect.
    """
    leaves = _run(loss, create_graph)
    for node in _topo(loss):
        if node.is_leaf and node.id in leaves:
            g = leaves[node.id].data
            node.grad = g.copy() if node.grad is None else node.grad + g
    return leaves


def grad(loss: Tensor, inputs: Iterable[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``loss`` with respect to ``inputs`` (zeros where unreachable)."""
    inputs = list(inputs)
    leaves = _run(loss, create_graph, inputs)
    out = []
    for x in inputs:
        if not x.is_leaf:
            raise ValueError("grad: inputs must be leaf tensors")
        out.append(leaves.get(x.id, Tensor(np.zeros_like(x.data))))
    return out


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5, coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between the analytic gradient of scalar ``f`` at ``x``
    and a central difference, |analytic - numeric| / max(1, |analytic|).

    ``coords`` restricts the check to a random subset of coordinates.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    (g,) = grad(f(xt), [xt])
    analytic = g.data.reshape(-1)
    flat = x0.reshape(-1)
    idx = np.arange(flat.size)
    if coords is not None and coords < flat.size:
        idx = (rng or np.random.default_rng(0)).choice(flat.size, coords, replace=False)
    worst = 0.0
    with no_grad():
        for i in idx:
            xp = flat.copy()
            xp[i] += eps
            xm = flat.copy()
            xm[i] -= eps
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(analytic[i] - num) / max(1.0, abs(analytic[i])))
    return worst


def forward_op(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Dispatch an operation by name, e.g. ``forward_op("matmul", [a, b])``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


OPS: dict[str, Callable[..., Tensor]] = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "scale": scale,
    "matmul": matmul, "transpose": transpose, "reshape": reshape,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "sum": sum_, "mean": mean, "softmax": softmax, "log_softmax": log_softmax,
    "layernorm": layernorm, "gelu": gelu, "sigmoid": sigmoid, "softplus": softplus,
    "relu": relu, "log": log, "exp": exp, "square": square, "sqrt": sqrt, "pow": power,
    "norm": norm, "conv1d": conv1d, "getitem": getitem, "broadcast_to": broadcast_to,
}


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Like :func:`grad_check`, but perturbs parameter arrays in place.

    ``loss_fn`` takes no arguments and must rebuild the graph on each call.
    """
    rng = rng or np.random.default_rng(0)
    analytic = grad(loss_fn(), params)
    worst = 0.0
    with no_grad():
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                idx = rng.choice(flat.size, coords, replace=False)
            ga = g.data.reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_fn().item()
                flat[i] = orig - eps
                fm = loss_fn().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                worst = max(worst, abs(ga[i] - num) / max(1.0, abs(ga[i])))
    return worst
