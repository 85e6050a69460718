"""Reverse-mode autodiff on dense float64 arrays, with a first-class stop-gradient.

The tape is define-by-run: every operation returns a fresh `Value` holding the
result, its parents, and a VJP closure. `backward` walks the graph once in
topological order and accumulates adjoints into `.grad`. Graphs are meant to be
built, differentiated, and discarded within a single training step.
"""

from __future__ import annotations

import zlib

import numpy as np

_backward_calls = 0


def backward_calls() -> int:
    """Total number of backward passes run in this process."""
    return _backward_calls


class ShapeError(ValueError):
    def __init__(self, op, shape_a, shape_b):
        super().__init__(f"{op}: incompatible shapes {shape_a} and {shape_b}")
        self.op = op
        self.shapes = (shape_a, shape_b)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Value:
    """One node of the tape: float64 data, a same-shape grad accumulator,
    parent links, and an optional stop-gradient marker."""

    __slots__ = ("data", "grad", "op", "parents", "sg_flag", "_vjp")

    # make `ndarray <op> Value` defer to our reflected operators instead of
    # producing an object array
    __array_ufunc__ = None

    def __init__(self, data, parents=(), op="leaf", vjp=None):
        self.data = _as_array(data)
        self.grad = np.zeros_like(self.data)
        self.parents = tuple(parents)
        self.op = op
        self.sg_flag = False
        self._vjp = vjp

    def __repr__(self):
        return f"Value(op={self.op!r}, shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    # -- elementwise arithmetic (numpy broadcasting rules) --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(wrap(other), -1.0))

    def __rsub__(self, other):
        return add(wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(wrap(other), self)

    def __pow__(self, exponent):
        return powi(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self):
        return vsum(self)

    def mean(self):
        return vmean(self)


def wrap(x) -> Value:
    """Lift a constant (array or number) into a leaf Value."""
    return x if isinstance(x, Value) else Value(x, op="const")


def _binary_data(op, a, b, fn):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(op, a.data.shape, b.data.shape) from None


def add(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out = _binary_data("add", a, b, np.add)
    sa, sb = a.data.shape, b.data.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Value(out, (a, b), "add", vjp)


def mul(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out = _binary_data("mul", a, b, np.multiply)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Value(out, (a, b), "mul", vjp)


def div(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out = _binary_data("div", a, b, np.divide)
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return Value(out, (a, b), "div", vjp)


def scale(a, s: float) -> Value:
    """Multiply by a python scalar (no tape node for the scalar)."""
    a = wrap(a)
    s = float(s)

    def vjp(g):
        return (g * s,)

    return Value(a.data * s, (a,), "scale", vjp)


def powi(a, exponent: float) -> Value:
    a = wrap(a)
    e = float(exponent)
    ad = a.data

    def vjp(g):
        return (g * e * ad ** (e - 1.0),)

    return Value(ad**e, (a,), "pow", vjp)


def tanh(a) -> Value:
    a = wrap(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Value(out, (a,), "tanh", vjp)


def exp(a) -> Value:
    a = wrap(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Value(out, (a,), "exp", vjp)


def log(a) -> Value:
    a = wrap(a)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return Value(np.log(ad), (a,), "log", vjp)


def matmul(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise ShapeError("matmul", ad.shape, bd.shape)
    try:
        out = ad @ bd
    except ValueError:
        raise ShapeError("matmul", ad.shape, bd.shape) from None

    def vjp(g):
        if ad.ndim == 1 and bd.ndim == 1:  # dot -> scalar
            return g * bd, g * ad
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:  # (n,k)@(k,) -> (n,)
            return np.outer(g, bd), ad.T @ g
        # (k,)@(k,m) -> (m,)
        return bd @ g, np.outer(ad, g)

    return Value(out, (a, b), "matmul", vjp)


def vsum(a) -> Value:
    a = wrap(a)
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return Value(a.data.sum(), (a,), "sum", vjp)


def vmean(a) -> Value:
    a = wrap(a)
    shape = a.data.shape
    n = a.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, shape).astype(np.float64),)

    return Value(a.data.mean(), (a,), "mean", vjp)


def sqnorm(a) -> Value:
    """Sum of squares over all elements."""
    a = wrap(a)
    ad = a.data

    def vjp(g):
        return (g * 2.0 * ad,)

    return Value((ad * ad).sum(), (a,), "sqnorm", vjp)


def concat(values, axis=0) -> Value:
    values = [wrap(v) for v in values]
    datas = [v.data for v in values]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError("concat", datas[0].shape, datas[-1].shape) from None
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Value(out, tuple(values), "concat", vjp)


def getitem(a, key) -> Value:
    a = wrap(a)
    shape = a.data.shape

    def vjp(g):
        z = np.zeros(shape)
        z[key] = g
        return (z,)

    return Value(a.data[key], (a,), "slice", vjp)


def stop_gradient(v) -> Value:
    """Identity in the forward pass; blocks all gradient flow to ancestors."""
    v = wrap(v)
    out = Value(v.data, (v,), "stop_gradient", None)
    out.sg_flag = True
    return out


def _toposort(root: Value):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if not node.sg_flag:
            for p in reversed(node.parents):
                if id(p) not in visited:
                    stack.append((p, False))
    return order


def _run_backward(root: Value, seed: np.ndarray):
    global _backward_calls
    _backward_calls += 1
    order = _toposort(root)
    adjoint = {id(root): seed}
    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None:
            continue
        node.grad = node.grad + g
        if node.sg_flag or node._vjp is None:
            continue
        for parent, contrib in zip(node.parents, node._vjp(g)):
            if contrib is None:
                continue
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if prev is None else prev + contrib


def backward(root: Value):
    """Accumulate d(root)/d(node) into .grad for every node reachable from a
    scalar root. Calling twice without zeroing doubles the grads."""
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    _run_backward(root, np.ones_like(root.data))


def backward_seeded(value: Value, seed):
    """Backward pass from an arbitrary node with an explicit output adjoint.

    Used to inject hand-computed gradients (score differences) into the tape.
    """
    seed = _as_array(seed)
    if seed.shape != value.data.shape:
        raise ShapeError("backward_seeded", seed.shape, value.data.shape)
    _run_backward(value, seed)


def zero_grads(params):
    for p in params:
        p.grad = np.zeros_like(p.data)


class Mlp:
    """Fully-connected net: tanh on hidden layers, identity on the output."""

    def __init__(self, widths, rng: np.random.Generator):
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        self.widths = [int(w) for w in widths]
        self.layers = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = Value(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), op="param")
            b = Value(np.zeros(fan_out), op="param")
            self.layers.append((w, b))

    def params(self) -> list:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params())

    def __call__(self, x) -> Value:
        h = wrap(x)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = matmul(h, w) + b
            if i < last:
                h = tanh(h)
        return h

    def copy_from(self, other: "Mlp"):
        if self.widths != other.widths:
            raise ShapeError("copy_from", tuple(self.widths), tuple(other.widths))
        for (w, b), (ow, ob) in zip(self.layers, other.layers):
            w.data = ow.data.copy()
            b.data = ob.data.copy()


class Adam:
    """Adam with decoupled weight decay (plain Adam at weight_decay=0).

    Defaults beta1=0, beta2=0.999; with beta1=0 the update direction is
    g / (sqrt(v_hat) + eps).
    """

    def __init__(self, params, lr, beta1=0.0, beta2=0.999, eps=1e-8, weight_decay=0.0):
        if lr <= 0 or eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {i}")
            if self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            # rebind rather than mutate: live tapes keep their forward-time arrays
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)


def finite_diff_grad(loss_fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    point = _as_array(point)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = loss_fn(point)
        flat[i] = orig - h
        lo = loss_fn(point)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def get_param_vector(params) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for p in params])


def set_param_vector(params, vec: np.ndarray):
    vec = _as_array(vec)
    idx = 0
    for p in params:
        n = p.data.size
        p.data = vec[idx : idx + n].reshape(p.data.shape).copy()
        idx += n
    if idx != vec.size:
        raise ValueError(f"vector has {vec.size} entries, parameters need {idx}")


def grad_vector(params) -> np.ndarray:
    return np.concatenate([p.grad.reshape(-1) for p in params])


def rng_stream(seed: int, *path) -> np.random.Generator:
    """Independent counter-based RNG stream addressed by (seed, *path).

    Path elements may be ints or strings; the same address always yields the
    same stream, so every stochastic call site can be made reproducible.
    """
    key = [int(seed) & 0xFFFFFFFF]
    for item in path:
        if isinstance(item, (int, np.integer)):
            key.append(int(item) & 0xFFFFFFFF)
        else:
            key.append(zlib.crc32(str(item).encode()))
    ss = np.random.SeedSequence(entropy=key)
    return np.random.Generator(np.random.Philox(ss))
