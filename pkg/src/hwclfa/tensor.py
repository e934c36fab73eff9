"""Dense float64 tensors with reverse-mode gradients over a fixed op set.

Every op returns a new :class:`Tensor`. When none of its inputs requires a
gradient the result carries no graph, so inference pays only for the numpy
work.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import EvenKernel, NonScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return (
            g @ B.T if a.requires_grad else None,
            A.T @ g if b.requires_grad else None,
        )

    return _node(A @ B, (a, b), backward)


def add(a, b):
    """Elementwise sum; ``b`` may also be a row vector broadcast over rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]):
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    broadcast = a.shape != b.shape

    def backward(g):
        gb = None
        if b.requires_grad:
            gb = g.sum(axis=0) if broadcast else g
        return g, gb

    return _node(a.data + b.data, (a, b), backward)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def transpose(a):
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,))


def getitem(a, key):
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        out[key] += g
        return (out,)

    return _node(a.data[key], (a,), backward)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), backward)


def sum_all(a):
    a = as_tensor(a)
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),))


def mean_all(a):
    a = as_tensor(a)
    n = a.data.size
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full_like(a.data, g / n),))


def mean_of(tensors):
    """Mean of equally shaped tensors (e.g. per-layer scalars)."""
    ts = [as_tensor(t) for t in tensors]
    n = len(ts)
    data = sum(t.data for t in ts) / n
    return _node(data, tuple(ts), lambda g: tuple(g / n for _ in ts))


# ---------------------------------------------------------------------------
# nonlinearities


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    # at exactly 0 the slope branch is used
    return _node(np.where(pos, x, slope * x), (a,), lambda g: (np.where(pos, g, slope * g),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Tanh approximation of GELU (smooth, used inside the frozen backbone)."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    u = _GELU_C * (x + 0.044715 * x2 * x)
    th = np.tanh(u)
    out = 0.5 * x * (1 + th)

    def backward(g):
        du = _GELU_C * (1 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1 + th) + 0.5 * x * (1 - th**2) * du),)

    return _node(out, (a,), backward)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (a,), backward)


def l2_normalize(a, axis=-1, eps=1e-8):
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    clamped = norm <= eps
    denom = np.where(clamped, eps, norm)
    out = x / denom

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(clamped, g / denom, (g - out * dot) / denom),)

    return _node(out, (a,), backward)


def layer_norm(a, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis; ``gamma``/``beta`` are constant arrays."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g_arr = np.ones(x.shape[-1]) if gamma is None else np.asarray(gamma)
    out = xhat * g_arr + (0.0 if beta is None else np.asarray(beta))

    def backward(g):
        gx = g * g_arr
        d = x.shape[-1]
        return (inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True)),)

    return _node(out, (a,), backward)


def attention(q, k, v, heads):
    """Multi-head scaled dot-product attention over N x C query/key/value.

    Columns are split into ``heads`` contiguous groups of width C / heads.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if not (q.shape == k.shape == v.shape) or q.shape[1] % heads:
        raise ShapeMismatch(f"attention q{q.shape} k{k.shape} v{v.shape} heads={heads}")
    n, c = q.shape
    d = c // heads
    r = d**-0.5

    def split(a):
        return a.reshape(n, heads, d).transpose(1, 0, 2)

    Q, K, V = split(q.data), split(k.data), split(v.data)
    S = (Q @ K.transpose(0, 2, 1)) * r
    S -= S.max(axis=-1, keepdims=True)
    P = np.exp(S)
    P /= P.sum(axis=-1, keepdims=True)
    out = (P @ V).transpose(1, 0, 2).reshape(n, c)

    def backward(g):
        G = split(g)
        dP = G @ V.transpose(0, 2, 1)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * r
        merge = lambda a: a.transpose(1, 0, 2).reshape(n, c)
        return (
            merge(dS @ K) if q.requires_grad else None,
            merge(dS.transpose(0, 2, 1) @ Q) if k.requires_grad else None,
            merge(P.transpose(0, 2, 1) @ G) if v.requires_grad else None,
        )

    return _node(out, (q, k, v), backward)


def dwconv1d(x, kernels_):
    """Depthwise 'same' convolution along axis 0 (tokens) of an N x T input.

    Channel c of the output is the zero-padded cross-correlation of column c
    of ``x`` with row c of ``kernels_`` (T x k, k odd).
    """
    x, w = as_tensor(x), as_tensor(kernels_)
    if x.data.ndim != 2 or w.data.ndim != 2 or w.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"dwconv1d input {x.shape}, kernels {w.shape}")
    if w.shape[1] % 2 == 0:
        raise EvenKernel(f"kernel size must be odd, got {w.shape[1]}")
    X, W = x.data, w.data

    def backward(g):
        dx, dw = kernels.dwconv1d_backward(X, W, g)
        return (dx if x.requires_grad else None, dw if w.requires_grad else None)

    return _node(kernels.dwconv1d_forward(X, W), (x, w), backward)


def bce(p, y, eps=1e-7):
    """Binary cross-entropy of a probability against a 0/1 label.

    The probability is clamped to [eps, 1 - eps]; the gradient is zero
    outside that interval.
    """
    p = as_tensor(p)
    y = float(y)
    raw = p.data
    ph = np.clip(raw, eps, 1 - eps)
    loss = -(y * np.log(ph) + (1 - y) * np.log(1 - ph))
    inside = (raw >= eps) & (raw <= 1 - eps)

    def backward(g):
        d = -(y / ph) + (1 - y) / (1 - ph)
        return (np.where(inside, g * d, 0.0),)

    return _node(loss, (p,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Accumulate d(loss)/d(tensor) for every tensor in the graph.

    Leaf tensors that require a gradient get ``.grad`` set. Returns a list
    of gradients aligned with ``params`` when given (zeros for parameters
    the loss does not depend on), else None.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(fn, arrays, step=1e-5):
    """Central differences of scalar ``fn(arrays)`` w.r.t. every coordinate."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(arrays)
            flat[i] = orig - step
            fm = fn(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def grad_check(fn, point, step=1e-5, floor=1e-6):
    """Max relative error between backward() and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor; ``point`` is a list of
    arrays (perturbed in place and restored).
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    params = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    analytic = backward(fn(params), params)
    numeric = numeric_gradient(lambda arrs: float(fn([Tensor(a) for a in arrs]).data), arrays, step)
    return max(float(relative_error(a, n, floor).max()) for a, n in zip(analytic, numeric))
