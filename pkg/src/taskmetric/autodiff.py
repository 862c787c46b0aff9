"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A ``Node`` wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar output walks the graph in reverse topological
order and accumulates gradients into the leaf nodes. Graphs are built
per evaluation, so independent evaluations never share state.

Most helpers (``exp``, ``vsum``, ...) dispatch on their argument type and
fall back to plain numpy when given an ndarray, which lets downstream
code be written once for both the differentiable and the inference path.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class NumericalError(RuntimeError):
    """Raised when an evaluation produces a non-finite value."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    # make ndarray <op> Node dispatch to the reflected Node methods
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # ---- graph traversal ----

    def backward(self) -> None:
        if self.value.ndim != 0:
            raise ValueError("backward() requires a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for n in order:
            n.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None or node._vjp is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # ---- arithmetic ----

    def __add__(self, other):
        o = as_node(other)
        return Node(self.value + o.value, (self, o),
                    lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, o.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Node(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        o = as_node(other)
        return Node(self.value - o.value, (self, o),
                    lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, o.shape)))

    def __rsub__(self, other):
        return as_node(other).__sub__(self)

    def __mul__(self, other):
        o = as_node(other)
        return Node(self.value * o.value, (self, o),
                    lambda g: (_unbroadcast(g * o.value, self.shape),
                               _unbroadcast(g * self.value, o.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = as_node(other)
        return Node(self.value / o.value, (self, o),
                    lambda g: (_unbroadcast(g / o.value, self.shape),
                               _unbroadcast(-g * self.value / o.value ** 2, o.shape)))

    def __rtruediv__(self, other):
        return as_node(other).__truediv__(self)

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        val = self.value ** exponent
        return Node(val, (self,),
                    lambda g: (g * exponent * self.value ** (exponent - 1),))

    def __matmul__(self, other):
        o = as_node(other)
        a, b = self.value, o.value

        def vjp(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if a.ndim == 1:
                return g @ b.swapaxes(-1, -2), np.outer(a, g)
            if b.ndim == 1:
                return np.einsum("...i,j->...ij", g, b), _unbroadcast(
                    np.einsum("...ij,...i->j", a, g), b.shape)
            ga = g @ b.swapaxes(-1, -2)
            gb = a.swapaxes(-1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Node(a @ b, (self, o), vjp)

    def __rmatmul__(self, other):
        return as_node(other).__matmul__(self)

    def __getitem__(self, key):
        val = self.value[key]

        def vjp(g):
            out = np.zeros_like(self.value)
            out[key] = g
            return (out,)

        return Node(val, (self,), vjp)

    # ---- shape ----

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Node(self.value.reshape(shape), (self,),
                    lambda g: (g.reshape(old),))

    def transpose(self, axes=None):
        if axes is None:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Node(self.value.transpose(axes), (self,),
                    lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)

    def item(self):
        return float(self.value)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def is_node(x) -> bool:
    return isinstance(x, Node)


def constant(x) -> Node:
    """A graph leaf that never receives a gradient."""
    return Node(x)


# ---- dispatching elementwise helpers ----

def exp(x):
    if not is_node(x):
        return np.exp(x)
    val = np.exp(x.value)
    return Node(val, (x,), lambda g: (g * val,))


def log(x):
    if not is_node(x):
        return np.log(x)
    return Node(np.log(x.value), (x,), lambda g: (g / x.value,))


def sqrt(x):
    if not is_node(x):
        return np.sqrt(x)
    val = np.sqrt(x.value)
    return Node(val, (x,), lambda g: (g / (2.0 * val),))


def sigmoid(x):
    if not is_node(x):
        return 1.0 / (1.0 + np.exp(-x))
    val = 1.0 / (1.0 + np.exp(-x.value))
    return Node(val, (x,), lambda g: (g * val * (1.0 - val),))


def swish(x):
    """swish-1 activation: x * sigmoid(x)."""
    return x * sigmoid(x)


def vsum(x, axis=None, keepdims=False):
    if not is_node(x):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return Node(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), vjp)


def vmean(x, axis=None, keepdims=False):
    if not is_node(x):
        return np.mean(x, axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.value.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.shape[a] for a in axis]))
    else:
        count = x.shape[axis]
    return vsum(x, axis=axis, keepdims=keepdims) / float(count)


def dot(a, b):
    if is_node(a) or is_node(b):
        return vsum(as_node(a) * as_node(b))
    return float(np.dot(np.ravel(a), np.ravel(b)))


def stack(nodes):
    """Stack 1-d values into a matrix (rows)."""
    if not any(is_node(n) for n in nodes):
        return np.stack(nodes)
    nodes = [as_node(n) for n in nodes]
    val = np.stack([n.value for n in nodes])
    return Node(val, tuple(nodes), lambda g: tuple(g[i] for i in range(len(nodes))))


def concat(nodes, axis=0):
    if not any(is_node(n) for n in nodes):
        return np.concatenate(nodes, axis=axis)
    nodes = [as_node(n) for n in nodes]
    val = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    return Node(val, tuple(nodes),
                lambda g: tuple(np.split(g, splits, axis=axis)))


def logsumexp(x, axis=-1):
    """log(sum(exp(x))) with max-subtraction; the max is treated as constant."""
    if not is_node(x):
        m = np.max(x, axis=axis, keepdims=True)
        return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))
    m = np.max(x.value, axis=axis, keepdims=True)
    shifted = x - m
    out = log(vsum(exp(shifted), axis=axis))
    return out + np.squeeze(m, axis)


# ---- structured ops for the convolutional extractor ----

def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, c, ho, wo, kh, kw), (s0, s1, s2, s3, s2, s3))
    # (n, ho*wo, c*kh*kw)
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)


def _conv_forward(x: np.ndarray, w: np.ndarray, pad: int):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    cols = _im2col(x, kh, kw, pad)
    out = (cols @ w.reshape(f, -1).T).transpose(0, 2, 1).reshape(n, f, ho, wo)
    return out, cols


def conv2d(x, weight, pad: int = 1):
    """Stride-1 2-d convolution; x (N,C,H,W), weight (F,C,kh,kw)."""
    if not (is_node(x) or is_node(weight)):
        return _conv_forward(x, weight, pad)[0]
    xn, wn = as_node(x), as_node(weight)
    n, c, h, w = xn.shape
    f, _, kh, kw = wn.shape
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    cols = _im2col(xn.value, kh, kw, pad)
    wmat = wn.value.reshape(f, c * kh * kw)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(n, f, ho, wo)

    def vjp(g):
        gmat = g.reshape(n, f, ho * wo).transpose(0, 2, 1)      # (n, ho*wo, f)
        gw = np.einsum("npf,npk->fk", gmat, cols).reshape(wn.shape)
        gcols = gmat @ wmat                                      # (n, ho*wo, c*kh*kw)
        gview = gcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += gview[:, :, :, :, i, j]
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw

    return Node(out, (xn, wn), vjp)


def maxpool2(x):
    """2x2 max pool with stride 2; ties resolved to the first position."""
    if not is_node(x):
        n, c, h, w = x.shape
        r = x.reshape(n, c, h // 2, 2, w // 2, 2)
        return r.max(axis=(3, 5))
    xn = as_node(x)
    n, c, h, w = xn.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2 requires even spatial dimensions")
    r = xn.value.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    r = r.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(r, axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gr = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        gx = gr.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(n, c, h, w),)

    return Node(out, (xn,), vjp)


def global_avg_pool(x):
    """(N,C,H,W) -> (N,C)."""
    return vmean(x, axis=(2, 3))


def batch_norm(x, gamma, beta, eps: float = 1e-5, stats=None):
    """Per-channel normalization over the batch and spatial axes.

    `stats` overrides the batch statistics with fixed (mean, var) arrays,
    for frozen-statistics evaluation.
    """
    axes = (0, 2, 3) if (x.ndim == 4) else (0,)
    if stats is None:
        mu = vmean(x, axis=axes, keepdims=True)
        var = vmean((x - mu) ** 2, axis=axes, keepdims=True)
    else:
        mu, var = stats
    xhat = (x - mu) / sqrt(var + eps)
    if x.ndim == 4:
        gamma = gamma.reshape(1, -1, 1, 1)
        beta = beta.reshape(1, -1, 1, 1)
    return gamma * xhat + beta
