"""A small numpy reverse-mode differentiation core.

Only the operations the embedder and the contrastive encoder need are
provided. Each op records its parents and a closure that pushes the output
gradient back to them; ``Tensor.backward`` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    # construction helpers -------------------------------------------------
    @staticmethod
    def _make(data, parents, backward, op):
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track, _parents=parents if track else (), op=op)
        if track:
            out._backward = backward
        return out

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(np.asarray(self.data).item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.data.shape)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        return Tensor._make(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor._make(self.data - other.data, (self, other), lambda g: (g, -g), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)), "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p: float):
        a = self.data
        return Tensor._make(a ** p, (self,), lambda g: (g * p * a ** (p - 1),), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # reductions / shape -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        orig = self.data.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(orig),), "reshape")

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    def swapaxes(self, a, b):
        return Tensor._make(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),), "swapaxes")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(B, -1, -2)
        gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return Tensor._make(A @ B, (a, b), back, "matmul")


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.data.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor._make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back, "sum")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.data.shape
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(x.data[idx], (x,), back, "getitem")


def concat(xs, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.data.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(np.concatenate([x.data for x in xs], axis=axis), xs, back, "concat")


def stack(xs, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(np.stack([x.data for x in xs], axis=axis), xs, back, "stack")


# elementwise nonlinearities -----------------------------------------------------

def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._make(np.log(a), (x,), lambda g: (g / a,), "log")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return Tensor._make(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    if not training or p <= 0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return x * Tensor(keep)


# softmax family -----------------------------------------------------------------

def logsumexp(x: Tensor, axis=-1, keepdims=False) -> Tensor:
    a = x.data
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a - m), axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = np.exp(a - out)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return Tensor._make(out if keepdims else np.squeeze(out, axis=axis), (x,), back, "logsumexp")


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    a = x.data
    m = np.max(a, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    out = a - lse
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), back, "log_softmax")


def softmax(x: Tensor, axis=-1) -> Tensor:
    a = x.data
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), back, "softmax")


def softmax_np(a: np.ndarray, axis=-1) -> np.ndarray:
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits`` (N, C)."""
    targets = np.asarray(targets, dtype=np.int64)
    lp = log_softmax(logits, axis=-1)
    picked = lp[np.arange(len(targets)), targets]
    return -picked.mean()


# layers with fused backward -----------------------------------------------------

def _shifts(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, L) -> (B, C, K, L) same-padded views shifted by each kernel tap."""
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, k - 1 - pad)))
    L = x.shape[2]
    return np.stack([xp[:, :, j:j + L] for j in range(k)], axis=2)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 same-padded 1-D convolution (cross-correlation).

    x: (B, C_in, L), w: (C_out, C_in, K), b: (C_out,) -> (B, C_out, L)
    """
    X, W = x.data, w.data
    k = W.shape[2]
    cols = _shifts(X, k)
    out = np.einsum("bckl,ock->bol", cols, W, optimize=True) + b.data[None, :, None]

    def back(g):
        gw = np.einsum("bol,bckl->ock", g, cols, optimize=True)
        gb = g.sum(axis=(0, 2))
        gcols = np.einsum("bol,ock->bckl", g, W, optimize=True)
        pad = k // 2
        L = X.shape[2]
        gxp = np.zeros((X.shape[0], X.shape[1], L + k - 1))
        for j in range(k):
            gxp[:, :, j:j + L] += gcols[:, :, j, :]
        return gxp[:, :, pad:pad + L], gw, gb

    return Tensor._make(out, (x, w, b), back, "conv1d")


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Single-layer LSTM over a (B, T, I) sequence; returns the last hidden state (B, H).

    Gate layout along the 4H axis is input, forget, cell, output. Initial
    hidden and cell states are zero.
    """
    X, Wi, Wh, bias = x.data, w_ih.data, w_hh.data, b.data
    B, T, _ = X.shape
    H = Wh.shape[0]
    xproj = X @ Wi + bias
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        z = xproj[:, t] + h @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        h = o * tc
        cache.append((i, f, gg, o, c_prev, h_prev, tc))

    def back(gh):
        gX_proj = np.zeros_like(xproj)
        gWh = np.zeros_like(Wh)
        dh = gh.copy()
        dc = np.zeros((B, H))
        for t in reversed(range(T)):
            i, f, gg, o, c_prev, h_prev, tc = cache[t]
            do = dh * tc
            dc = dc + dh * o * (1 - tc * tc)
            di = dc * gg
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 dg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            gX_proj[:, t] = dz
            gWh += h_prev.T @ dz
            dh = dz @ Wh.T
            dc = dc * f
        gX = gX_proj @ Wi.T
        gWi = np.einsum("bti,btg->ig", X, gX_proj, optimize=True)
        gb = gX_proj.sum(axis=(0, 1))
        return gX, gWi, gWh, gb

    return Tensor._make(h, (x, w_ih, w_hh, b), back, "lstm")


# parameters and optimisation ------------------------------------------------------

def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def glorot(rng, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)))


class Adam:
    """Adaptive-moment gradient descent over a dict of parameter tensors."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * p.grad
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * p.grad ** 2
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def numerical_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
