"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on a :class:`Tensor` that has a differentiable input records a
node holding references to its parents and a closure mapping the output
gradient to parent gradients. :func:`backward` walks those nodes in reverse
topological order, visiting each exactly once.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """An n-dimensional float64 array that can track gradients.

    ``data`` is a numpy array (row-major). ``grad`` is populated on leaves with
    ``requires_grad=True`` after :func:`backward`, and accumulates across calls
    until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op!r})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
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

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    """Create a result tensor; the node is recorded only if a parent needs grads."""
    live = tuple(parents)
    if any(p.requires_grad for p in live):
        return Tensor(data, requires_grad=True, _parents=live, _backward=fn, op=op)
    return Tensor(data, op=op)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from exc


# -- graph traversal -----------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every differentiable leaf reachable from ``loss``.

    ``loss`` must hold a single element. Gradients of a leaf used several
    times are summed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (unbroadcast(g / bd, ad.shape),
                            unbroadcast(-g * out / bd, bd.shape)), "div")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def sign(a: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0. Not differentiable; returns a constant."""
    return Tensor(np.sign(_wrap(a).data))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Saturate to [lo, hi]; the gradient is 1 strictly inside, 0 elsewhere."""
    a = _wrap(a)
    d = a.data
    mask = (d > lo) & (d < hi)
    return _make(np.clip(d, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def clamp_between(a: Tensor, lo: np.ndarray, hi: np.ndarray) -> Tensor:
    """Elementwise clamp against array bounds (used for the l-inf projection)."""
    a = _wrap(a)
    d = a.data
    mask = (d > lo) & (d < hi)
    return _make(np.minimum(np.maximum(d, lo), hi), (a,), lambda g: (g * mask,), "clamp")


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    d = a.data
    return _make(np.log(d), (a,), lambda g: (g / d,), "log")


def square(a: Tensor) -> Tensor:
    a = _wrap(a)
    d = a.data
    return _make(d * d, (a,), lambda g: (2.0 * g * d,), "square")


# -- reductions and shape ops ----------------------------------------------

def _check_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for tensor of rank {ndim}")
    return tuple(ax % ndim for ax in axes)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _check_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def fn(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _check_axis(axis, a.ndim)
    count = a.data.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return scalar_mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, fn, "stack")


def index_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick ``a[i, idx[i]]`` for a 2-D tensor."""
    a = _wrap(a)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _make(a.data[rows, idx], (a,), fn, "index_rows")


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim > 2 or b.ndim > 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), fn, "matmul")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``Wx + b``.

    ``x`` may be a single vector of length ``d`` or a batch ``(N, d)``; ``W`` is
    ``(k, d)``.
    """
    x, W = _wrap(x), _wrap(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    xd, Wd = x.data, W.data
    if xd.ndim == 1:
        out = Wd @ xd

        def fn(g):
            return Wd.T @ g, np.outer(g, xd)
    else:
        out = xd @ Wd.T

        def fn(g):
            return g @ Wd, g.T @ xd

    y = _make(out, (x, W), fn, "linear")
    if b is not None:
        b = _wrap(b)
        try:
            np.broadcast_shapes(b.shape, out.shape)
        except ValueError as exc:
            raise ShapeError(f"linear: bias shape {b.shape} not broadcastable to {out.shape}") from exc
        y = add(y, b)
    return y


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation. ``x`` is NCHW, ``kernel`` is (out, in, kh, kw)."""
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} or padding={padding}")
    ho = conv_output_size(x.shape[2], kernel.shape[2], stride, padding)
    wo = conv_output_size(x.shape[3], kernel.shape[3], stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output size non-positive for input {x.shape}, kernel {kernel.shape}")
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(kernel.data)
    out = kernels.conv2d_forward(xd, kd, stride, padding)

    def fn(g):
        gx, gk = kernels.conv2d_backward(xd, kd, np.ascontiguousarray(g), stride, padding)
        return gx, gk

    y = _make(out, (x, kernel), fn, "conv2d")
    if bias is not None:
        y = add(y, reshape(bias, (1, -1, 1, 1)))
    return y


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling on NCHW input (H, W divisible by k)."""
    x = _wrap(x)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial shape {(h, w)} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def fn(g):
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (up,)

    return _make(out, (x,), fn, "avg_pool2d")


# -- probabilistic ops --------------------------------------------------------

def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _wrap(x)
    (ax,) = _check_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def fn(g):
        return (g - soft * g.sum(axis=ax, keepdims=True),)

    return _make(out, (x,), fn, "log_softmax")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _wrap(x)
    (ax,) = _check_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _make(out, (x,), fn, "softmax")


def kl_divergence(p_log: Tensor, q) -> Tensor:
    """Batch-mean of sum_i q_i (log q_i - p_log_i); rows are samples.

    ``q`` is a probability table (the target distribution), ``p_log`` holds
    log-probabilities of the approximating distribution.
    """
    p_log, q = _wrap(p_log), _wrap(q)
    if p_log.shape != q.shape:
        raise ShapeError(f"kl_divergence shape mismatch: {p_log.shape} vs {q.shape}")
    qd, pd = q.data, p_log.data
    pos = qd > 0
    logq = np.where(pos, np.log(np.where(pos, qd, 1.0)), 0.0)
    terms = np.where(pos, qd * (logq - pd), 0.0)
    n = pd.shape[0] if pd.ndim > 1 else 1
    out = np.array(terms.sum() / n)

    def fn(g):
        gp = -g * qd / n
        gq = np.where(pos, g * (logq - pd + 1.0) / n, 0.0)
        return gp, gq

    return _make(out, (p_log, q), fn, "kl_divergence")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    lp = log_softmax(logits, axis=-1)
    return scalar_mul(mean(index_rows(lp, labels)), -1.0)


# -- batch norm -------------------------------------------------------------

def batch_norm(x: Tensor, weight: Tensor, bias: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over all axes except axis 1.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance, as in torch).
    """
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    if x.ndim < 2:
        raise ShapeError(f"batch_norm needs a channel axis, got shape {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    m = x.data.size // x.shape[1]
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs at least 2 samples")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    wd = weight.data.reshape(bshape)
    out = xhat * wd + bias.data.reshape(bshape)

    def fn(g):
        gw = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * wd
        if training:
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, gw, gb

    return _make(out, (x, weight, bias), fn, "batch_norm")


# -- spiking nonlinearity -------------------------------------------------------

def lif_fire(u: Tensor, threshold: float, tau: float, gamma: float) -> tuple[Tensor, Tensor]:
    """Heaviside spike and multiplicative reset of a membrane potential.

    Returns ``(s, h)`` with ``s = H(u - threshold)`` (firing at equality) and
    ``h = tau * u * (1 - s)``. On the backward path dH/du is replaced by the
    triangular surrogate ``max(gamma - |u - threshold|, 0) / gamma**2``.
    """
    u = _wrap(u)
    s, h, sg = kernels.lif_fire(np.ascontiguousarray(u.data), threshold, tau, gamma)
    ud = u.data
    s_t = _make(s, (u,), lambda g: (g * sg,), "spike")
    h_t = _make(h, (u,), lambda g: (g * (tau * (1.0 - s) - tau * ud * sg),), "reset")
    return s_t, h_t


def straight_through(x: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value`` exactly while passing the gradient to ``x`` unchanged."""
    x = _wrap(x)
    value = _as_array(value)
    if value.shape != x.shape:
        raise ShapeError(f"straight_through shape mismatch: {x.shape} vs {value.shape}")
    return _make(value, (x,), lambda g: (g,), "straight_through")
