"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array together with a gradient accumulator and a
closure that propagates gradients to its parents.  Calling :func:`backward`
on a scalar node walks the recorded graph once, in reverse topological
order, accumulating gradients additively wherever a node fans out.

Precision policy: tensors carry whatever float dtype they were created
with.  Tests run everything in float64 (finite-difference checks are
unreliable in float32); training runs may use float32 via
:func:`set_default_dtype`.
"""

from __future__ import annotations

import contextlib

import numpy as np

_default_dtype = np.float64
_grad_enabled = True
_check_finite = False


def set_default_dtype(dtype) -> None:
    """Set the dtype used when tensors are created from raw arrays."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype.type


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def checked_mode():
    """Raise on any non-finite op result inside the block."""
    global _check_finite
    prev = _check_finite
    _check_finite = True
    try:
        yield
    finally:
        _check_finite = prev


def _maybe_check(data, op):
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by op '{op}'")
    return data


def _unbroadcast(grad, shape):
    # Sum gradient over axes that numpy broadcasting expanded.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense n-d array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def t(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self):
        return ssum(self)

    def mean(self):
        return mean(self)

    def square(self):
        return square(self)

    def backward(self):
        backward(self)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else _default_dtype)
    return Tensor(arr)


def _make(data, parents, backward, op):
    _maybe_check(data, op)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# -- elementwise and linear ops -----------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd, "mul")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def bwd(g):
        a.accumulate_grad(g * c)

    return _make(out_data, (a,), bwd, "scale")


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(a.data.T @ g)

    return _make(out_data, (a, b), bwd, "matmul")


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    out_data = a.data.T

    def bwd(g):
        a.accumulate_grad(g.T)

    return _make(out_data, (a,), bwd, "transpose")


def reshape(a, shape):
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)
    in_shape = a.data.shape

    def bwd(g):
        a.accumulate_grad(g.reshape(in_shape))

    return _make(out_data, (a,), bwd, "reshape")


def square(a):
    a = _as_tensor(a)
    out_data = a.data * a.data

    def bwd(g):
        a.accumulate_grad(2.0 * a.data * g)

    return _make(out_data, (a,), bwd, "square")


def log(a):
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        a.accumulate_grad(g / a.data)

    return _make(out_data, (a,), bwd, "log")


def clamp(a, lo, hi):
    """Clip values into [lo, hi]; gradient passes only through the interior."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    interior = (a.data > lo) & (a.data < hi)

    def bwd(g):
        a.accumulate_grad(g * interior)

    return _make(out_data, (a,), bwd, "clamp")


def ssum(a):
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), bwd, "sum")


def mean(a):
    a = _as_tensor(a)
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def bwd(g):
        a.accumulate_grad(np.broadcast_to(g / n, a.data.shape).copy())

    return _make(out_data, (a,), bwd, "mean")


# -- activations ---------------------------------------------------------


def relu(a):
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)
    mask = a.data > 0

    def bwd(g):
        a.accumulate_grad(g * mask)

    return _make(out_data, (a,), bwd, "relu")


def elu(a, alpha=1.0):
    a = _as_tensor(a)
    neg = np.minimum(a.data, 0.0)
    out_data = np.where(a.data > 0, a.data, alpha * np.expm1(neg))
    # derivative: 1 for x > 0, alpha * exp(x) otherwise (continuous at 0)
    deriv = np.where(a.data > 0, 1.0, alpha * np.exp(neg))

    def bwd(g):
        a.accumulate_grad(g * deriv)

    return _make(out_data, (a,), bwd, "elu")


def tanh_act(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        a.accumulate_grad(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd, "tanh")


def sigmoid(a):
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd, "sigmoid")


def app_act(a, beta=1.0):
    """Clipped-linear code surrogate: clip(beta * x, -1, 1).

    The subgradient at the clip boundary |beta*x| == 1 takes the interior
    value beta (the choice is fixed for determinism).
    """
    a = _as_tensor(a)
    beta = float(beta)
    z = beta * a.data
    out_data = np.clip(z, -1.0, 1.0)
    mask = np.abs(z) <= 1.0

    def bwd(g):
        a.accumulate_grad(g * mask * beta)

    return _make(out_data, (a,), bwd, "app")


# -- spatial ops ---------------------------------------------------------


def _conv_out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, stride=1, pad=0):
    """2-d cross-correlation.  x: (N,C,H,W), w: (F,C,kh,kw) -> (N,F,H',W')."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    ho = _conv_out_extent(h, kh, stride, pad)
    wo = _conv_out_extent(wd, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output extent would be empty for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # patches: (N, C, H', W', kh, kw) via strided view, subsampled by stride
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    patches = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out_data = np.einsum("nchwij,fcij->nfhw", patches, w.data, optimize=True)

    def bwd(g):
        if w.requires_grad:
            w.accumulate_grad(np.einsum("nfhw,nchwij->fcij", g, patches, optimize=True))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    contrib = np.einsum("nfhw,fc->nchw", g, w.data[:, :, di, dj], optimize=True)
                    gxp[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += contrib
            if pad:
                gxp = gxp[:, :, pad : pad + h, pad : pad + wd]
            x.accumulate_grad(gxp)

    return _make(out_data, (x, w), bwd, "conv2d")


def transposed_conv2d(x, w, stride=1, pad=0):
    """Transposed convolution.  x: (N,C,H,W), w: (C,F,kh,kw) -> (N,F,H',W')
    with H' = (H-1)*stride - 2*pad + kh."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"transposed_conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    cw, f, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"transposed_conv2d channel mismatch: input has {c}, kernel expects {cw}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (wd - 1) * stride - 2 * pad + kw
    if ho < 1 or wo < 1:
        raise ValueError(f"transposed_conv2d output extent would be empty for input {x.shape}")

    # scatter into a frame that still carries the padding, then crop
    full = np.zeros((n, f, ho + 2 * pad, wo + 2 * pad), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            full[:, :, di : di + stride * h : stride, dj : dj + stride * wd : stride] += np.einsum(
                "nchw,cf->nfhw", x.data, w.data[:, :, di, dj], optimize=True
            )
    out_data = full[:, :, pad : pad + ho, pad : pad + wo] if pad else full

    def bwd(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        win = np.lib.stride_tricks.sliding_window_view(gfull, (kh, kw), axis=(2, 3))
        gpatch = win[:, :, ::stride, ::stride][:, :, :h, :wd]  # (N,F,H,W,kh,kw)
        if x.requires_grad:
            x.accumulate_grad(np.einsum("nfhwij,cfij->nchw", gpatch, w.data, optimize=True))
        if w.requires_grad:
            w.accumulate_grad(np.einsum("nfhwij,nchw->cfij", gpatch, x.data, optimize=True))

    return _make(out_data, (x, w), bwd, "transposed_conv2d")


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation.

    x is (N,C) or (N,C,H,W); gamma/beta are tensors of shape (C,).
    running_mean/running_var are plain arrays owned by the caller and are
    updated in place when ``training`` is true (biased batch variance).
    In eval mode the op is an affine function of x using the stored stats.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ValueError(f"batchnorm expects 2-d or 4-d input, got shape {x.shape}")
    m = x.data.size // x.shape[1]

    if training:
        mu = x.data.mean(axis=axes)
        var = ((x.data - mu.reshape(bshape)) ** 2).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            gg = g * gamma.data.reshape(bshape)
            if training:
                gmean = gg.mean(axis=axes).reshape(bshape)
                gxhat_mean = (gg * xhat).mean(axis=axes).reshape(bshape)
                dx = inv_std.reshape(bshape) * (gg - gmean - xhat * gxhat_mean)
            else:
                dx = gg * inv_std.reshape(bshape)
            x.accumulate_grad(dx)

    _ = m  # batch element count kept for clarity of the derivation above
    return _make(out_data, (x, gamma, beta), bwd, "batchnorm")


# -- backward pass -------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, iter(loss._parents))]
    on_path = {id(loss)}
    visited.add(id(loss))
    # iterative DFS; recursion would overflow on deep training graphs
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) in on_path:
                raise RuntimeError("cycle detected in differentiation graph")
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                on_path.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            on_path.discard(id(node))
            topo.append(node)
            stack.pop()

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def clear_graph(loss: Tensor) -> None:
    """Drop accumulated grads on every node reachable from loss.

    Needed before a second backward pass over a graph that shares nodes
    with an earlier one; stale intermediate grads would otherwise leak in.
    """
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        node.grad = None
        stack.extend(node._parents)


def sgd_step(params, grads, tau, ascent=False):
    """Vanilla SGD update: p <- p -/+ tau * g, elementwise."""
    sign = 1.0 if ascent else -1.0
    for p, g in zip(params, grads):
        if g is None:
            continue
        if p.data.shape != np.shape(g):
            raise ValueError(f"sgd_step shape mismatch: param {p.data.shape} vs grad {np.shape(g)}")
        p.data += sign * tau * g


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
