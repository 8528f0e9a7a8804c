"""Dense tensors with reverse-mode automatic differentiation on numpy arrays.

float32 is the working precision for training and inference; gradient checks
run the same graphs in float64. Layout is row-major everywhere, with feature
maps ordered [batch, channels, height, width].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphReleasedError, ShapeMismatchError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction inside its body."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense n-dimensional array, optionally a node in a backward graph.

    ``data`` is a numpy float array. ``grad``, once populated by
    :func:`backward`, is an array of the same shape; gradients accumulate
    across backward passes until explicitly zeroed. Tensors produced by
    operations are treated as immutable; only ``grad`` (and, for leaf
    parameters, optimizer updates to ``data``) are written after creation.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._released = False

    # ---- conveniences -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a one-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # ---- operator sugar ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(self._coerce(other)))

    def __rsub__(self, other):
        return add(self._coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self, axes=None):
        return reduce_sum(self, axes)

    def mean(self, axes=None):
        return reduce_mean(self, axes)

    def reshape(self, shape):
        return reshape(self, shape)


def _track(out: Tensor, *parents: Tensor) -> bool:
    """Attach graph edges to ``out`` if tracking is on and any parent is tracked."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        return True
    return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after a broadcast forward op."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---- elementwise arithmetic ------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    if _track(out, a, b):

        def bw(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g, b.data.shape)

        out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    if _track(out, a, b):

        def bw(g):
            if a.requires_grad:
                a.grad += _unbroadcast(g * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g * a.data, b.data.shape)

        out._backward = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    if _track(out, a):

        def bw(g):
            a.grad += -g

        out._backward = bw
    return out


# ---- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors, or batched product of two 3-d tensors."""
    ad, bd = a.data, b.data
    if ad.ndim != bd.ndim or ad.ndim not in (2, 3):
        raise ShapeMismatchError(f"matmul needs two 2-d or two 3-d tensors, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dimensions differ: {ad.shape[-1]} vs {bd.shape[-2]}")
    if ad.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeMismatchError(f"matmul batch sizes differ: {ad.shape[0]} vs {bd.shape[0]}")
    out = Tensor(ad @ bd)
    if _track(out, a, b):

        def bw(g):
            if a.requires_grad:
                a.grad += g @ bd.swapaxes(-1, -2)
            if b.requires_grad:
                b.grad += ad.swapaxes(-1, -2) @ g

        out._backward = bw
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] input with an [O,C,kH,kW] kernel.

    Zero padding, single integer stride. Implemented as im2col plus one GEMM;
    the backward pass scatters column gradients back with a kH*kW loop, which
    keeps accumulation order fixed and results reproducible.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d input must be 4-d [N,C,H,W], got shape {x.data.shape}")
    if kernel.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d kernel must be 4-d [O,C,kH,kW], got shape {kernel.data.shape}")
    n, cin, h, w = x.data.shape
    cout, cink, kh, kw = kernel.data.shape
    if cin != cink:
        raise ShapeMismatchError(f"conv2d channel mismatch: input has {cin} channels, kernel expects {cink}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeMismatchError(f"conv2d bias must have shape ({cout},), got {bias.data.shape}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(
            f"conv2d kernel {kh}x{kw} does not fit {h}x{w} input with padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin * kh * kw)
    wmat = kernel.data.reshape(cout, -1)
    out_mat = cols @ wmat.T
    if bias is not None:
        out_mat = out_mat + bias.data
    out = Tensor(out_mat.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    if _track(out, *parents):

        def bw(g):
            gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
            if kernel.requires_grad:
                kernel.grad += (gmat.T @ cols).reshape(kernel.data.shape)
            if bias is not None and bias.requires_grad:
                bias.grad += gmat.sum(axis=0)
            if x.requires_grad:
                dcols = gmat @ wmat
                dwin = dcols.reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + stride * (oh - 1) + 1 : stride,
                            j : j + stride * (ow - 1) + 1 : stride] += dwin[:, :, i, j]
                if padding:
                    dxp = dxp[:, :, padding : padding + h, padding : padding + w]
                x.grad += dxp

        out._backward = bw
    return out


# ---- shape manipulation ------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if _track(out, x):

        def bw(g):
            x.grad += g.reshape(x.data.shape)

        out._backward = bw
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(x.data.transpose(axes))
    if _track(out, x):
        inv = np.argsort(axes)

        def bw(g):
            x.grad += g.transpose(inv)

        out._backward = bw
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _track(out, *tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    index = [slice(None)] * g.ndim
                    index[axis] = slice(lo, hi)
                    t.grad += g[tuple(index)]

        out._backward = bw
    return out


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling of the two trailing spatial axes."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"upsample_nearest expects [N,C,H,W], got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    out = Tensor(x.data.repeat(factor, axis=2).repeat(factor, axis=3))
    if _track(out, x):

        def bw(g):
            x.grad += g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))

        out._backward = bw
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through wherever x lies inside the closed interval."""
    out = Tensor(np.clip(x.data, lo, hi))
    if _track(out, x):
        mask = (x.data >= lo) & (x.data <= hi)

        def bw(g):
            x.grad += g * mask

        out._backward = bw
    return out


# ---- reductions ---------------------------------------------------------------


def _normalize_axes(x: Tensor, axes):
    if axes is None:
        return tuple(range(x.data.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(a) % x.data.ndim for a in axes)
    if len(axes) == 0:
        raise ValueError("reduction over an empty axis set")
    if len(set(axes)) != len(axes):
        raise ValueError(f"duplicate reduction axes: {axes}")
    return axes


def reduce_sum(x: Tensor, axes=None) -> Tensor:
    axes = _normalize_axes(x, axes)
    out = Tensor(x.data.sum(axis=axes))
    if _track(out, x):

        def bw(g):
            x.grad += np.expand_dims(g, axes)

        out._backward = bw
    return out


def reduce_mean(x: Tensor, axes=None) -> Tensor:
    """Arithmetic mean over the named axes (all axes when None)."""
    axes = _normalize_axes(x, axes)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    out = Tensor(x.data.mean(axis=axes))
    if _track(out, x):

        def bw(g):
            x.grad += np.expand_dims(g, axes) / count

        out._backward = bw
    return out


# ---- nonlinearities -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    if _track(out, x):
        mask = x.data > 0  # subgradient 0 at the kink

        def bw(g):
            x.grad += g * mask

        out._backward = bw
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data))
    if _track(out, x):
        scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)

        def bw(g):
            x.grad += g * scale

        out._backward = bw
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = Tensor(s)
    if _track(out, x):

        def bw(g):
            x.grad += g * s * (1.0 - s)

        out._backward = bw
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)
    if _track(out, x):

        def bw(g):
            x.grad += g * (1.0 - t * t)

        out._backward = bw
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) in its overflow-safe form; derivative is sigmoid(x)."""
    out = Tensor(np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data))))
    if _track(out, x):

        def bw(g):
            x.grad += g * _sigmoid(x.data)

        out._backward = bw
    return out


def activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Dispatch on name: relu | leaky_relu | sigmoid | tanh."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)
    if _track(out, x):

        def bw(g):
            dot = (g * s).sum(axis=-1, keepdims=True)
            x.grad += s * (g - dot)

        out._backward = bw
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor; every output row sums to 1."""
    if x.data.ndim != 2:
        raise ShapeMismatchError(f"softmax_rows expects a 2-d tensor, got shape {x.data.shape}")
    if not np.isfinite(x.data).all():
        raise ValueError("softmax_rows requires finite inputs")
    return softmax_last(x)


# ---- backward engine --------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every tracked tensor reachable from a scalar loss.

    Gradients accumulate into existing ``grad`` buffers. The graph is
    released afterwards; calling backward on the same result twice raises
    GraphReleasedError.
    """
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._released:
        raise GraphReleasedError("this graph was already consumed by a previous backward()")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; no tracked parameters reachable")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
    loss.grad += 1.0

    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)

    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None
            node._released = True


def grad_check(f, x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients of f at x.

    ``f`` maps the tensor to a scalar Tensor and must be re-evaluable; ``x``
    must be float64 (double-precision mode) with requires_grad set. The
    relative error at each coordinate is |a - n| / max(1, |a|, |n|).
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 tensor; build inputs and parameters as float64")
    if not x.requires_grad:
        raise ValueError("grad_check target must have requires_grad=True")

    x.grad = None
    y = f(x)
    backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(x).item()
            flat[i] = orig - eps
            fm = f(x).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)

    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float((np.abs(a - numeric) / denom).max())


# ---- seeded randomness ---------------------------------------------------------------


class Rng:
    """Deterministic random source: one 64-bit seed, one stream, any platform.

    Backed by numpy's PCG64 generator, whose output for a given seed is
    stable across runs and operating systems.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray | float:
        out = self._gen.uniform(low, high, size=shape)
        return float(out) if shape is None else out

    def integers(self, low: int, high: int) -> int:
        """One integer drawn uniformly from [low, high)."""
        return int(self._gen.integers(low, high))
