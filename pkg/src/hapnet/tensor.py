"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (row-major, float64 by default; float32 storage is
allowed for training but gradient checks only make sense at 64-bit). Each op
records its parents and a backward closure; ``Tensor.backward()`` on a scalar
loss topologically sorts the graph and accumulates gradients into every
reachable leaf with ``requires_grad=True``.

Only the operator set the model actually needs is implemented. All backward
rules are verified against central finite differences in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, ShapeError

_CHECK_FINITE = False


def set_debug_finite(enabled: bool) -> None:
    """Toggle NaN/Inf detection on every op output (debug mode, slow)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """N-d array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- basic introspection ------------------------------------------------

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

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- graph machinery ----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if g.dtype != self.data.dtype:
            g = g.astype(self.data.dtype)
        # Rebind instead of mutating in place: incoming arrays may be shared
        # between parents or be views, and backward closures never touch a
        # gradient again after handing it off.
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op: str) -> Tensor:
    """Assemble an op output; drop graph edges when no parent needs grad."""
    _check_finite(data, op)
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward, "neg")


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d+ operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            da = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(da, a.data.shape))
        if b.requires_grad:
            db = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(db, b.data.shape))

    return _make(data, (a, b), backward, "matmul")


# -- shape manipulation -----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward, "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    perm = list(range(a.ndim))
    perm[ax1], perm[ax2] = perm[ax2], perm[ax1]
    return transpose(a, perm)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tensors, backward, "concat")


# -- reductions --------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), backward, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else math.prod(
        a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))
    )

    def backward(g):
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape))

    return _make(data, (a,), backward, "mean")


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    # tanh form of GELU; smooth everywhere, so finite differences apply.
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + _GELU_A * x2))
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        a._accumulate(g * local)

    return _make(data, (a,), backward, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax; subtracts the per-slice max before exp."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - inner))

    return _make(data, (a,), backward, "softmax")


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along `axis` (no affine part)."""
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * data).mean(axis=axis, keepdims=True)
        a._accumulate(inv * (g - gm - data * gym))

    return _make(data, (a,), backward, "layer_norm")


# -- pooling and convolution ---------------------------------------------------


def avg_pool(a: Tensor, axis: int, factor: int) -> Tensor:
    """Window-mean along one axis; the final partial window is truncated and
    averaged over its actual size."""
    if factor < 1:
        raise ConfigError(f"avg_pool factor must be >= 1, got {factor}")
    axis = axis % a.ndim
    length = a.data.shape[axis]
    starts = np.arange(0, length, factor)
    sizes = np.minimum(starts + factor, length) - starts
    sums = np.add.reduceat(a.data, starts, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = len(starts)
    sizes_f = sizes.astype(a.dtype).reshape(shape)
    data = sums / sizes_f

    def backward(g):
        a._accumulate(np.repeat(g / sizes_f, sizes, axis=axis))

    return _make(data, (a,), backward, "avg_pool")


def _reflect_index(i: int, n: int, pad: int) -> int:
    j = i - pad
    if j < 0:
        j = -j
    elif j >= n:
        j = 2 * n - 2 - j
    return j


def _pad_reflect(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, widths, mode="reflect")


def _unpad_reflect_fold(g: np.ndarray, pad: int) -> np.ndarray:
    """Adjoint of reflect padding on the last two axes."""
    if pad == 0:
        return g
    *lead, hp, wp = g.shape
    h, w = hp - 2 * pad, wp - 2 * pad
    rows = np.zeros((*lead, h, wp), dtype=g.dtype)
    for i in range(hp):
        rows[..., _reflect_index(i, h, pad), :] += g[..., i, :]
    out = np.zeros((*lead, h, w), dtype=g.dtype)
    for j in range(wp):
        out[..., _reflect_index(j, w, pad)] += rows[..., j]
    return out


def _to_batched(x: np.ndarray):
    """Flatten leading dims so the array is (B, C, H, W)."""
    lead = x.shape[:-3]
    return x.reshape((-1,) + x.shape[-3:]), lead


def depthwise_conv2d(a: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel 2-d cross-correlation with reflect padding; channels never mix.

    `a` is (..., C, H, W), `kernels` is (C, k, k) with k odd.
    """
    c, kh, kw = kernels.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"depthwise kernels must be odd square, got {kernels.shape}")
    if a.shape[-3] != c:
        raise ShapeError(
            f"kernel channels {c} do not match input channels {a.shape[-3]} (input {a.shape})"
        )
    pad = (kh - 1) // 2
    x4, lead = _to_batched(a.data)
    _, _, h, w = x4.shape
    if pad > 0 and (h < 2 or w < 2):
        raise ShapeError(f"reflect padding needs spatial size >= 2, got {h}x{w}")
    xp = _pad_reflect(x4, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    data = np.einsum("bchwij,cij->bchw", win, kernels.data, optimize=True)

    def backward(g):
        g4 = g.reshape((-1,) + g.shape[-3:])
        if kernels.requires_grad:
            dk = np.einsum("bchwij,bchw->cij", win, g4, optimize=True)
            kernels._accumulate(dk)
        if a.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + h, j : j + w] += g4 * kernels.data[:, i, j][None, :, None, None]
            a._accumulate(_unpad_reflect_fold(dxp, pad).reshape(a.data.shape))

    return _make(data.reshape(lead + (c, h, w)), (a, kernels), backward, "depthwise_conv2d")


def conv2d(a: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense 2-d cross-correlation, stride 1, reflect padding, shape preserved.

    `a` is (..., Cin, H, W), `weight` is (Cout, Cin, k, k) with k odd.
    """
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv kernels must be odd square, got {weight.shape}")
    if a.shape[-3] != cin:
        raise ShapeError(
            f"conv weight expects {cin} input channels, input has {a.shape[-3]} (input {a.shape})"
        )
    pad = (kh - 1) // 2
    x4, lead = _to_batched(a.data)
    _, _, h, w = x4.shape
    if pad > 0 and (h < 2 or w < 2):
        raise ShapeError(f"reflect padding needs spatial size >= 2, got {h}x{w}")
    xp = _pad_reflect(x4, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    data = np.einsum("bchwij,ocij->bohw", win, weight.data, optimize=True)
    if bias is not None:
        data = data + bias.data[:, None, None]

    parents = (a, weight) if bias is None else (a, weight, bias)

    def backward(g):
        g4 = g.reshape((-1,) + g.shape[-3:])
        if bias is not None and bias.requires_grad:
            bias._accumulate(g4.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            dw = np.einsum("bchwij,bohw->ocij", win, g4, optimize=True)
            weight._accumulate(dw)
        if a.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + h, j : j + w] += np.einsum(
                        "bohw,oc->bchw", g4, weight.data[:, :, i, j], optimize=True
                    )
            a._accumulate(_unpad_reflect_fold(dxp, pad).reshape(a.data.shape))

    return _make(data.reshape(lead + (cout, h, w)), parents, backward, "conv2d")


# -- loss ---------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy. `labels` are int class indices (B,)."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    nll = -np.log(p[np.arange(n), labels])
    data = np.array(nll.mean())

    def backward(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        logits._accumulate(float(g) * d / n)

    return _make(data, (logits,), backward, "softmax_cross_entropy")


# -- 2-d real FFT (value level) -------------------------------------------------
#
# Convention: unnormalized forward, 1/(H*W)-normalized inverse, so
# irfft2(rfft2(x), x.shape[-1]) == x. These are plain array functions; the
# differentiable frequency-domain path is the fused filter op in `pffm`.


def rfft2(x) -> np.ndarray:
    """Half-spectrum 2-d DFT over the last two axes of a real array."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.fft.rfft2(data, axes=(-2, -1))


def irfft2(spec: np.ndarray, width: int) -> np.ndarray:
    """Inverse of rfft2; `width` is the original last-axis length (needed to
    reconstruct odd widths)."""
    spec = np.asarray(spec)
    height = spec.shape[-2]
    return np.fft.irfft2(spec, s=(height, width), axes=(-2, -1))


def halfspec_weights(width: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum: 2 for
    columns with a distinct conjugate mirror, 1 for DC and (even width) Nyquist."""
    wh = width // 2 + 1
    weights = np.full(wh, 2.0)
    weights[0] = 1.0
    if width % 2 == 0:
        weights[-1] = 1.0
    return weights
