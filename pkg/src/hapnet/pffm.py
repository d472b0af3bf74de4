"""Parallel filter fusion: a learnable frequency-domain filter gates the
cross-modal interaction between HSI and SAR feature maps.

The fusion chain is

    F_f   = F_h * F_s                      (element-wise product)
    W     = irfft2(K . rfft2(F_f))         (learnable global filter)
    F_fus = W * F_h + W * F_s

K lives on the Hermitian half-spectrum (shape C x H x (W/2+1)), stored as a
(real, imaginary) pair of real parameters, so filtered outputs are exactly
real-valued. Multiplying a spectrum by K equals circularly convolving the
feature map with irfft2(K).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Module
from .tensor import Tensor, halfspec_weights, _make


def global_filter_apply(x: Tensor, k_re: Tensor, k_im: Tensor) -> Tensor:
    """Apply a half-spectrum filter to (..., C, H, W): irfft2(K . rfft2(x)).

    Differentiable in x and in both filter parts. Since the map is linear in
    x with spectrum multiplier K, the x-gradient is filtering the output
    gradient by conj(K); the K-gradient is rfft2(g) . conj(rfft2(x)) with the
    half-spectrum column multiplicities (1 for DC/Nyquist, 2 elsewhere) and
    the 1/(H*W) inverse normalization folded in.
    """
    c, h, wh = k_re.shape
    if k_im.shape != k_re.shape:
        raise ShapeError(f"filter parts disagree: {k_re.shape} vs {k_im.shape}")
    if x.ndim < 3:
        raise ShapeError(f"filter input must be (..., C, H, W), got {x.shape}")
    width = x.shape[-1]
    if x.shape[-3] != c or x.shape[-2] != h or width // 2 + 1 != wh:
        raise ShapeError(
            f"filter of shape {k_re.shape} does not match feature maps of shape {x.shape}"
        )

    k = k_re.data + 1j * k_im.data
    spec = np.fft.rfft2(x.data, axes=(-2, -1))
    data = np.fft.irfft2(k * spec, s=(h, width), axes=(-2, -1))

    def backward(g):
        g_spec = np.fft.rfft2(g, axes=(-2, -1))
        if x.requires_grad:
            dx = np.fft.irfft2(np.conj(k) * g_spec, s=(h, width), axes=(-2, -1))
            x._accumulate(dx.astype(x.dtype, copy=False))
        if k_re.requires_grad or k_im.requires_grad:
            gk = (halfspec_weights(width) / (h * width)) * g_spec * np.conj(spec)
            if gk.ndim > 3:
                gk = gk.sum(axis=tuple(range(gk.ndim - 3)))
            if k_re.requires_grad:
                k_re._accumulate(gk.real.astype(k_re.dtype, copy=False))
            if k_im.requires_grad:
                k_im._accumulate(gk.imag.astype(k_im.dtype, copy=False))

    return _make(data, (x, k_re, k_im), backward, "global_filter")


class GlobalFilter(Module):
    """Learnable per-channel half-spectrum filter for one fusion level.

    Initialized to the identity filter (K = 1), so fusion starts out as a
    plain product gate and learns deviations.
    """

    def __init__(self, channels: int, height: int, width: int, dtype=np.float64):
        wh = width // 2 + 1
        self.k_re = Tensor(np.ones((channels, height, wh)), requires_grad=True, dtype=dtype)
        self.k_im = Tensor(np.zeros((channels, height, wh)), requires_grad=True, dtype=dtype)
        self.spatial = (height, width)

    def forward(self, x: Tensor) -> Tensor:
        return global_filter_apply(x, self.k_re, self.k_im)

    def kernel(self) -> np.ndarray:
        """The equivalent spatial-domain circular-convolution kernel irfft2(K)."""
        k = self.k_re.data + 1j * self.k_im.data
        return np.fft.irfft2(k, s=self.spatial, axes=(-2, -1))


def pffm_fuse(f_h: Tensor, f_s: Tensor, filt: GlobalFilter) -> Tensor:
    """Fuse two same-shape modality features through the global filter gate."""
    if f_h.shape != f_s.shape:
        raise ShapeError(f"fusion inputs disagree: {f_h.shape} vs {f_s.shape}")
    f_f = f_h * f_s
    w = filt(f_f)
    return w * f_h + w * f_s
