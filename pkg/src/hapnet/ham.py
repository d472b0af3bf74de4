"""Hierarchical attention: anchored self-attention plus parallel global /
spectral / local branches fused by summation and followed by an FFN.

Anchored self-attention replaces the dense tokens x tokens softmax with two
thin row-stochastic maps routed through a reduced set of anchor tokens A,
pooled from the queries:

    M_d = softmax(A K^T / sqrt(d))     (anchor -> key)
    M_e = softmax(Q A^T / sqrt(d))     (query -> anchor)
    Y   = M_e (M_d V)

Cost is O(tokens * anchors * d) per head instead of O(tokens^2 * d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import DepthwiseConv2d, Linear, Module, SqueezeExcite
from .nn import LayerNorm
from .tensor import Tensor


def anchor_count(tokens: int, factor: int) -> int:
    """Anchors produced by pooling a token axis by `factor`."""
    return -(-tokens // factor)


def grid_anchor_count(grid: tuple[int, int], factor: int) -> int:
    """Anchors produced by pooling an H x W token grid by `factor` per side."""
    return anchor_count(grid[0], factor) * anchor_count(grid[1], factor)


@dataclass
class AttentionMaps:
    """Per-head attention internals, for inspection and oracle tests."""

    m_d: np.ndarray  # (B, heads, anchors, tokens)
    m_e: np.ndarray  # (B, heads, tokens, anchors)
    z: np.ndarray    # (B, heads, anchors, head_dim)
    y: np.ndarray    # (B, heads, tokens, head_dim)


class AnchoredAttention(Module):
    """Multi-head anchored self-attention over a token sequence.

    Anchors come from average-pooling Q along the token axis by factor `s`.
    If the tokens form a spatial grid, pass `grid=(H, W)` to `forward` and the
    pooling is applied per grid side (anchors = ceil(H/s) * ceil(W/s)), which
    is what makes the spatial branch strictly cheaper than dense attention.
    """

    def __init__(self, d_model: int, heads: int, s: int, rng: np.random.Generator,
                 dtype=np.float64):
        if heads < 1 or d_model % heads != 0:
            raise ConfigError(f"d_model={d_model} must be divisible by heads={heads}")
        if s < 1:
            raise ConfigError(f"anchor factor s must be >= 1, got {s}")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.s = s
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        self.wk = Linear(d_model, d_model, rng, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng, dtype=dtype)
        self.wo = Linear(d_model, d_model, rng, dtype=dtype)

    def _split_heads(self, x: Tensor, batch: int, tokens: int) -> Tensor:
        x = T.reshape(x, (batch, tokens, self.heads, self.head_dim))
        return T.transpose(x, (0, 2, 1, 3))  # (B, heads, T, d)

    def _pool_anchors(self, q: Tensor, grid) -> Tensor:
        if grid is None:
            return T.avg_pool(q, axis=2, factor=self.s)
        gh, gw = grid
        b = q.shape[0]
        a = T.reshape(q, (b, self.heads, gh, gw, self.head_dim))
        a = T.avg_pool(a, axis=2, factor=self.s)
        a = T.avg_pool(a, axis=3, factor=self.s)
        ah, aw = a.shape[2], a.shape[3]
        return T.reshape(a, (b, self.heads, ah * aw, self.head_dim))

    def _attend(self, x: Tensor, grid):
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
            squeeze = True
        elif x.ndim == 3:
            squeeze = False
        else:
            raise ShapeError(f"attention input must be (tokens, d) or (batch, tokens, d), got {x.shape}")
        batch, tokens, dm = x.shape
        if tokens == 0:
            raise ShapeError("attention over an empty token axis")
        if dm != self.d_model:
            raise ShapeError(f"input width {dm} does not match d_model {self.d_model}")
        if grid is not None and grid[0] * grid[1] != tokens:
            raise ShapeError(f"token grid {grid} does not cover {tokens} tokens")

        q = self._split_heads(self.wq(x), batch, tokens)
        k = self._split_heads(self.wk(x), batch, tokens)
        v = self._split_heads(self.wv(x), batch, tokens)
        a = self._pool_anchors(q, grid)

        scale = 1.0 / math.sqrt(self.head_dim)
        m_d = T.softmax(T.matmul(a, T.swapaxes(k, -1, -2)) * scale, axis=-1)
        m_e = T.softmax(T.matmul(q, T.swapaxes(a, -1, -2)) * scale, axis=-1)
        z = T.matmul(m_d, v)
        y = T.matmul(m_e, z)

        out = T.reshape(T.transpose(y, (0, 2, 1, 3)), (batch, tokens, dm))
        out = self.wo(out)
        if squeeze:
            out = T.reshape(out, (tokens, dm))
        return out, AttentionMaps(m_d.data, m_e.data, z.data, y.data)

    def forward(self, x: Tensor, grid: tuple[int, int] | None = None) -> Tensor:
        return self._attend(x, grid)[0]

    def forward_with_maps(self, x: Tensor, grid: tuple[int, int] | None = None):
        return self._attend(x, grid)


@dataclass
class HamConfig:
    """Branch wiring for one hierarchical attention block."""

    use_global: bool = True
    use_spectral: bool = True
    use_local: bool = True
    ffn_ratio: int = 2
    heads: int = 2
    s_spatial: int = 2
    s_spectral: int = 2
    local_kernel: int = 3
    se_reduction: int = 4
    spectral_width: int | None = None  # None -> the block's channel count

    def __post_init__(self):
        if not (self.use_global or self.use_spectral or self.use_local):
            raise ConfigError("hierarchical attention needs at least one enabled branch")
        if self.ffn_ratio < 1:
            raise ConfigError(f"ffn expansion ratio must be >= 1, got {self.ffn_ratio}")
        if self.local_kernel % 2 == 0:
            raise ConfigError(f"local kernel must be odd, got {self.local_kernel}")

    def to_dict(self) -> dict:
        return {
            "use_global": self.use_global,
            "use_spectral": self.use_spectral,
            "use_local": self.use_local,
            "ffn_ratio": self.ffn_ratio,
            "heads": self.heads,
            "s_spatial": self.s_spatial,
            "s_spectral": self.s_spectral,
            "local_kernel": self.local_kernel,
            "se_reduction": self.se_reduction,
            "spectral_width": self.spectral_width,
        }


def _ensure_batched(x: Tensor):
    if x.ndim == 3:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")


def _to_tokens(x: Tensor):
    """(B, C, H, W) -> (B, H*W, C)."""
    b, c, h, w = x.shape
    return T.transpose(T.reshape(x, (b, c, h * w)), (0, 2, 1))


def _from_tokens(x: Tensor, h: int, w: int):
    b, hw, c = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1)), (b, c, h, w))


class GlobalBranch(Module):
    """Long-range spatial mixing: anchored attention over the H*W pixel tokens,
    anchors pooled from the 2-d token grid."""

    def __init__(self, channels: int, cfg: HamConfig, rng, dtype=np.float64):
        self.attn = AnchoredAttention(channels, cfg.heads, cfg.s_spatial, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x, squeeze = _ensure_batched(x)
        b, c, h, w = x.shape
        y = self.attn(_to_tokens(x), grid=(h, w))
        y = _from_tokens(y, h, w)
        return T.reshape(y, (c, h, w)) if squeeze else y


class SpectralBranch(Module):
    """Long-range spectral mixing: each channel is one token; its H*W values
    are projected to the attention width and back."""

    def __init__(self, channels: int, height: int, width: int, cfg: HamConfig,
                 rng, dtype=np.float64):
        attn_width = cfg.spectral_width if cfg.spectral_width is not None else channels
        self.proj_in = Linear(height * width, attn_width, rng, dtype=dtype)
        self.attn = AnchoredAttention(attn_width, cfg.heads, cfg.s_spectral, rng, dtype=dtype)
        self.proj_out = Linear(attn_width, height * width, rng, dtype=dtype)
        self.spatial = (height, width)

    def forward(self, x: Tensor) -> Tensor:
        x, squeeze = _ensure_batched(x)
        b, c, h, w = x.shape
        if (h, w) != self.spatial:
            raise ShapeError(f"spectral branch built for {self.spatial}, got {h}x{w}")
        tokens = T.reshape(x, (b, c, h * w))
        y = self.proj_out(self.attn(self.proj_in(tokens)))
        y = T.reshape(y, (b, c, h, w))
        return T.reshape(y, (c, h, w)) if squeeze else y


class LocalBranch(Module):
    """Local structure: two depthwise convolutions with a nonlinearity between
    them, then a squeeze-excitation channel gate."""

    def __init__(self, channels: int, cfg: HamConfig, rng, dtype=np.float64):
        self.conv1 = DepthwiseConv2d(channels, cfg.local_kernel, rng, dtype=dtype)
        self.conv2 = DepthwiseConv2d(channels, cfg.local_kernel, rng, dtype=dtype)
        self.se = SqueezeExcite(channels, cfg.se_reduction, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.se(self.conv2(T.relu(self.conv1(x))))


class HamBlock(Module):
    """One hierarchical attention block: pre-norm, three parallel branches
    combined by element-wise summation, then a position-wise FFN. Residual
    connections wrap the branch sum and the FFN."""

    def __init__(self, channels: int, height: int, width: int, cfg: HamConfig,
                 rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.channels = channels
        self.norm1 = LayerNorm(channels, axis=-3, dtype=dtype)
        self.global_branch = GlobalBranch(channels, cfg, rng, dtype) if cfg.use_global else None
        self.spectral_branch = (
            SpectralBranch(channels, height, width, cfg, rng, dtype) if cfg.use_spectral else None
        )
        self.local_branch = LocalBranch(channels, cfg, rng, dtype) if cfg.use_local else None
        self.norm2 = LayerNorm(channels, axis=-3, dtype=dtype)
        hidden = cfg.ffn_ratio * channels
        self.ffn_in = Linear(channels, hidden, rng, dtype=dtype)
        self.ffn_out = Linear(hidden, channels, rng, dtype=dtype)

    def _ffn(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        tokens = _to_tokens(x)
        tokens = self.ffn_out(T.gelu(self.ffn_in(tokens)))
        return _from_tokens(tokens, h, w)

    def forward(self, x: Tensor) -> Tensor:
        x, squeeze = _ensure_batched(x)
        normed = self.norm1(x)
        mixed = None
        for branch in (self.global_branch, self.spectral_branch, self.local_branch):
            if branch is None:
                continue
            out = branch(normed)
            mixed = out if mixed is None else mixed + out
        x = x + mixed
        x = x + self._ffn(self.norm2(x))
        return T.reshape(x, x.shape[1:]) if squeeze else x
