"""Parameterized building blocks on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class Module:
    """Minimal parameter container. Submodules and parameters are discovered
    from instance attributes in definition order, which keeps checkpoint
    names and initialization order deterministic."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Linear(Module):
    """y = x @ W + b with W of shape (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 std: float = 0.02, dtype=np.float64):
        self.weight = _param(rng.normal(0.0, std, (in_features, out_features)), dtype)
        self.bias = _param(np.zeros(out_features), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    """Layer normalization over one axis with learnable scale and shift."""

    def __init__(self, dim: int, axis: int = -1, dtype=np.float64, eps: float = 1e-5):
        self.gamma = _param(np.ones(dim), dtype)
        self.beta = _param(np.zeros(dim), dtype)
        self.axis = axis
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        axis = self.axis % x.ndim
        shape = [1] * x.ndim
        shape[axis] = self.gamma.size
        normed = T.layer_norm(x, axis=axis, eps=self.eps)
        return normed * T.reshape(self.gamma, shape) + T.reshape(self.beta, shape)


class Conv2d(Module):
    """3x3/1x1 conv, stride 1, reflect padding, spatial shape preserved."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, dtype=np.float64):
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = _param(rng.normal(0.0, std, (out_channels, in_channels, kernel, kernel)), dtype)
        self.bias = _param(np.zeros(out_channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dtype=np.float64):
        fan_in = kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.kernels = _param(rng.normal(0.0, std, (channels, kernel, kernel)), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.depthwise_conv2d(x, self.kernels)


class SqueezeExcite(Module):
    """Channel attention: global average pool -> FC(C -> C/r) -> ReLU ->
    FC(C/r -> C) -> sigmoid gate, applied per channel."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator, dtype=np.float64):
        if reduction < 1:
            raise ConfigError(f"squeeze-excite reduction must be >= 1, got {reduction}")
        hidden = max(channels // reduction, 1)
        self.fc1 = Linear(channels, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype=dtype)

    def gate(self, x: Tensor) -> Tensor:
        pooled = T.tensor_mean(x, axis=(-2, -1))            # (..., C)
        lead = pooled.shape[:-1]
        flat = pooled if pooled.ndim == 2 else T.reshape(pooled, (-1, pooled.shape[-1]))
        g = T.sigmoid(self.fc2(T.relu(self.fc1(flat))))
        return g if pooled.ndim == 2 else T.reshape(g, lead + (g.shape[-1],))

    def forward(self, x: Tensor) -> Tensor:
        g = self.gate(x)
        return x * T.reshape(g, g.shape + (1, 1))
