"""Analytic FLOP accounting for one forward pass.

Conventions: one multiply-accumulate = 2 FLOPs; softmax ~ 5 FLOPs per entry
(shift, exp, sum, divide); a 2-d FFT over N points costs 5 * N * log2(N);
complex multiply = 6 FLOPs; layer norm ~ 8 FLOPs per element. Bias adds and
activations ride inside these estimates; the goal is order-of-magnitude
itemization, not cycle counting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .ham import anchor_count, grid_anchor_count
from .model import ModelConfig


def linear_flops(tokens: int, d_in: int, d_out: int) -> int:
    return 2 * tokens * d_in * d_out


def conv2d_flops(h: int, w: int, c_in: int, c_out: int, k: int) -> int:
    return 2 * h * w * c_in * c_out * k * k


def depthwise_flops(h: int, w: int, c: int, k: int) -> int:
    return 2 * h * w * c * k * k


def fft2_flops(h: int, w: int) -> int:
    n = h * w
    return int(5 * n * math.log2(n)) if n > 1 else 0


def anchored_attention_flops(tokens: int, width: int, anchors: int) -> int:
    projections = 4 * linear_flops(tokens, width, width)
    products = 4 * 2 * anchors * tokens * width
    softmax = 5 * 2 * anchors * tokens
    pooling = tokens * width
    return projections + products + softmax + pooling


def dense_attention_flops(tokens: int, width: int) -> int:
    projections = 4 * linear_flops(tokens, width, width)
    products = 2 * 2 * tokens * tokens * width
    softmax = 5 * tokens * tokens
    return projections + products + softmax


@dataclass
class FlopItem:
    name: str
    category: str  # attention | conv | linear | fft | elementwise
    flops: int


@dataclass
class FlopReport:
    items: list[FlopItem]

    @property
    def total(self) -> int:
        return sum(i.flops for i in self.items)

    def by_category(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for i in self.items:
            out[i.category] = out.get(i.category, 0) + i.flops
        return out

    def format_table(self) -> str:
        width = max(len(i.name) for i in self.items) + 2
        lines = [f"{'block':<{width}}{'category':<12}{'flops':>14}"]
        lines.append("-" * (width + 26))
        for i in self.items:
            lines.append(f"{i.name:<{width}}{i.category:<12}{i.flops:>14,}")
        lines.append("-" * (width + 26))
        for cat, flops in sorted(self.by_category().items()):
            lines.append(f"{('total ' + cat):<{width}}{'':<12}{flops:>14,}")
        lines.append(f"{'TOTAL':<{width}}{'':<12}{self.total:>14,}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "items": [{"name": i.name, "category": i.category, "flops": i.flops} for i in self.items],
            "by_category": self.by_category(),
            "total": self.total,
        }


def _ham_stage_items(name: str, c: int, cfg: ModelConfig) -> list[FlopItem]:
    p = cfg.patch_size
    tokens = p * p
    ham = cfg.ham
    items: list[FlopItem] = []
    if ham.use_global:
        anchors = grid_anchor_count((p, p), ham.s_spatial)
        items.append(FlopItem(f"{name}.global_attention", "attention",
                              anchored_attention_flops(tokens, c, anchors)))
    if ham.use_spectral:
        width = ham.spectral_width if ham.spectral_width is not None else c
        items.append(FlopItem(f"{name}.spectral_projections", "linear",
                              linear_flops(c, tokens, width) + linear_flops(c, width, tokens)))
        items.append(FlopItem(f"{name}.spectral_attention", "attention",
                              anchored_attention_flops(c, width, anchor_count(c, ham.s_spectral))))
    if ham.use_local:
        items.append(FlopItem(f"{name}.local_conv", "conv",
                              2 * depthwise_flops(p, p, c, ham.local_kernel)))
        hidden = max(c // ham.se_reduction, 1)
        items.append(FlopItem(f"{name}.channel_gate", "linear",
                              linear_flops(1, c, hidden) + linear_flops(1, hidden, c)))
    hidden = ham.ffn_ratio * c
    items.append(FlopItem(f"{name}.ffn", "linear",
                          linear_flops(tokens, c, hidden) + linear_flops(tokens, hidden, c)))
    items.append(FlopItem(f"{name}.norms", "elementwise", 2 * 8 * tokens * c))
    return items


def model_flops(cfg: ModelConfig) -> FlopReport:
    """Itemized analytic cost of one forward pass for a single patch."""
    p = cfg.patch_size
    c1, c2, c3 = cfg.widths
    items: list[FlopItem] = [
        FlopItem("hsi.stem", "conv", conv2d_flops(p, p, cfg.hsi_bands, c1, 1)),
    ]
    for i, c in enumerate((c1, c2, c3), start=1):
        if cfg.use_ham:
            items.extend(_ham_stage_items(f"hsi.stage{i}", c, cfg))
        else:
            items.append(FlopItem(f"hsi.stage{i}.conv", "conv", conv2d_flops(p, p, c, c, 3)))
    items.append(FlopItem("hsi.expand12", "conv", conv2d_flops(p, p, c1, c2, 1)))
    items.append(FlopItem("hsi.expand23", "conv", conv2d_flops(p, p, c2, c3, 1)))

    sar_chain = [(cfg.sar_bands, c1), (c1, c2), (c2, c3)]
    for i, (cin, cout) in enumerate(sar_chain, start=1):
        items.append(FlopItem(f"sar.layer{i}", "conv", conv2d_flops(p, p, cin, cout, 3)))

    for i, c in enumerate((c1, c2, c3), start=1):
        if cfg.use_pffm:
            items.append(FlopItem(f"fusion.level{i}.fft", "fft", c * 2 * fft2_flops(p, p)))
            spectrum = c * p * (p // 2 + 1)
            pointwise = 6 * spectrum + 4 * c * p * p
            items.append(FlopItem(f"fusion.level{i}.pointwise", "elementwise", pointwise))
        else:
            items.append(FlopItem(f"fusion.level{i}.sum", "elementwise", c * p * p))

    items.append(FlopItem("classifier", "linear",
                          linear_flops(1, c1 + c2 + c3, cfg.hidden)
                          + linear_flops(1, cfg.hidden, cfg.classes)))
    return FlopReport(items=items)
