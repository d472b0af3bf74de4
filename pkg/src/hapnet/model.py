"""The full network: a three-stage HSI encoder of hierarchical attention
blocks, a three-layer convolutional SAR encoder, per-level frequency-domain
fusion, and a two-layer classifier head.

Spatial resolution is held at the patch size through all stages; the
expansion ratio 2 shows up as width doubling between stages (and as the FFN
hidden width inside each attention block).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError
from .ham import HamBlock, HamConfig
from .nn import Conv2d, LayerNorm, Linear, Module
from .pffm import GlobalFilter, pffm_fuse
from .tensor import Tensor


@dataclass
class ModelConfig:
    classes: int
    hsi_bands: int = 30
    sar_bands: int = 4
    patch_size: int = 11
    widths: tuple[int, int, int] = (32, 64, 128)
    hidden: int = 256
    use_ham: bool = True
    use_pffm: bool = True
    ham: HamConfig = field(default_factory=HamConfig)

    def __post_init__(self):
        if isinstance(self.widths, list):
            self.widths = tuple(self.widths)
        if isinstance(self.ham, dict):
            self.ham = HamConfig(**self.ham)
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.patch_size % 2 == 0 or self.patch_size < 1:
            raise ConfigError(f"patch size must be odd and positive, got {self.patch_size}")
        if len(self.widths) != 3 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be three positive ints, got {self.widths}")
        c1, c2, c3 = self.widths
        if c2 != 2 * c1 or c3 != 2 * c2:
            raise ConfigError(f"stage widths must double (expansion ratio 2), got {self.widths}")
        if self.hsi_bands < 1 or self.sar_bands < 1:
            raise ConfigError("band counts must be positive")
        if self.hidden < 1:
            raise ConfigError(f"classifier hidden width must be positive, got {self.hidden}")

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "hsi_bands": self.hsi_bands,
            "sar_bands": self.sar_bands,
            "patch_size": self.patch_size,
            "widths": list(self.widths),
            "hidden": self.hidden,
            "use_ham": self.use_ham,
            "use_pffm": self.use_pffm,
            "ham": self.ham.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "ham" in d and isinstance(d["ham"], dict):
            d["ham"] = HamConfig(**d["ham"])
        return cls(**d)


def config_hash(cfg: ModelConfig) -> bytes:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).digest()


class ConvBlock(Module):
    """conv -> channel layer-norm -> ReLU; the SAR encoder unit and the
    stand-in for attention blocks in the no-attention ablation."""

    def __init__(self, cin: int, cout: int, kernel: int, rng, dtype=np.float64):
        self.conv = Conv2d(cin, cout, kernel, rng, dtype=dtype)
        self.norm = LayerNorm(cout, axis=-3, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.norm(self.conv(x)))


class HapNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        c1, c2, c3 = cfg.widths
        p = cfg.patch_size

        self.hsi_stem = Conv2d(cfg.hsi_bands, c1, 1, rng, dtype=dtype)
        if cfg.use_ham:
            self.stage1 = HamBlock(c1, p, p, cfg.ham, rng, dtype=dtype)
            self.stage2 = HamBlock(c2, p, p, cfg.ham, rng, dtype=dtype)
            self.stage3 = HamBlock(c3, p, p, cfg.ham, rng, dtype=dtype)
        else:
            self.stage1 = ConvBlock(c1, c1, 3, rng, dtype=dtype)
            self.stage2 = ConvBlock(c2, c2, 3, rng, dtype=dtype)
            self.stage3 = ConvBlock(c3, c3, 3, rng, dtype=dtype)
        self.expand12 = Conv2d(c1, c2, 1, rng, dtype=dtype)
        self.expand23 = Conv2d(c2, c3, 1, rng, dtype=dtype)

        self.sar1 = ConvBlock(cfg.sar_bands, c1, 3, rng, dtype=dtype)
        self.sar2 = ConvBlock(c1, c2, 3, rng, dtype=dtype)
        self.sar3 = ConvBlock(c2, c3, 3, rng, dtype=dtype)

        if cfg.use_pffm:
            self.fuse1 = GlobalFilter(c1, p, p, dtype=dtype)
            self.fuse2 = GlobalFilter(c2, p, p, dtype=dtype)
            self.fuse3 = GlobalFilter(c3, p, p, dtype=dtype)
        else:
            self.fuse1 = self.fuse2 = self.fuse3 = None

        self.head1 = Linear(c1 + c2 + c3, cfg.hidden, rng, dtype=dtype)
        self.head2 = Linear(cfg.hidden, cfg.classes, rng, dtype=dtype)

    def _fuse(self, filt, fh: Tensor, fs: Tensor) -> Tensor:
        if filt is None:
            return fh + fs
        return pffm_fuse(fh, fs, filt)

    def forward(self, hsi: Tensor, sar: Tensor) -> Tensor:
        if not isinstance(hsi, Tensor):
            hsi = Tensor(hsi)
        if not isinstance(sar, Tensor):
            sar = Tensor(sar)
        if hsi.ndim != 4 or sar.ndim != 4:
            raise ShapeError(f"expected batched (B,C,H,W) inputs, got {hsi.shape} and {sar.shape}")
        if hsi.shape[0] != sar.shape[0]:
            raise ShapeError(f"batch sizes disagree: {hsi.shape[0]} vs {sar.shape[0]}")
        if hsi.shape[2:] != sar.shape[2:]:
            raise ShapeError(f"modalities cover different windows: {hsi.shape} vs {sar.shape}")
        p = self.cfg.patch_size
        if hsi.shape[2:] != (p, p):
            raise ShapeError(f"model built for {p}x{p} patches, got {hsi.shape[2:]}")
        if hsi.shape[1] != self.cfg.hsi_bands or sar.shape[1] != self.cfg.sar_bands:
            raise ShapeError(
                f"band counts disagree with config: hsi {hsi.shape[1]}/{self.cfg.hsi_bands}, "
                f"sar {sar.shape[1]}/{self.cfg.sar_bands}"
            )

        h1 = self.stage1(self.hsi_stem(hsi))
        h2 = self.stage2(self.expand12(h1))
        h3 = self.stage3(self.expand23(h2))

        s1 = self.sar1(sar)
        s2 = self.sar2(s1)
        s3 = self.sar3(s2)

        f1 = self._fuse(self.fuse1, h1, s1)
        f2 = self._fuse(self.fuse2, h2, s2)
        f3 = self._fuse(self.fuse3, h3, s3)

        pooled = T.concat(
            [T.tensor_mean(f, axis=(-2, -1)) for f in (f1, f2, f3)], axis=1
        )
        return self.head2(T.relu(self.head1(pooled)))

    def predict(self, hsi, sar) -> np.ndarray:
        """Argmax class ids (1-based) for a batch."""
        logits = self.forward(hsi, sar)
        return np.argmax(logits.data, axis=1) + 1


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> HapNet:
    return HapNet(cfg, np.random.default_rng(seed), dtype=dtype)


# -- checkpoint format ---------------------------------------------------------
#
#   magic "HAPC" | u32 version | 32-byte sha256 of the canonical config JSON |
#   u32 param count | per parameter:
#     u32 name length | name utf-8 | u32 ndim | u32 dims... | u8 dtype code |
#     raw little-endian values
#
# dtype codes: 0 = float32, 1 = float64. Round-trips are bit-exact.

_MAGIC = b"HAPC"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def save_checkpoint(model: HapNet, path) -> None:
    params = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(config_hash(model.cfg))
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(struct.pack("<B", _DTYPE_CODES[p.dtype]))
            fh.write(np.ascontiguousarray(p.data).astype(p.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path, cfg: ModelConfig) -> HapNet:
    """Rebuild a model from `cfg` and restore parameters bit-exactly.

    The stored config hash must match `cfg`; a mismatched or corrupt file is
    rejected.
    """
    try:
        blob = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise DataError(f"checkpoint {path} truncated")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(4) != _MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    stored_hash = take(32)
    if stored_hash != config_hash(cfg):
        raise DataError("checkpoint was written for a different model config (hash mismatch)")
    (count,) = struct.unpack("<I", take(4))

    model = build_model(cfg)
    current = dict(model.named_parameters())
    if count != len(current):
        raise DataError(f"checkpoint holds {count} parameters, model has {len(current)}")
    seen = set()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (code,) = struct.unpack("<B", take(1))
        if code not in _CODE_DTYPES:
            raise DataError(f"unknown dtype code {code} in checkpoint")
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        values = np.frombuffer(take(nbytes), dtype=dtype.newbyteorder("<")).astype(dtype)
        if name not in current:
            raise DataError(f"checkpoint parameter '{name}' not present in model")
        target = current[name]
        if tuple(shape) != target.shape:
            raise DataError(f"parameter '{name}' shape {shape} != model shape {target.shape}")
        target.data = values.reshape(shape)
        seen.add(name)
    if off != len(blob):
        raise DataError(f"checkpoint {path} has {len(blob) - off} trailing bytes")
    if seen != set(current):
        raise DataError("checkpoint is missing parameters")
    return model
