"""Training loop (Adam + cross-entropy), evaluation metrics (per-class
accuracy, OA, AA, Kappa), and classification-map rendering."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import PatchSet, SceneBundle, band_stats, extract_patches
from .errors import ConfigError, DataError, NumericError
from .model import HapNet
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 1
    precision: str = "f64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        # lr == 0 is allowed: it freezes the parameters, which is a useful
        # determinism check even though it trains nothing.
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "seed": self.seed,
            "precision": self.precision,
        }


class Adam:
    """Adam with bias correction. State (m, v, t) is per-parameter first and
    second moments plus a shared step counter."""

    def __init__(self, params, lr: float = 0.0003, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_acc: float


def train(model: HapNet, patches: PatchSet, cfg: TrainConfig) -> list[EpochRecord]:
    """Full-pass mini-batch training, shuffled per epoch from the seeded RNG.
    Deterministic given seed and numeric mode."""
    n = len(patches)
    if n == 0:
        raise DataError("cannot train on an empty patch set")
    dtype = model.parameters()[0].dtype
    hsi = patches.hsi.astype(dtype)
    sar = patches.sar.astype(dtype)
    targets = patches.labels - 1
    if targets.min() < 0 or targets.max() >= model.cfg.classes:
        raise DataError("patch labels fall outside 1..classes")

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    log: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = model(Tensor(hsi[idx]), Tensor(sar[idx]))
            loss = T.softmax_cross_entropy(logits, targets[idx])
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {start} "
                    f"(lr={cfg.learning_rate}, precision={cfg.precision})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.data) * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == targets[idx]).sum())
        log.append(EpochRecord(epoch, loss_sum / n, correct / n))
    return log


def write_loss_csv(log: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "train_acc"])
        for rec in log:
            writer.writerow([rec.epoch, repr(rec.mean_loss), repr(rec.train_acc)])


# -- metrics -------------------------------------------------------------------


class ConfusionMatrix:
    """Integer counts, rows = true class, columns = predicted (both 1-based
    externally, 0-based internally)."""

    def __init__(self, n_classes: int):
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add_batch(self, true_ids: np.ndarray, pred_ids: np.ndarray) -> None:
        """Accumulate 1-based true/predicted class ids."""
        np.add.at(self.counts, (np.asarray(true_ids) - 1, np.asarray(pred_ids) - 1), 1)


def evaluate(model: HapNet, patches: PatchSet, batch_size: int = 256) -> ConfusionMatrix:
    cm = ConfusionMatrix(model.cfg.classes)
    dtype = model.parameters()[0].dtype
    for start in range(0, len(patches), batch_size):
        sl = slice(start, start + batch_size)
        preds = model.predict(
            patches.hsi[sl].astype(dtype), patches.sar[sl].astype(dtype)
        )
        cm.add_batch(patches.labels[sl], preds)
    return cm


@dataclass
class MetricsReport:
    per_class: list[float | None]
    oa: float
    aa: float
    kappa: float
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class": self.per_class,
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
        }

    def format_table(self) -> str:
        names = self.class_names or [f"class_{i+1:02d}" for i in range(len(self.per_class))]
        width = max(len(n) for n in names + ["Kappa"]) + 2
        lines = []
        for name, acc in zip(names, self.per_class):
            shown = "   n/a" if acc is None else f"{100 * acc:6.2f}"
            lines.append(f"{name:<{width}}{shown}")
        lines.append("-" * (width + 6))
        lines.append(f"{'OA':<{width}}{100 * self.oa:6.2f}")
        lines.append(f"{'AA':<{width}}{100 * self.aa:6.2f}")
        lines.append(f"{'Kappa':<{width}}{100 * self.kappa:6.2f}")
        return "\n".join(lines)


def metrics(cm: ConfusionMatrix, class_names: list[str] | None = None) -> MetricsReport:
    """OA = trace/total; per-class accuracy = diagonal/row-sum (zero-support
    rows reported as undefined and excluded from AA); Kappa chance-corrected
    via p_e = sum_i row_i . col_i / total^2."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise DataError("metrics of an all-zero confusion matrix")
    diag = np.diag(counts).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)
    col = counts.sum(axis=0).astype(np.float64)
    per_class = [float(d / r) if r > 0 else None for d, r in zip(diag, row)]
    defined = [a for a in per_class if a is not None]
    oa = float(diag.sum() / total)
    aa = float(np.mean(defined))
    p_e = float((row * col).sum() / (total * total))
    if p_e == 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    return MetricsReport(per_class=per_class, oa=oa, aa=aa, kappa=float(kappa),
                         class_names=class_names or [])


# -- classification maps -------------------------------------------------------

DEFAULT_PALETTE = [
    (46, 139, 87),    # sea green
    (220, 20, 60),    # crimson
    (255, 165, 0),    # orange
    (124, 252, 0),    # lawn green
    (186, 85, 211),   # orchid
    (70, 130, 180),   # steel blue
    (0, 206, 209),    # turquoise
    (255, 215, 0),    # gold
    (139, 69, 19),    # saddle brown
    (255, 105, 180),  # hot pink
    (112, 128, 144),  # slate gray
    (0, 100, 0),      # dark green
    (255, 69, 0),     # orange red
    (75, 0, 130),     # indigo
    (240, 230, 140),  # khaki
    (0, 0, 205),      # medium blue
]


def render_map(
    model: HapNet,
    bundle: SceneBundle,
    palette: list[tuple[int, int, int]] | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Predict every labeled pixel and paint it; unlabeled pixels stay black.
    Normalization statistics come from the bundle's train split."""
    palette = palette if palette is not None else DEFAULT_PALETTE
    n_classes = bundle.labels.n_classes
    if len(palette) < n_classes:
        raise ConfigError(f"palette has {len(palette)} colors for {n_classes} classes")
    coords = np.argwhere(bundle.labels.labels > 0)
    img = np.zeros((bundle.labels.labels.shape[0], bundle.labels.labels.shape[1], 3), dtype=np.uint8)
    if len(coords) == 0:
        return img
    hstats = band_stats(bundle.hsi, bundle.train_coords)
    sstats = band_stats(bundle.sar, bundle.train_coords)
    patches = extract_patches(
        bundle.hsi, bundle.sar, bundle.labels, coords,
        size=model.cfg.patch_size, hsi_stats=hstats, sar_stats=sstats,
    )
    dtype = model.parameters()[0].dtype
    colors = np.asarray(palette, dtype=np.uint8)
    for start in range(0, len(patches), batch_size):
        sl = slice(start, start + batch_size)
        preds = model.predict(
            patches.hsi[sl].astype(dtype), patches.sar[sl].astype(dtype)
        )
        img[coords[sl, 0], coords[sl, 1]] = colors[preds - 1]
    return img


def write_ppm(img: np.ndarray, path) -> None:
    """Binary portable pixmap (P6, maxval 255)."""
    h, w, c = img.shape
    if c != 3:
        raise ConfigError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_metrics_json(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
