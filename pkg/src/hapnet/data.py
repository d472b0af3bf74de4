"""Scene ingestion, PCA band reduction, patch extraction, and synthetic
fixtures.

Scene bundle directory layout (all integers little-endian):

    hsi.bin     raw float32, band-major (band, row, col)
    hsi.json    {"width", "height", "bands", "modality"}
    sar.bin     raw float32, band-major
    sar.json    {"width", "height", "bands", "modality"}
    labels.bin  raw uint16, row-major; 0 = unlabeled, 1..N = classes
    labels.json {"width", "height", "classes": {"1": name, ...}}
    train.csv   coordinate list, header "row,col"
    test.csv    coordinate list, header "row,col"
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class SceneCube:
    """One modality raster: values are (bands, height, width), band-major."""

    values: np.ndarray
    modality: str

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise DataError(f"scene cube must be (bands, height, width), got {self.values.shape}")

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelRaster:
    """Per-pixel class ids; 0 means unlabeled."""

    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise DataError(f"label raster must be 2-d, got {self.labels.shape}")
        if self.labels.min() < 0:
            raise DataError("negative class ids")
        if self.labels.max() > len(self.class_names):
            raise DataError(
                f"label id {int(self.labels.max())} exceeds class count {len(self.class_names)}"
            )

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass
class SceneBundle:
    hsi: SceneCube
    sar: SceneCube
    labels: LabelRaster
    train_coords: np.ndarray  # (N, 2) of (row, col)
    test_coords: np.ndarray


@dataclass
class PcaModel:
    mean: np.ndarray                # (bands,)
    components: np.ndarray          # (bands, k), orthonormal columns
    explained_variance: np.ndarray  # (k,), non-increasing


@dataclass
class BandStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class PatchSet:
    hsi: np.ndarray     # (B, bands, size, size)
    sar: np.ndarray
    labels: np.ndarray  # (B,), 1-based class ids
    coords: np.ndarray  # (B, 2)

    def __len__(self):
        return len(self.labels)


# -- PCA -----------------------------------------------------------------------


def fit_pca(cube: SceneCube, k: int = 30) -> PcaModel:
    """Top-k principal components of the spectra, pixels as samples.

    Sign convention: each component's largest-magnitude entry is positive,
    which makes the decomposition deterministic across eigensolvers.
    """
    if k < 1 or k > cube.bands:
        raise ConfigError(f"cannot keep {k} components of a {cube.bands}-band cube")
    x = cube.values.reshape(cube.bands, -1).T.astype(np.float64)  # (pixels, bands)
    mean = x.mean(axis=0)
    xc = x - mean
    denom = max(x.shape[0] - 1, 1)
    cov = (xc.T @ xc) / denom
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    comps = eigvecs[:, order]
    variances = np.maximum(eigvals[order], 0.0)
    for j in range(comps.shape[1]):
        i = np.argmax(np.abs(comps[:, j]))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    return PcaModel(mean=mean, components=comps, explained_variance=variances)


def apply_pca(cube: SceneCube, model: PcaModel) -> SceneCube:
    if cube.bands != model.mean.shape[0]:
        raise DataError(
            f"cube has {cube.bands} bands, PCA model was fit on {model.mean.shape[0]}"
        )
    x = cube.values.reshape(cube.bands, -1).T.astype(np.float64)
    proj = (x - model.mean) @ model.components  # (pixels, k)
    out = proj.T.reshape(model.components.shape[1], cube.height, cube.width)
    return SceneCube(values=out, modality=cube.modality)


# -- normalization and patches -------------------------------------------------


def band_stats(cube: SceneCube, coords: np.ndarray) -> BandStats:
    """Per-band mean/std over the pixels at `coords` (train split only, so no
    test statistic can leak into normalization)."""
    coords = np.asarray(coords)
    vals = cube.values[:, coords[:, 0], coords[:, 1]].astype(np.float64)  # (bands, n)
    std = vals.std(axis=1)
    return BandStats(mean=vals.mean(axis=1), std=np.maximum(std, 1e-12))


def _standardized(cube: SceneCube, stats: BandStats | None) -> np.ndarray:
    vals = cube.values.astype(np.float64)
    if stats is None:
        return vals
    return (vals - stats.mean[:, None, None]) / stats.std[:, None, None]


def _gather_patches(values: np.ndarray, coords: np.ndarray, size: int) -> np.ndarray:
    half = size // 2
    padded = np.pad(values, [(0, 0), (half, half), (half, half)], mode="reflect")
    offs = np.arange(size)
    rows = coords[:, 0, None, None] + offs[None, :, None]
    cols = coords[:, 1, None, None] + offs[None, None, :]
    return padded[:, rows, cols].transpose(1, 0, 2, 3)


def extract_patches(
    hsi: SceneCube,
    sar: SceneCube,
    labels: LabelRaster,
    coords: np.ndarray,
    size: int = 11,
    hsi_stats: BandStats | None = None,
    sar_stats: BandStats | None = None,
) -> PatchSet:
    """Cut size x size windows centered on `coords` from both modalities,
    reflect-padded at scene borders, standardized with the given statistics."""
    if size % 2 == 0 or size < 1:
        raise ConfigError(f"patch size must be odd and positive, got {size}")
    if (hsi.height, hsi.width) != (sar.height, sar.width):
        raise DataError(
            f"modalities are not co-registered: {hsi.height}x{hsi.width} vs {sar.height}x{sar.width}"
        )
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DataError(f"coords must be (N, 2), got {coords.shape}")
    oob = (
        (coords[:, 0] < 0)
        | (coords[:, 0] >= hsi.height)
        | (coords[:, 1] < 0)
        | (coords[:, 1] >= hsi.width)
    )
    if oob.any():
        raise DataError(f"coordinate out of bounds: {coords[oob][0].tolist()}")
    lab = labels.labels[coords[:, 0], coords[:, 1]]
    if (lab < 1).any():
        bad = coords[lab < 1][0]
        raise DataError(f"unlabeled pixel requested at {bad.tolist()}")
    return PatchSet(
        hsi=_gather_patches(_standardized(hsi, hsi_stats), coords, size),
        sar=_gather_patches(_standardized(sar, sar_stats), coords, size),
        labels=lab.astype(np.int64),
        coords=coords,
    )


# -- scene bundle I/O ------------------------------------------------------------


def _write_cube(cube: SceneCube, stem: Path) -> None:
    meta = {
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "modality": cube.modality,
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    raw = np.ascontiguousarray(cube.values, dtype="<f4")
    stem.with_suffix(".bin").write_bytes(raw.tobytes())


def _read_cube(stem: Path) -> SceneCube:
    meta_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    if not meta_path.exists() or not bin_path.exists():
        raise DataError(f"missing scene files for {stem.name} in {stem.parent}")
    meta = json.loads(meta_path.read_text())
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    expect = meta["bands"] * meta["height"] * meta["width"]
    if raw.size != expect:
        raise DataError(
            f"{bin_path.name}: header promises {expect} values, file holds {raw.size}"
        )
    values = raw.reshape(meta["bands"], meta["height"], meta["width"]).astype(np.float32)
    return SceneCube(values=values, modality=meta["modality"])


def _write_coords(coords: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col"])
        for r, c in np.asarray(coords):
            writer.writerow([int(r), int(c)])


def _read_coords(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing split file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "col"]:
            raise DataError(f"{path.name}: expected header 'row,col', got {header}")
        rows = [(int(r), int(c)) for r, c in reader]
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def save_scene(bundle: SceneBundle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_cube(bundle.hsi, directory / "hsi")
    _write_cube(bundle.sar, directory / "sar")
    lab = bundle.labels
    meta = {
        "width": lab.labels.shape[1],
        "height": lab.labels.shape[0],
        "classes": {str(i + 1): name for i, name in enumerate(lab.class_names)},
    }
    (directory / "labels.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (directory / "labels.bin").write_bytes(
        np.ascontiguousarray(lab.labels, dtype="<u2").tobytes()
    )
    _write_coords(bundle.train_coords, directory / "train.csv")
    _write_coords(bundle.test_coords, directory / "test.csv")


def load_scene(directory) -> SceneBundle:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"scene directory {directory} does not exist")
    hsi = _read_cube(directory / "hsi")
    sar = _read_cube(directory / "sar")
    meta_path = directory / "labels.json"
    bin_path = directory / "labels.bin"
    if not meta_path.exists() or not bin_path.exists():
        raise DataError(f"missing label files in {directory}")
    meta = json.loads(meta_path.read_text())
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<u2")
    if raw.size != meta["height"] * meta["width"]:
        raise DataError("labels.bin size does not match labels.json header")
    class_ids = sorted(int(i) for i in meta["classes"])
    if class_ids != list(range(1, len(class_ids) + 1)):
        raise DataError(f"class ids must be 1..N, got {class_ids}")
    labels = LabelRaster(
        labels=raw.reshape(meta["height"], meta["width"]).astype(np.int64),
        class_names=[meta["classes"][str(i)] for i in class_ids],
    )

    if (hsi.height, hsi.width) != (sar.height, sar.width):
        raise DataError(
            f"cubes disagree in size: hsi {hsi.height}x{hsi.width}, sar {sar.height}x{sar.width}"
        )
    if labels.labels.shape != (hsi.height, hsi.width):
        raise DataError("label raster size does not match the cubes")

    train = _read_coords(directory / "train.csv")
    test = _read_coords(directory / "test.csv")
    for name, coords in (("train", train), ("test", test)):
        if len(coords) == 0:
            continue
        if coords.min() < 0 or coords[:, 0].max() >= hsi.height or coords[:, 1].max() >= hsi.width:
            raise DataError(f"{name} split has out-of-bounds coordinates")
        lab = labels.labels[coords[:, 0], coords[:, 1]]
        if (lab < 1).any():
            raise DataError(f"{name} split points at unlabeled pixels")
    overlap = set(map(tuple, train.tolist())) & set(map(tuple, test.tolist()))
    if overlap:
        raise DataError(f"train/test splits overlap at {len(overlap)} coordinates")
    return SceneBundle(hsi=hsi, sar=sar, labels=labels, train_coords=train, test_coords=test)


# -- synthetic fixtures ------------------------------------------------------------


def _class_signatures(rng: np.random.Generator, classes: int, bands: int) -> np.ndarray:
    """Smooth, well-separated spectral curves, one per class (min pairwise L2
    distance >= 1.0, redrawn deterministically until satisfied)."""
    b = np.arange(bands) / bands
    for _ in range(100):
        sigs = np.zeros((classes, bands))
        for c in range(classes):
            curve = np.full(bands, 0.5 + 0.3 * (c / max(classes - 1, 1) - 0.5))
            for k in range(1, 4):
                amp = rng.uniform(0.1, 0.25)
                phase = rng.uniform(0.0, 1.0)
                curve = curve + amp * np.sin(2.0 * np.pi * (k * b + phase))
            sigs[c] = curve
        dists = np.linalg.norm(sigs[:, None, :] - sigs[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= 1.0:
            return sigs
    raise ConfigError("could not draw separable class signatures; use more bands")


def make_synthetic_scene(
    seed: int,
    classes: int = 7,
    height: int = 64,
    width: int = 64,
    hsi_bands: int = 40,
    sar_bands: int = 4,
    tile: int = 16,
    train_per_class: int | list[int] = 30,
    test_per_class: int = 100,
    noise: float = 0.05,
    unlabeled_tiles: int = 1,
) -> SceneBundle:
    """Deterministic class-separable fixture: class-dependent spectral
    signatures plus noise for HSI, class-dependent texture statistics for SAR,
    labels assigned per tile, splits sampled per class."""
    rng = np.random.default_rng(seed)
    if isinstance(train_per_class, int):
        train_counts = [train_per_class] * classes
    else:
        train_counts = list(train_per_class)
        if len(train_counts) != classes:
            raise ConfigError(f"need {classes} train counts, got {len(train_counts)}")

    th, tw = -(-height // tile), -(-width // tile)
    n_tiles = th * tw
    assignment = np.tile(np.arange(1, classes + 1), -(-n_tiles // classes))[:n_tiles]
    assignment = rng.permutation(assignment)
    if unlabeled_tiles > 0:
        assignment[rng.choice(n_tiles, size=min(unlabeled_tiles, n_tiles), replace=False)] = 0
    tile_map = assignment.reshape(th, tw)
    labels = np.kron(tile_map, np.ones((tile, tile), dtype=np.int64))[:height, :width]

    sigs = _class_signatures(rng, classes, hsi_bands)
    sig_bg = sigs.mean(axis=0)
    full_sigs = np.vstack([sig_bg, sigs])  # row 0 = unlabeled background
    hsi_vals = full_sigs[labels].transpose(2, 0, 1) + rng.normal(0.0, noise, (hsi_bands, height, width))

    sar_mu = rng.uniform(0.1, 0.9, (classes + 1, sar_bands))
    sar_mu[0] = sar_mu[1:].mean(axis=0)
    sar_sigma = rng.uniform(0.05, 0.2, classes + 1)
    sar_vals = (
        sar_mu[labels].transpose(2, 0, 1)
        + sar_sigma[labels][None, :, :] * rng.standard_normal((sar_bands, height, width))
    )

    train_list, test_list = [], []
    for c in range(1, classes + 1):
        coords = np.argwhere(labels == c)
        need = train_counts[c - 1] + test_per_class
        if len(coords) < need:
            raise ConfigError(
                f"class {c} has only {len(coords)} labeled pixels, needs {need}; "
                "use a larger scene or fewer samples"
            )
        pick = rng.choice(len(coords), size=need, replace=False)
        train_list.append(coords[pick[: train_counts[c - 1]]])
        test_list.append(coords[pick[train_counts[c - 1] :]])

    return SceneBundle(
        hsi=SceneCube(values=hsi_vals.astype(np.float32), modality="HSI"),
        sar=SceneCube(values=sar_vals.astype(np.float32), modality="SAR"),
        labels=LabelRaster(
            labels=labels, class_names=[f"class_{i:02d}" for i in range(1, classes + 1)]
        ),
        train_coords=np.concatenate(train_list, axis=0),
        test_coords=np.concatenate(test_list, axis=0),
    )
