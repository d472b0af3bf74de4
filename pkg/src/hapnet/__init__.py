"""HSI + SAR joint land-cover classification with hierarchical anchored
attention and frequency-domain filter fusion, built on a self-contained
numpy autodiff engine."""

from .data import (
    BandStats,
    LabelRaster,
    PatchSet,
    PcaModel,
    SceneBundle,
    SceneCube,
    apply_pca,
    band_stats,
    extract_patches,
    fit_pca,
    load_scene,
    make_synthetic_scene,
    save_scene,
)
from .errors import ConfigError, DataError, HapnetError, NumericError, ShapeError
from .flops import FlopReport, model_flops
from .ham import AnchoredAttention, AttentionMaps, HamBlock, HamConfig
from .model import HapNet, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .pffm import GlobalFilter, global_filter_apply, pffm_fuse
from .tensor import Tensor, irfft2, rfft2, set_debug_finite
from .train_eval import (
    Adam,
    ConfusionMatrix,
    MetricsReport,
    TrainConfig,
    evaluate,
    metrics,
    render_map,
    train,
    write_ppm,
)

__version__ = "0.1.0"
