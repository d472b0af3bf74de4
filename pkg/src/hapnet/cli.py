"""Command-line surface: synth, prep, train, eval, gradcheck, flops.

Every command echoes its effective configuration (all defaults materialized)
and writes artifacts under the output directory. Exit codes: 0 success,
2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    SceneBundle,
    apply_pca,
    band_stats,
    extract_patches,
    fit_pca,
    load_scene,
    make_synthetic_scene,
    save_scene,
)
from .errors import ConfigError, DataError, HapnetError, NumericError
from .flops import model_flops
from .ham import HamConfig
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .train_eval import (
    TrainConfig,
    evaluate,
    metrics,
    render_map,
    train,
    write_loss_csv,
    write_metrics_json,
    write_ppm,
)
from .verify import SUITES, run_suite

_TOP_KEYS = {"seed", "precision", "model", "train", "data"}
_MODEL_KEYS = {
    "classes", "hsi_bands", "sar_bands", "patch_size", "widths", "hidden",
    "use_ham", "use_pffm", "ham",
}
_HAM_KEYS = {
    "use_global", "use_spectral", "use_local", "ffn_ratio", "heads",
    "s_spatial", "s_spectral", "local_kernel", "se_reduction", "spectral_width",
}
_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps"}
_DATA_KEYS = {"scene_dir", "out_dir"}


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def load_run_config(path, seed=None, precision=None) -> dict:
    """Parse a run-config JSON, reject unknown keys, materialize defaults."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "top level")
    model_raw = dict(raw.get("model", {}))
    _reject_unknown(model_raw, _MODEL_KEYS, "model")
    ham_raw = dict(model_raw.get("ham", {}))
    _reject_unknown(ham_raw, _HAM_KEYS, "model.ham")
    train_raw = dict(raw.get("train", {}))
    _reject_unknown(train_raw, _TRAIN_KEYS, "train")
    data_raw = dict(raw.get("data", {}))
    _reject_unknown(data_raw, _DATA_KEYS, "data")

    eff_seed = seed if seed is not None else int(raw.get("seed", 1))
    eff_precision = precision if precision is not None else raw.get("precision", "f64")
    if "classes" not in model_raw:
        raise ConfigError("run config must set model.classes")
    model_raw["ham"] = ham_raw
    model_cfg = ModelConfig.from_dict(model_raw)
    train_cfg = TrainConfig(seed=eff_seed, precision=eff_precision, **train_raw)
    return {
        "seed": eff_seed,
        "precision": eff_precision,
        "model": model_cfg,
        "train": train_cfg,
        "data": data_raw,
    }


def effective_config_dict(rc: dict) -> dict:
    train_d = rc["train"].to_dict()
    train_d.pop("seed")
    train_d.pop("precision")
    return {
        "seed": rc["seed"],
        "precision": rc["precision"],
        "model": rc["model"].to_dict(),
        "train": train_d,
        "data": rc["data"],
    }


def _echo(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _dtype(precision: str):
    return np.float32 if precision == "f32" else np.float64


def _load_bundle_for(cfg: ModelConfig, scene_dir) -> SceneBundle:
    bundle = load_scene(scene_dir)
    if bundle.labels.n_classes != cfg.classes:
        raise ConfigError(
            f"config declares {cfg.classes} classes but scene has {bundle.labels.n_classes}"
        )
    if bundle.hsi.bands != cfg.hsi_bands:
        raise ConfigError(
            f"config expects {cfg.hsi_bands} HSI bands, scene has {bundle.hsi.bands} "
            "(run `prep` first?)"
        )
    if bundle.sar.bands != cfg.sar_bands:
        raise ConfigError(
            f"config expects {cfg.sar_bands} SAR bands, scene has {bundle.sar.bands}"
        )
    return bundle


def _train_patches(bundle: SceneBundle, cfg: ModelConfig, coords):
    hstats = band_stats(bundle.hsi, bundle.train_coords)
    sstats = band_stats(bundle.sar, bundle.train_coords)
    return extract_patches(
        bundle.hsi, bundle.sar, bundle.labels, coords,
        size=cfg.patch_size, hsi_stats=hstats, sar_stats=sstats,
    )


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    bundle = make_synthetic_scene(
        seed=args.seed,
        classes=args.classes,
        height=args.height,
        width=args.width,
        hsi_bands=args.hsi_bands,
        sar_bands=args.sar_bands,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
    )
    save_scene(bundle, out)
    _echo({
        "command": "synth",
        "out": str(out),
        "seed": args.seed,
        "classes": args.classes,
        "scene": {"height": bundle.hsi.height, "width": bundle.hsi.width,
                  "hsi_bands": bundle.hsi.bands, "sar_bands": bundle.sar.bands},
        "train_samples": int(len(bundle.train_coords)),
        "test_samples": int(len(bundle.test_coords)),
    })
    return 0


def cmd_prep(args) -> int:
    out = Path(args.out)
    bundle = load_scene(args.scene)
    pca = fit_pca(bundle.hsi, k=args.components)
    reduced = apply_pca(bundle.hsi, pca)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(
        SceneBundle(hsi=reduced, sar=bundle.sar, labels=bundle.labels,
                    train_coords=bundle.train_coords, test_coords=bundle.test_coords),
        out,
    )
    sidecar = {
        "components": args.components,
        "band_means": pca.mean.tolist(),
        "explained_variance": pca.explained_variance.tolist(),
        "projection": pca.components.tolist(),
    }
    (out / "pca.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    _echo({
        "command": "prep",
        "scene": str(args.scene),
        "out": str(out),
        "components": args.components,
        "explained_variance_sum": float(pca.explained_variance.sum()),
    })
    return 0


def cmd_train(args) -> int:
    rc = load_run_config(args.config, seed=args.seed, precision=args.precision)
    out = Path(args.out) if args.out else Path(rc["data"].get("out_dir", "out"))
    scene_dir = args.scene or rc["data"].get("scene_dir")
    if not scene_dir:
        raise ConfigError("no scene directory: set data.scene_dir or pass --scene")
    model_cfg, train_cfg = rc["model"], rc["train"]
    bundle = _load_bundle_for(model_cfg, scene_dir)
    patches = _train_patches(bundle, model_cfg, bundle.train_coords)

    model = build_model(model_cfg, seed=rc["seed"], dtype=_dtype(rc["precision"]))
    log = train(model, patches, train_cfg)

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    write_loss_csv(log, out / "loss.csv")
    eff = effective_config_dict(rc)
    eff["data"] = {"scene_dir": str(scene_dir), "out_dir": str(out)}
    (out / "effective_config.json").write_text(json.dumps(eff, indent=2, sort_keys=True) + "\n")
    _echo(eff)
    print(f"final epoch: loss={log[-1].mean_loss:.6f} train_acc={log[-1].train_acc:.4f}")
    return 0


def _config_for_eval(args) -> dict:
    if args.config:
        return load_run_config(args.config)
    sibling = Path(args.checkpoint).parent / "effective_config.json"
    if not sibling.exists():
        raise ConfigError(
            "eval needs a config: pass --config or keep effective_config.json "
            "next to the checkpoint"
        )
    return load_run_config(sibling)


def cmd_eval(args) -> int:
    rc = _config_for_eval(args)
    scene_dir = args.scene or rc["data"].get("scene_dir")
    if not scene_dir:
        raise ConfigError("no scene directory: set data.scene_dir or pass --scene")
    model_cfg = rc["model"]
    bundle = _load_bundle_for(model_cfg, scene_dir)
    model = load_checkpoint(args.checkpoint, model_cfg)
    patches = _train_patches(bundle, model_cfg, bundle.test_coords)
    cm = evaluate(model, patches)
    report = metrics(cm, class_names=bundle.labels.class_names)

    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_json(report, out / "metrics.json")
    if args.map:
        write_ppm(render_map(model, bundle), out / "map.ppm")
    _echo(effective_config_dict(rc))
    print(report.format_table())
    return 0


def cmd_gradcheck(args) -> int:
    component = args.component
    if component not in set(SUITES) | {"all"}:
        raise ConfigError(
            f"unknown component {component!r}; pick from {sorted(SUITES)} or 'all'"
        )
    _echo({"command": "gradcheck", "component": component, "seed": args.seed})
    results = run_suite(component, seed=args.seed)
    failures = 0
    for res in results:
        print(res)
        failures += 0 if res.passed else 1
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    if failures:
        raise NumericError(f"{failures} gradient check(s) exceeded tolerance")
    return 0


def cmd_flops(args) -> int:
    if args.config:
        model_cfg = load_run_config(args.config)["model"]
    else:
        model_cfg = ModelConfig(classes=args.classes)
    report = model_flops(model_cfg)
    _echo({"command": "flops", "model": model_cfg.to_dict()})
    print(report.format_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "flops.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hapnet",
        description="HSI+SAR joint classification: data prep, training, "
                    "evaluation, and numeric verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic scene bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--hsi-bands", type=int, default=40)
    p.add_argument("--sar-bands", type=int, default=4)
    p.add_argument("--train-per-class", type=int, default=30)
    p.add_argument("--test-per-class", type=int, default=100)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="fit PCA on the HSI cube and write a reduced bundle")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int, default=30)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train from a run-config JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--precision", choices=["f32", "f64"], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scene's test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--map", action="store_true", help="also render a classification map (PPM)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--component", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="analytic FLOP breakdown for one forward pass")
    p.add_argument("--config", default=None)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flops)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HapnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
