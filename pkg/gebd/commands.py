"""Command implementations behind detector.py.

Each command takes the parsed argparse namespace plus the environment Config,
writes its artifacts, and finishes by writing a RunManifest next to them.
"""
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Dict, List, Optional
import logging
import time

import torch

from . import __version__
from .checkpoint import load_checkpoint, metrics_path, save_checkpoint
from .datamodel import BOUNDARY_CLASSES, make_folds, parse_boundary_class, select_fold, snippetize_labels
from .errors import InputError, UsageError
from .experiments import ensemble_threshold, run_ablation, run_cross_validation
from .feature_io import (
    FEATURE_EXT,
    load_annotations,
    load_dataset,
    load_features,
    load_predictions,
    read_json,
    save_annotations,
    save_predictions,
    write_feature_file,
    write_json_atomic,
)
from .model import parse_variant
from .postprocess import PeakConfig, evaluate_dataset, probabilities_to_timestamps
from .render import mask_image, save_image, tsm_grid_image
from .similarity import class_masks, stack_tsm
from .synthetic import SynthConfig, generate_synthetic_dataset
from .trainer import TrainConfig, ensemble_average, predict_probabilities, train_fold

logger = logging.getLogger('gebd.commands')

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """Everything needed to rerun a command: its name, resolved config, seed and outputs."""
    command: str
    config: dict
    seed: Optional[int]
    artifacts: List[str] = field(default_factory=list)
    version: str = __version__
    duration_seconds: float = 0.0
    started: float = field(default_factory=time.time, repr=False)

    def add(self, path) -> Path:
        self.artifacts.append(str(path))
        return Path(path)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("started")
        return data

    def finish(self, path: Path) -> Path:
        self.duration_seconds = round(time.time() - self.started, 3)
        write_json_atomic(path, self.to_dict())
        logger.info(f"{self.command} finished in {self.duration_seconds:.1f}s; manifest at {path}")
        return path


def manifest_path(artifact: Path) -> Path:
    """manifest.json inside an output directory, or <stem>.manifest.json beside an output file."""
    artifact = Path(artifact)
    if artifact.suffix == "":
        return artifact / MANIFEST_NAME
    return artifact.with_name(f"{artifact.stem}.{MANIFEST_NAME}")


def parse_float_list(text: str, flag: str) -> List[float]:
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}")
    if not values:
        raise UsageError(f"{flag} needs at least one value")
    return values


def parse_int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}")


def load_config_file(path: Optional[str]) -> Dict[str, dict]:
    """Read a JSON config with optional "synth" and "train" sections; bare keys count as "train"."""
    if not path:
        return {}
    if not Path(path).is_file():
        raise UsageError(f"Config file not found: {path}")
    data = read_json(path)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    if not set(data) & {"synth", "train"}:
        data = {"train": data}
    return data


def resolve_train_config(args, config) -> TrainConfig:
    """Defaults < environment < JSON config < flags."""
    base = {"seed": config.SEED, "threshold": config.DEFAULT_THRESHOLD}
    base.update(load_config_file(getattr(args, "config", None)).get("train", {}))
    overrides = {
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "lr", None),
        "local_range": getattr(args, "local_range", None),
        "peak_k": getattr(args, "peak_k", None),
        "threshold": getattr(args, "threshold", None),
        "variant": getattr(args, "variant", None),
    }
    rel = getattr(args, "rel", None)
    if rel is not None:
        overrides["eval_rels"] = parse_float_list(rel, "--rel")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base).validate()


def resolve_synth_config(args, config) -> SynthConfig:
    base = {"snippet_rate": config.SNIPPET_RATE}
    base.update(load_config_file(getattr(args, "config", None)).get("synth", {}))
    overrides = {
        "length_min": args.length_min,
        "length_max": args.length_max,
        "feature_dim": args.feature_dim,
        "noise": args.noise,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig.from_dict(base).validate()


def check_threshold(threshold: Optional[float]):
    if threshold is not None and not 0.0 <= threshold <= 1.0:
        raise UsageError(f"--threshold must lie in [0, 1], got {threshold}")


def features_dir(path) -> Path:
    path = Path(path)
    return path / "features" if (path / "features").is_dir() else path


def cmd_synth(args, config) -> RunManifest:
    if args.num_videos < 1:
        raise UsageError(f"--num-videos must be >= 1, got {args.num_videos}")
    seed = config.SEED if args.seed is None else args.seed
    synth = resolve_synth_config(args, config)
    out = Path(args.out or config.DATA_DIR)
    manifest = RunManifest("synth", {"num_videos": args.num_videos, **synth.to_dict()}, seed)

    features, annotations = generate_synthetic_dataset(args.num_videos, seed, synth)
    for seq in features:
        path = out / "features" / f"{seq.video_id}{FEATURE_EXT}"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_feature_file(path, seq)
    manifest.add(out / "features")
    save_annotations(manifest.add(out / "annotations.json"), annotations, synth.snippet_rate)
    logger.info(f"Wrote {len(features)} feature files and annotations to {out}")
    manifest.finish(out / MANIFEST_NAME)
    return manifest


def cmd_train(args, config) -> RunManifest:
    train_config = resolve_train_config(args, config)
    if not 0 <= args.fold < args.k:
        raise UsageError(f"--fold must satisfy 0 <= fold < k={args.k}, got {args.fold}")
    data = load_dataset(args.data or config.DATA_DIR, config.SNIPPET_RATE)
    split = select_fold(make_folds(data.video_ids, args.k, train_config.seed), args.fold)
    logger.info(f"Fold {args.fold}/{args.k}: {len(split.train_ids)} train, {len(split.val_ids)} validation videos")

    out = Path(args.out or f"fold_{args.fold}.gebc")
    manifest = RunManifest("train", {"data": str(args.data), "fold": args.fold, "k": args.k,
                                     "train": train_config.to_dict()}, train_config.seed)
    ckpt = train_fold(split, data, train_config)
    save_checkpoint(manifest.add(out), ckpt)
    manifest.add(metrics_path(out))
    logger.info(f"Best epoch {ckpt.best_epoch} with validation F1 {ckpt.best_val_f1:.4f}")
    manifest.finish(manifest_path(out))
    return manifest


def cmd_predict(args, config) -> RunManifest:
    check_threshold(args.threshold)
    if not args.ckpt:
        raise UsageError("predict needs at least one --ckpt")
    checkpoints = [load_checkpoint(p) for p in args.ckpt]
    dims = {c.in_dim for c in checkpoints}
    if len(dims) != 1:
        raise InputError(f"Checkpoints expect different feature dimensions: {sorted(dims)}")
    in_dim = dims.pop()

    features = load_features(features_dir(args.data or config.DATA_DIR))
    if not features:
        raise InputError(f"No feature files found for {args.data}")
    wrong = sorted(v for v, s in features.items() if s.dim != in_dim)
    if wrong:
        raise InputError(f"{wrong[0]}: feature dim {features[wrong[0]].dim} but checkpoints expect {in_dim}")

    threshold = args.threshold if args.threshold is not None else ensemble_threshold(checkpoints)
    peak = PeakConfig(args.peak_k or checkpoints[0].train_config.peak_k, threshold).validate()
    logger.info(f"Predicting {len(features)} videos with {len(checkpoints)} checkpoint(s), "
                f"K={peak.K} threshold={peak.threshold:.2f}")

    predictions = {}
    for vid in sorted(features):
        seq = features[vid]
        probs = ensemble_average([predict_probabilities(c, seq) for c in checkpoints])
        predictions[vid] = probabilities_to_timestamps(probs, seq.snippet_rate, peak)

    out = Path(args.out or "predictions.json")
    manifest = RunManifest("predict", {"ckpt": [str(p) for p in args.ckpt], "data": str(args.data),
                                       "peak": asdict(peak)}, None)
    save_predictions(manifest.add(out), predictions)
    manifest.finish(manifest_path(out))
    return manifest


def cmd_eval(args, config) -> RunManifest:
    rels = parse_float_list(args.rel, "--rel")
    if any(r <= 0 for r in rels):
        raise UsageError(f"--rel values must be positive, got {rels}")
    boundary_class = parse_boundary_class(args.boundary_class)
    predictions = load_predictions(args.pred)
    annotations = load_annotations(args.ann, config.SNIPPET_RATE)
    report = evaluate_dataset(predictions, annotations, rels, boundary_class)
    print(report.format_table())

    pred = Path(args.pred)
    out = Path(args.out) if args.out else pred.with_name(pred.stem + ".eval.json")
    manifest = RunManifest("eval", {"pred": str(args.pred), "ann": str(args.ann), "rels": rels,
                                    "class": boundary_class.value}, None)
    write_json_atomic(manifest.add(out), report.to_dict())
    manifest.finish(manifest_path(out))
    return manifest


def cmd_crossval(args, config) -> RunManifest:
    train_config = resolve_train_config(args, config)
    data = load_dataset(args.data or config.DATA_DIR, config.SNIPPET_RATE)
    test = load_dataset(args.test, config.SNIPPET_RATE) if args.test else None
    out = Path(args.out or "crossval")
    manifest = RunManifest("crossval", {"data": str(args.data), "test": args.test, "k": args.k,
                                        "train": train_config.to_dict()}, train_config.seed)

    report, checkpoints = run_cross_validation(data, train_config, args.k, test)
    for ckpt in checkpoints:
        save_checkpoint(manifest.add(out / f"fold_{ckpt.fold_index}.gebc"), ckpt)
    write_json_atomic(manifest.add(out / "crossval.json"), report.to_dict())
    logger.info(f"Mean held-out F1 over {args.k} folds: {report.mean_val_f1:.4f}")
    manifest.finish(out / MANIFEST_NAME)
    return manifest


def cmd_ablate(args, config) -> RunManifest:
    train_config = resolve_train_config(args, config)
    variants = [parse_variant(v) for v in args.variants.split(",")]
    seeds = parse_int_list(args.seeds, "--seeds")
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    if not 0 <= args.fold < args.k:
        raise UsageError(f"--fold must satisfy 0 <= fold < k={args.k}, got {args.fold}")
    data = load_dataset(args.data or config.DATA_DIR, config.SNIPPET_RATE)
    out = Path(args.out or "ablation")
    manifest = RunManifest("ablate", {"data": str(args.data), "variants": [v.value for v in variants],
                                      "seeds": seeds, "k": args.k, "fold": args.fold,
                                      "train": train_config.to_dict()}, None)

    report = run_ablation(data, train_config, variants, seeds, args.k, args.fold)
    print(report.format_table())
    write_json_atomic(manifest.add(out / "ablation.json"), report.to_dict())
    manifest.finish(out / MANIFEST_NAME)
    return manifest


def render_video(ckpt, seq, annotation, local_range: int) -> dict:
    """TSM grid plus one ternary mask image and text per boundary class."""
    model = ckpt.build_model()
    with torch.no_grad():
        dtype = next(model.parameters()).dtype
        bank = model.encoder.encode(torch.as_tensor(seq.features, dtype=dtype))
        tsm = stack_tsm(bank).tsm.cpu().numpy()
    labels = snippetize_labels(annotation, seq.length, seq.snippet_rate)
    masks = class_masks(labels, local_range)
    return {"tsm": tsm_grid_image(tsm), "masks": masks}


def cmd_render(args, config) -> RunManifest:
    ckpt = load_checkpoint(args.ckpt)
    data = load_dataset(args.data or config.DATA_DIR, config.SNIPPET_RATE)
    video_id = args.video or data.video_ids[0]
    if video_id not in data.features:
        raise InputError(f"Unknown video id: {video_id}")
    local_range = args.local_range or ckpt.train_config.local_range
    out = Path(args.out or "render")
    manifest = RunManifest("render", {"ckpt": str(args.ckpt), "video": video_id, "local_range": local_range}, None)

    rendered = render_video(ckpt, data.features[video_id], data.annotations[video_id], local_range)
    save_image(rendered["tsm"], manifest.add(out / f"{video_id}_tsm.png"))
    for boundary_class in BOUNDARY_CLASSES:
        mask = rendered["masks"][boundary_class]
        save_image(mask_image(mask), manifest.add(out / f"{video_id}_mask_{boundary_class.value}.png"))
        text_path = manifest.add(out / f"{video_id}_mask_{boundary_class.value}.txt")
        text_path.write_text(mask.render() + "\n", encoding="utf-8")
    manifest.finish(out / MANIFEST_NAME)
    return manifest


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "ablate": cmd_ablate,
    "render": cmd_render,
}


def set_threads(num_threads: int):
    if num_threads > 0:
        torch.set_num_threads(num_threads)
        logger.debug(f"torch using {num_threads} threads")

