"""Cross-validation, fold ensembling and ablation runs over a VideoDataset."""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np

from .datamodel import BoundaryClass, VideoDataset, make_folds
from .model import ModelVariant
from .postprocess import DEFAULT_REL, PeakConfig
from .trainer import (
    Checkpoint,
    TrainConfig,
    ensemble_average,
    predict_probabilities,
    score_probabilities,
    train_fold,
)

logger = logging.getLogger('gebd.experiments')


def ensemble_threshold(checkpoints: Sequence[Checkpoint]) -> float:
    """Peak threshold for averaged predictions: the mean of the members' thresholds."""
    return float(np.mean([c.threshold for c in checkpoints]))


def ensemble_probabilities(checkpoints: Sequence[Checkpoint], dataset: VideoDataset) -> Dict[str, np.ndarray]:
    return {
        vid: ensemble_average([predict_probabilities(c, dataset.features[vid]) for c in checkpoints])
        for vid in dataset.video_ids
    }


def evaluate_checkpoint(ckpt: Checkpoint, dataset: VideoDataset, rel: float = DEFAULT_REL,
                        boundary_class: BoundaryClass = BoundaryClass.WHOLE) -> float:
    probs = {vid: predict_probabilities(ckpt, dataset.features[vid]) for vid in dataset.video_ids}
    peak = PeakConfig(ckpt.train_config.peak_k, ckpt.threshold)
    return score_probabilities(probs, dataset, peak, rel, boundary_class)


@dataclass
class CrossValReport:
    fold_val_f1: List[float] = field(default_factory=list)
    test_fold_f1: List[float] = field(default_factory=list)
    test_ensemble_f1: Optional[float] = None

    @property
    def mean_val_f1(self) -> float:
        return float(np.mean(self.fold_val_f1))

    @property
    def mean_test_fold_f1(self) -> Optional[float]:
        return float(np.mean(self.test_fold_f1)) if self.test_fold_f1 else None

    def to_dict(self) -> dict:
        return {
            "fold_val_f1": self.fold_val_f1,
            "mean_val_f1": self.mean_val_f1,
            "test_fold_f1": self.test_fold_f1,
            "mean_test_fold_f1": self.mean_test_fold_f1,
            "test_ensemble_f1": self.test_ensemble_f1,
        }


def run_cross_validation(dataset: VideoDataset, config: TrainConfig, k: int = 5,
                         test: Optional[VideoDataset] = None):
    """Train every fold; score each on its held-out fold and, if given, on a test set alone and averaged."""
    report = CrossValReport()
    checkpoints = []
    for split in make_folds(dataset.video_ids, k, config.seed):
        ckpt = train_fold(split, dataset, config)
        checkpoints.append(ckpt)
        report.fold_val_f1.append(evaluate_checkpoint(ckpt, dataset.subset(split.val_ids)))
        logger.info(f"Fold {split.fold_index}: held-out F1 {report.fold_val_f1[-1]:.4f}")

    if test is not None:
        report.test_fold_f1 = [evaluate_checkpoint(c, test) for c in checkpoints]
        probs = ensemble_probabilities(checkpoints, test)
        peak = PeakConfig(config.peak_k, ensemble_threshold(checkpoints))
        report.test_ensemble_f1 = score_probabilities(probs, test, peak)
        logger.info(
            f"Test F1: single-fold mean {report.mean_test_fold_f1:.4f}, ensemble {report.test_ensemble_f1:.4f}"
        )
    return report, checkpoints


@dataclass
class AblationReport:
    f1: Dict[str, Dict[int, float]] = field(default_factory=dict)

    def median(self, variant: ModelVariant) -> float:
        return float(np.median(list(self.f1[ModelVariant(variant).value].values())))

    def to_dict(self) -> dict:
        return {
            "f1": {v: {str(s): f for s, f in seeds.items()} for v, seeds in self.f1.items()},
            "median": {v: self.median(v) for v in self.f1},
        }

    def format_table(self) -> str:
        seeds = sorted({s for per_seed in self.f1.values() for s in per_seed})
        header = f"{'variant':<12}" + "".join(f"{'seed ' + str(s):>10}" for s in seeds) + f"{'median':>10}"
        lines = [header, "-" * len(header)]
        for variant, per_seed in self.f1.items():
            cells = "".join(f"{per_seed[s]:>10.3f}" for s in seeds)
            lines.append(f"{variant:<12}{cells}{self.median(variant):>10.3f}")
        return "\n".join(lines)


def run_ablation(dataset: VideoDataset, config: TrainConfig,
                 variants: Sequence[ModelVariant] = tuple(ModelVariant),
                 seeds: Sequence[int] = (0, 1, 2), k: int = 5, fold: int = 0) -> AblationReport:
    """Train each variant on one fold per seed and score it on that fold's held-out videos."""
    report = AblationReport()
    for variant in variants:
        variant = ModelVariant(variant)
        report.f1[variant.value] = {}
        for seed in seeds:
            split = make_folds(dataset.video_ids, k, seed)[fold]
            run_config = replace(config, variant=variant.value, seed=seed)
            ckpt = train_fold(split, dataset, run_config)
            f1 = evaluate_checkpoint(ckpt, dataset.subset(split.val_ids))
            report.f1[variant.value][seed] = f1
            logger.info(f"Ablation {variant.value} seed {seed}: F1 {f1:.4f}")
    return report
