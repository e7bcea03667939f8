from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional, Sequence
import copy
import logging

import numpy as np
import torch
from tqdm import tqdm

from .datamodel import (
    BoundaryClass,
    DatasetSplit,
    FeatureSequence,
    VideoDataset,
    snippetize_labels,
)
from .encoder import EncoderConfig
from .errors import ConfigurationError, InputError, ShapeError, TrainingError
from .heads import DecoderConfig, LossWeights, PassPredictions
from .model import GEBDModel, ModelConfig, ModelVariant, parse_variant
from .postprocess import (
    DEFAULT_REL,
    DEFAULT_THRESHOLD,
    PeakConfig,
    evaluate_dataset,
    probabilities_to_timestamps,
)
from .similarity import class_masks

logger = logging.getLogger('gebd.trainer')

THRESHOLD_GRID = [round(0.05 * i, 2) for i in range(1, 20)]


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    local_range: int = 4
    w_action: float = 1.0
    w_shot: float = 1.0
    w_whole: float = 1.0
    lambda_contra: float = 1.0
    videos_per_step: int = 1
    max_grad_norm: float = 1.0
    eval_rels: List[float] = field(default_factory=lambda: [DEFAULT_REL])
    patience: int = 6
    peak_k: int = 1
    threshold: float = DEFAULT_THRESHOLD
    tune_threshold: bool = True
    variant: str = ModelVariant.COMBINED.value
    stop_gradient: bool = True
    aux_pass_bce: bool = False
    label_smoothing: int = 0
    encoder: Dict = field(default_factory=lambda: EncoderConfig().to_dict())
    decoder: Dict = field(default_factory=lambda: DecoderConfig().to_dict())

    def validate(self):
        if self.epochs < 1 or self.videos_per_step < 1 or self.patience < 1:
            raise ConfigurationError("epochs, videos_per_step and patience must be positive")
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate must be positive and weight_decay non-negative")
        if self.local_range < 1:
            raise ConfigurationError(f"local_range must be >= 1, got {self.local_range}")
        if not self.eval_rels or any(r <= 0 for r in self.eval_rels):
            raise ConfigurationError(f"eval_rels must be positive, got {self.eval_rels}")
        if self.max_grad_norm < 0:
            raise ConfigurationError(f"max_grad_norm must be >= 0, got {self.max_grad_norm}")
        if self.label_smoothing < 0:
            raise ConfigurationError("label_smoothing must be >= 0")
        parse_variant(self.variant)
        self.loss_weights.validate()
        self.peak_config.validate()
        self.model_config(1).validate()
        return self

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_action, self.w_shot, self.w_whole, self.lambda_contra)

    @property
    def peak_config(self) -> PeakConfig:
        return PeakConfig(self.peak_k, self.threshold)

    def model_config(self, in_dim: int) -> ModelConfig:
        encoder = EncoderConfig.from_dict({**self.encoder, "seed": self.seed})
        return ModelConfig(in_dim, self.variant, self.stop_gradient, encoder, DecoderConfig.from_dict(self.decoder))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown training config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to rebuild and audit the model."""
    model_config: ModelConfig
    train_config: TrainConfig
    fold_index: int
    state: Dict[str, torch.Tensor]
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0
    tuned_threshold: Optional[float] = None

    def __post_init__(self):
        self._model: Optional[GEBDModel] = None

    @property
    def in_dim(self) -> int:
        return self.model_config.in_dim

    @property
    def threshold(self) -> float:
        return self.tuned_threshold if self.tuned_threshold is not None else self.train_config.threshold

    def build_model(self) -> GEBDModel:
        """Rebuild the network in eval mode; cached per checkpoint."""
        if self._model is None:
            model = GEBDModel(self.model_config, seed=self.train_config.seed)
            reference = model.state_dict()
            model.load_state_dict({k: v.to(reference[k].dtype) for k, v in self.state.items()})
            model.eval()
            self._model = model
        return self._model


@dataclass
class PreparedVideo:
    features: torch.Tensor
    labels: torch.Tensor
    masks: dict


def prepare_video(seq: FeatureSequence, dataset: VideoDataset, config: TrainConfig) -> PreparedVideo:
    labels = snippetize_labels(dataset.annotations[seq.video_id], seq.length, seq.snippet_rate,
                               config.label_smoothing)
    hard = snippetize_labels(dataset.annotations[seq.video_id], seq.length, seq.snippet_rate)
    return PreparedVideo(
        features=torch.as_tensor(seq.features, dtype=torch.float32),
        labels=torch.as_tensor(labels.as_array(), dtype=torch.float32),
        masks=class_masks(hard, config.local_range),
    )


def model_probabilities(model: GEBDModel, seq: FeatureSequence) -> np.ndarray:
    """3×L final probabilities without touching parameters."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dtype = next(model.parameters()).dtype
            result = model(torch.as_tensor(seq.features, dtype=dtype))
        return result.preds.p_final.cpu().numpy().astype(np.float64)
    finally:
        model.train(was_training)


def score_probabilities(probs: Dict[str, np.ndarray], dataset: VideoDataset, peak: PeakConfig,
                        rel: float = DEFAULT_REL, boundary_class: BoundaryClass = BoundaryClass.WHOLE) -> float:
    """Dataset-mean F1 after peak estimation."""
    predictions = {
        vid: probabilities_to_timestamps(p, dataset.features[vid].snippet_rate, peak)
        for vid, p in probs.items()
    }
    return evaluate_dataset(predictions, dataset.annotations, [rel], boundary_class).f1


def tune_threshold(probs: Dict[str, np.ndarray], dataset: VideoDataset, peak_k: int,
                   rel: float = DEFAULT_REL, grid: Sequence[float] = THRESHOLD_GRID) -> float:
    """Threshold with the best validation whole-class F1; the lowest wins ties."""
    best_t, best_f1 = grid[0], -1.0
    for t in grid:
        f1 = score_probabilities(probs, dataset, PeakConfig(peak_k, t), rel)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    logger.info(f"Tuned peak threshold: {best_t} (val F1 {best_f1:.4f})")
    return best_t


def train_fold(split: DatasetSplit, data: VideoDataset, config: TrainConfig) -> Checkpoint:
    """Train one fold and return the epoch with the best validation F1."""
    config.validate()
    if not split.train_ids:
        raise ConfigurationError(f"Fold {split.fold_index} has an empty training split")
    train = data.subset(split.train_ids)
    val = data.subset(split.val_ids) if split.val_ids else None
    if val is None:
        logger.warning(f"Fold {split.fold_index} has no validation videos; selecting on training F1")
        val = train

    model_config = config.model_config(train.feature_dim)
    model = GEBDModel(model_config, seed=config.seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    weights = config.loss_weights
    prepared = {vid: prepare_video(train.features[vid], train, config) for vid in split.train_ids}

    history: List[dict] = []
    best_f1, best_epoch, best_state = -1.0, 0, None
    stale = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(split.train_ids))
        losses, contra, skipped = [], [], 0
        optimizer.zero_grad()
        for n, idx in enumerate(tqdm(order, desc=f"fold {split.fold_index} epoch {epoch}", leave=False, disable=None)):
            video = prepared[split.train_ids[idx]]
            result = model(video.features)
            parts = model.loss(result, video.labels, video.masks, weights, config.aux_pass_bce)
            if not torch.isfinite(parts.total):
                raise TrainingError(f"Non-finite loss on video {split.train_ids[idx]}", step=step)
            (parts.total / config.videos_per_step).backward()
            total, contrastive = parts.total.detach().item(), parts.contrastive.detach().item()
            if (n + 1) % config.videos_per_step == 0 or n + 1 == len(order):
                if config.max_grad_norm > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
                optimizer.step()
                optimizer.zero_grad()
                step += 1
                logger.debug(f"step {step}: loss {total:.4f} contra {contrastive:.4f}")
            losses.append(total)
            contra.append(contrastive)
            skipped += parts.contrastive_skipped

        probs = {vid: model_probabilities(model, val.features[vid]) for vid in val.video_ids}
        val_f1 = score_probabilities(probs, val, config.peak_config, config.eval_rels[0])
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "contrastive": float(np.mean(contra)),
            "contrastive_skipped": int(skipped),
            "val_f1": val_f1,
        }
        history.append(record)
        logger.info(
            f"fold {split.fold_index} epoch {epoch}/{config.epochs}: "
            f"loss {record['train_loss']:.4f} contra {record['contrastive']:.4f} val F1 {val_f1:.4f}"
        )
        if skipped:
            logger.warning(f"Contrastive term skipped on {skipped} videos in epoch {epoch}")

        if val_f1 > best_f1:
            best_f1, best_epoch = val_f1, epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Early stopping after epoch {epoch} (best epoch {best_epoch})")
                break

    model.load_state_dict(best_state)
    tuned = None
    if config.tune_threshold:
        probs = {vid: model_probabilities(model, val.features[vid]) for vid in val.video_ids}
        tuned = tune_threshold(probs, val, config.peak_k, config.eval_rels[0])

    return Checkpoint(
        model_config=model_config,
        train_config=config,
        fold_index=split.fold_index,
        state={k: v.detach().clone() for k, v in best_state.items()},
        history=history,
        best_epoch=best_epoch,
        best_val_f1=best_f1,
        tuned_threshold=tuned,
    )


def predict(ckpt: Checkpoint, features: FeatureSequence) -> PassPredictions:
    """Full forward pass in eval mode; parameters are left untouched."""
    if features.dim != ckpt.in_dim:
        raise ShapeError(f"{features.video_id}: feature dim {features.dim} but checkpoint expects {ckpt.in_dim}")
    model = ckpt.build_model()
    with torch.no_grad():
        dtype = next(model.parameters()).dtype
        result = model(torch.as_tensor(features.features, dtype=dtype))
    return result.preds


def predict_probabilities(ckpt: Checkpoint, features: FeatureSequence) -> np.ndarray:
    return predict(ckpt, features).p_final.cpu().numpy().astype(np.float64)


def ensemble_average(predictions: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of same-shaped 3×L probability arrays."""
    if not predictions:
        raise InputError("Cannot average an empty list of predictions")
    arrays = [np.asarray(p, dtype=np.float64) for p in predictions]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise InputError(f"Prediction shapes differ: {sorted(shapes)}")
    return np.clip(np.mean(arrays, axis=0), 0.0, 1.0)
