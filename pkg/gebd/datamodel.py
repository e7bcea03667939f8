from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence
import logging

import numpy as np
from sklearn.model_selection import KFold

from .errors import ConfigurationError, InputError

logger = logging.getLogger('gebd.datamodel')


class BoundaryClass(str, Enum):
    """Boundary classes, in the fixed order used by every 3×L array in the package."""
    ACTION = "action"
    SHOT = "shot"
    WHOLE = "whole"


BOUNDARY_CLASSES: List[BoundaryClass] = [BoundaryClass.ACTION, BoundaryClass.SHOT, BoundaryClass.WHOLE]


def parse_boundary_class(value: str) -> BoundaryClass:
    try:
        return BoundaryClass(str(value).lower())
    except ValueError:
        raise ConfigurationError(
            f"Unknown boundary class '{value}', expected one of {[c.value for c in BOUNDARY_CLASSES]}"
        )


@dataclass
class FeatureSequence:
    """Snippet features of one video, L snippets × D dims."""
    video_id: str
    snippet_rate: float
    duration: float
    features: np.ndarray

    def __post_init__(self):
        # stored as float32, the precision of the on-disk payload; overflow shows up as inf below
        with np.errstate(over="ignore"):
            self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise InputError(f"{self.video_id}: features must be a 2-D matrix, got shape {self.features.shape}")
        length, dim = self.features.shape
        if length < 2 or dim < 1:
            raise InputError(f"{self.video_id}: need L >= 2 and D >= 1, got {length}x{dim}")
        if not self.snippet_rate > 0 or not self.duration > 0:
            raise InputError(f"{self.video_id}: snippet_rate and duration must be positive")
        if not np.all(np.isfinite(self.features)):
            raise InputError(f"{self.video_id}: features contain non-finite values")
        expected = round(self.duration * self.snippet_rate)
        if abs(length - expected) > 1:
            raise InputError(
                f"{self.video_id}: L={length} does not match duration*snippet_rate={expected}"
            )

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def merge_boundaries(action: Sequence[float], shot: Sequence[float], tolerance: float) -> List[float]:
    """Sorted union of both classes; timestamps within `tolerance` of the last kept one are dropped."""
    merged: List[float] = []
    for t in sorted(list(action) + list(shot)):
        if merged and t - merged[-1] <= tolerance:
            continue
        merged.append(float(t))
    return merged


# one snippet period at the default rate of 2 snippets/s
DEFAULT_MERGE_TOLERANCE = 0.5


@dataclass
class BoundaryAnnotation:
    """Action and shot boundaries of one video; the whole class is always their merged union."""
    video_id: str
    duration: float
    action_boundaries: List[float]
    shot_boundaries: List[float]
    merge_tolerance: float = DEFAULT_MERGE_TOLERANCE
    whole_boundaries: List[float] = field(init=False)

    def __post_init__(self):
        self.action_boundaries = sorted(float(t) for t in self.action_boundaries)
        self.shot_boundaries = sorted(float(t) for t in self.shot_boundaries)
        for t in self.action_boundaries + self.shot_boundaries:
            if not 0 < t < self.duration:
                raise InputError(f"{self.video_id}: boundary {t} outside (0, {self.duration})")
        if not self.merge_tolerance >= 0:
            raise InputError(f"{self.video_id}: merge_tolerance must be >= 0, got {self.merge_tolerance}")
        self.whole_boundaries = merge_boundaries(self.action_boundaries, self.shot_boundaries, self.merge_tolerance)

    @classmethod
    def from_classes(cls, video_id: str, duration: float, action: Sequence[float],
                     shot: Sequence[float], snippet_rate: float) -> 'BoundaryAnnotation':
        """Annotation whose whole class merges boundaries less than one snippet apart."""
        if not snippet_rate > 0:
            raise InputError(f"snippet_rate must be positive, got {snippet_rate}")
        return cls(video_id, duration, list(action), list(shot), merge_tolerance=1.0 / snippet_rate)

    def boundaries(self, boundary_class: BoundaryClass) -> List[float]:
        return {
            BoundaryClass.ACTION: self.action_boundaries,
            BoundaryClass.SHOT: self.shot_boundaries,
            BoundaryClass.WHOLE: self.whole_boundaries,
        }[BoundaryClass(boundary_class)]


@dataclass
class LabelSeries:
    action: np.ndarray
    shot: np.ndarray
    whole: np.ndarray

    def __getitem__(self, boundary_class) -> np.ndarray:
        return getattr(self, BoundaryClass(boundary_class).value)

    def as_array(self) -> np.ndarray:
        """3×L array in BOUNDARY_CLASSES order."""
        return np.stack([self.action, self.shot, self.whole])

    def indices(self, boundary_class) -> List[int]:
        return [int(k) for k in np.flatnonzero(self[boundary_class] >= 1.0)]


def timestamp_to_index(t: float, length: int, snippet_rate: float) -> int:
    return int(min(max(round(t * snippet_rate), 0), length - 1))


def snippetize_labels(ann: BoundaryAnnotation, length: int, snippet_rate: float,
                      smoothing: int = 0) -> LabelSeries:
    """Map boundary timestamps to per-snippet 0/1 labels.

    Each timestamp goes to round(t * snippet_rate) clamped to [0, L-1]; colliding
    indices collapse to a single 1. With smoothing > 0, snippets within that
    distance of a boundary get a linearly decaying soft label.
    """
    if length < 2:
        raise InputError(f"L must be >= 2, got {length}")
    if not snippet_rate > 0:
        raise InputError(f"snippet_rate must be positive, got {snippet_rate}")

    series = {}
    for boundary_class in BOUNDARY_CLASSES:
        label = np.zeros(length, dtype=np.float32)
        hits = {timestamp_to_index(t, length, snippet_rate) for t in ann.boundaries(boundary_class)}
        for k in hits:
            label[k] = 1.0
            for d in range(1, smoothing + 1):
                soft = 1.0 - d / (smoothing + 1)
                for j in (k - d, k + d):
                    if 0 <= j < length:
                        label[j] = max(label[j], soft)
        series[boundary_class.value] = label
    return LabelSeries(**series)


@dataclass
class DatasetSplit:
    fold_index: int
    train_ids: List[str]
    val_ids: List[str]


def make_folds(video_ids: Sequence[str], k: int, seed: int) -> List[DatasetSplit]:
    """Shuffle ids by seed and cut them into k balanced groups; group g validates fold g."""
    ids = list(video_ids)
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise ConfigurationError(f"k={k} exceeds the number of videos ({len(ids)})")
    if len(set(ids)) != len(ids):
        raise ConfigurationError("Duplicate video ids in fold split")

    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    folds = []
    for fold_index, (train_idx, val_idx) in enumerate(splitter.split(np.arange(len(ids)))):
        folds.append(DatasetSplit(
            fold_index=fold_index,
            train_ids=[ids[i] for i in train_idx],
            val_ids=[ids[i] for i in val_idx],
        ))
    logger.debug(f"Built {k} folds over {len(ids)} videos")
    return folds


def select_fold(folds: List[DatasetSplit], fold: int) -> DatasetSplit:
    if not 0 <= fold < len(folds):
        raise ConfigurationError(f"Fold index {fold} out of range [0, {len(folds)})")
    return folds[fold]


def ids_to_dict(items) -> Dict[str, object]:
    """Index FeatureSequence or BoundaryAnnotation objects by video_id."""
    return {item.video_id: item for item in items}


@dataclass
class VideoDataset:
    """Features and annotations keyed by video_id."""
    features: Dict[str, FeatureSequence]
    annotations: Dict[str, BoundaryAnnotation]

    @property
    def video_ids(self) -> List[str]:
        return sorted(self.features)

    @property
    def feature_dim(self) -> int:
        return next(iter(self.features.values())).dim

    def subset(self, video_ids: Sequence[str]) -> 'VideoDataset':
        missing = [v for v in video_ids if v not in self.features or v not in self.annotations]
        if missing:
            raise InputError(f"Unknown video ids: {', '.join(missing[:5])}")
        return VideoDataset(
            {v: self.features[v] for v in video_ids},
            {v: self.annotations[v] for v in video_ids},
        )

    @classmethod
    def from_lists(cls, features: Sequence[FeatureSequence], annotations: Sequence[BoundaryAnnotation]) -> 'VideoDataset':
        return cls(ids_to_dict(features), ids_to_dict(annotations))
