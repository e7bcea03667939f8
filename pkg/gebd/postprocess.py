from dataclasses import dataclass, field, asdict
from typing import Dict, List, Mapping, Sequence, Tuple, Union
import logging

import numpy as np

from .datamodel import BOUNDARY_CLASSES, BoundaryAnnotation, BoundaryClass
from .errors import ConfigurationError, InputError

logger = logging.getLogger('gebd.postprocess')

DEFAULT_REL = 0.05
DEFAULT_THRESHOLD = 0.3


@dataclass
class PeakConfig:
    K: int = 1
    threshold: float = DEFAULT_THRESHOLD

    def validate(self):
        if self.K < 1:
            raise ConfigurationError(f"Peak neighbour span K must be >= 1, got {self.K}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError(f"Peak threshold must lie in [0, 1], got {self.threshold}")
        return self


def estimate_peaks(p: Sequence[float], cfg: PeakConfig = None) -> List[int]:
    """Indices t with p[t] >= threshold and p[t] strictly above every existing neighbour within K.

    Plateaus produce no peak; neighbours past either end impose no constraint.
    """
    cfg = cfg or PeakConfig()
    p = np.asarray(p, dtype=np.float64)
    keep = p >= cfg.threshold
    for k in range(1, cfg.K + 1):
        if k >= len(p):
            break
        keep[k:] &= p[k:] > p[:-k]
        keep[:-k] &= p[:-k] > p[k:]
    return [int(t) for t in np.flatnonzero(keep)]


def indices_to_timestamps(indices: Sequence[int], snippet_rate: float) -> List[float]:
    if not snippet_rate > 0:
        raise InputError(f"snippet_rate must be positive, got {snippet_rate}")
    return sorted(int(i) / snippet_rate for i in indices)


def probabilities_to_timestamps(probs: np.ndarray, snippet_rate: float,
                                cfg: PeakConfig = None) -> Dict[BoundaryClass, List[float]]:
    """Peak-estimate each row of a 3×L probability array and convert to seconds."""
    return {
        c: indices_to_timestamps(estimate_peaks(probs[i], cfg), snippet_rate)
        for i, c in enumerate(BOUNDARY_CLASSES)
    }


def match_boundaries(pred: Sequence[float], gt: Sequence[float], tolerance: float) -> List[Tuple[int, int]]:
    """Greedy one-to-one matching in ground-truth time order.

    Each ground-truth boundary takes the nearest unmatched prediction within the
    tolerance; ties go to the earlier prediction. Returns (gt_index, pred_index) pairs.
    """
    used = set()
    pairs = []
    for gi, g in enumerate(gt):
        best, best_dist = None, None
        for pi, q in enumerate(pred):
            if pi in used:
                continue
            dist = abs(q - g)
            if dist <= tolerance and (best_dist is None or dist < best_dist):
                best, best_dist = pi, dist
        if best is not None:
            used.add(best)
            pairs.append((gi, best))
    return pairs


def f1_at_rel_dis(pred: Sequence[float], gt: Sequence[float], duration: float,
                  rel: float = DEFAULT_REL) -> Tuple[float, float, float]:
    """Precision, recall and F1 at tolerance rel * duration."""
    if not duration > 0 or not rel > 0:
        raise InputError(f"duration and rel must be positive, got {duration}, {rel}")
    pred, gt = sorted(pred), sorted(gt)
    if not pred and not gt:
        return 1.0, 1.0, 1.0
    matches = len(match_boundaries(pred, gt, rel * duration))
    precision = matches / len(pred) if pred else 0.0
    recall = matches / len(gt) if gt else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass
class VideoScore:
    precision: float
    recall: float
    f1: float
    num_predictions: int
    num_ground_truth: int


@dataclass
class EvalReport:
    boundary_class: str
    rels: List[float]
    per_video: Dict[str, Dict[float, VideoScore]] = field(default_factory=dict)

    def mean(self, rel: float, metric: str = "f1") -> float:
        scores = [getattr(v[rel], metric) for v in self.per_video.values()]
        return float(np.mean(scores)) if scores else 0.0

    @property
    def f1(self) -> float:
        """Dataset F1 at the first rel."""
        return self.mean(self.rels[0])

    def to_dict(self) -> dict:
        """JSON-ready dict with a stable key order."""
        return {
            "class": self.boundary_class,
            "rels": list(self.rels),
            "num_videos": len(self.per_video),
            "num_predictions": sum(v[self.rels[0]].num_predictions for v in self.per_video.values()),
            "num_ground_truth": sum(v[self.rels[0]].num_ground_truth for v in self.per_video.values()),
            "mean": {
                f"{rel:g}": {m: self.mean(rel, m) for m in ("precision", "recall", "f1")}
                for rel in self.rels
            },
            "per_video": {
                vid: {f"{rel:g}": asdict(self.per_video[vid][rel]) for rel in self.rels}
                for vid in sorted(self.per_video)
            },
        }

    def format_table(self) -> str:
        header = f"{'video_id':<24}" + "".join(f"{'F1@' + format(rel, 'g'):>10}" for rel in self.rels)
        lines = [f"class: {self.boundary_class}", header, "-" * len(header)]
        for vid in sorted(self.per_video):
            lines.append(f"{vid:<24}" + "".join(f"{self.per_video[vid][rel].f1:>10.3f}" for rel in self.rels))
        lines.append("-" * len(header))
        lines.append(f"{'mean':<24}" + "".join(f"{self.mean(rel):>10.3f}" for rel in self.rels))
        return "\n".join(lines)


PredictionTable = Mapping[str, Union[Sequence[float], Mapping[BoundaryClass, Sequence[float]]]]


def evaluate_dataset(predictions: PredictionTable, annotations: Mapping[str, BoundaryAnnotation],
                     rels: Sequence[float] = (DEFAULT_REL,),
                     boundary_class: BoundaryClass = BoundaryClass.WHOLE) -> EvalReport:
    """Per-video and unweighted dataset-mean scores for one boundary class.

    Every annotated video is scored; one with no entry in `predictions` counts
    as an empty prediction.
    """
    boundary_class = BoundaryClass(boundary_class)
    rels = [float(r) for r in rels]
    if not rels:
        raise InputError("Need at least one rel threshold")
    unknown = [v for v in predictions if v not in annotations]
    if unknown:
        raise InputError(f"No annotation for video {unknown[0]}")
    missing = [v for v in annotations if v not in predictions]
    if missing:
        logger.warning(f"{len(missing)} annotated videos have no predictions and score as empty "
                       f"(first: {missing[0]})")
    report = EvalReport(boundary_class.value, rels)
    for video_id in list(predictions) + missing:
        pred = predictions.get(video_id, [])
        ann = annotations[video_id]
        timestamps = pred.get(boundary_class, []) if isinstance(pred, Mapping) else pred
        gt = ann.boundaries(boundary_class)
        report.per_video[video_id] = {}
        for rel in rels:
            p, r, f1 = f1_at_rel_dis(timestamps, gt, ann.duration, rel)
            report.per_video[video_id][rel] = VideoScore(p, r, f1, len(timestamps), len(gt))
    return report
