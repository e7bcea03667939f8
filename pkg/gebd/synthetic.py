from dataclasses import dataclass, asdict
from typing import List, Tuple
import logging

import numpy as np

from .datamodel import BoundaryAnnotation, FeatureSequence
from .errors import ConfigurationError

logger = logging.getLogger('gebd.synthetic')


@dataclass
class SynthConfig:
    """Ranges for the piecewise-stationary generator."""
    length_min: int = 40
    length_max: int = 80
    feature_dim: int = 64
    min_segments: int = 2
    max_segments: int = 6
    min_segment_length: int = 5
    noise: float = 1.0
    action_shift: float = 0.8
    shot_shift: float = 2.0
    shot_probability: float = 0.3
    snippet_rate: float = 2.0

    def validate(self):
        if self.length_min < 2 or self.length_max < self.length_min:
            raise ConfigurationError(f"Invalid length range [{self.length_min}, {self.length_max}]")
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.min_segments < 2 or self.max_segments < self.min_segments:
            raise ConfigurationError(f"Invalid segment range [{self.min_segments}, {self.max_segments}]")
        if self.min_segment_length < 1:
            raise ConfigurationError("min_segment_length must be >= 1")
        if self.length_min < 2 * self.min_segment_length:
            raise ConfigurationError(
                f"length_min={self.length_min} cannot hold two segments of {self.min_segment_length}"
            )
        if self.noise < 0 or self.action_shift <= 0 or self.shot_shift <= 0:
            raise ConfigurationError("noise must be >= 0 and shift magnitudes > 0")
        if not 0 <= self.shot_probability <= 1:
            raise ConfigurationError("shot_probability must lie in [0, 1]")
        if not self.snippet_rate > 0:
            raise ConfigurationError("snippet_rate must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'SynthConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _segment_starts(rng: np.random.Generator, length: int, num_segments: int, min_len: int) -> np.ndarray:
    """Start indices of segments 2..S; every segment keeps at least `min_len` snippets."""
    slack = length - num_segments * min_len
    extra = rng.multinomial(slack, np.full(num_segments, 1.0 / num_segments))
    lengths = min_len + extra
    return np.cumsum(lengths)[:-1]


def generate_video(rng: np.random.Generator, video_id: str,
                   config: SynthConfig) -> Tuple[FeatureSequence, BoundaryAnnotation]:
    length = int(rng.integers(config.length_min, config.length_max + 1))
    num_segments = int(rng.integers(config.min_segments, config.max_segments + 1))
    num_segments = max(2, min(num_segments, length // config.min_segment_length))
    starts = _segment_starts(rng, length, num_segments, config.min_segment_length)

    dim = config.feature_dim
    mean = config.shot_shift * rng.standard_normal(dim)
    means = np.empty((length, dim))
    action, shot = [], []
    cursor = 0
    for start in list(starts) + [length]:
        means[cursor:start] = mean
        if start == length:
            break
        t = start / config.snippet_rate
        if rng.random() < config.shot_probability:
            # cut: fresh direction at full scale
            mean = config.shot_shift * rng.standard_normal(dim)
            shot.append(t)
        else:
            mean = mean + config.action_shift * rng.standard_normal(dim)
            action.append(t)
        cursor = start

    features = means + config.noise * rng.standard_normal((length, dim))
    duration = length / config.snippet_rate
    seq = FeatureSequence(video_id, config.snippet_rate, duration, features.astype(np.float32))
    ann = BoundaryAnnotation.from_classes(video_id, duration, action, shot, config.snippet_rate)
    return seq, ann


def generate_synthetic_dataset(num_videos: int, seed: int,
                               config: SynthConfig = None) -> Tuple[List[FeatureSequence], List[BoundaryAnnotation]]:
    """Generate piecewise-stationary feature sequences with exact boundary annotations."""
    config = (config or SynthConfig()).validate()
    if num_videos < 1:
        raise ConfigurationError(f"num_videos must be >= 1, got {num_videos}")

    rng = np.random.default_rng(seed)
    features, annotations = [], []
    for i in range(num_videos):
        seq, ann = generate_video(rng, f"synth_{seed}_{i:04d}", config)
        features.append(seq)
        annotations.append(ann)
    logger.info(f"Generated {num_videos} synthetic videos (seed={seed})")
    return features, annotations
