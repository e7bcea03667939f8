import numpy as np
import pytest

from gebd.datamodel import BoundaryClass, snippetize_labels
from gebd.errors import ConfigurationError
from gebd.synthetic import SynthConfig, generate_synthetic_dataset


def test_three_segments_give_two_whole_boundaries():
    config = SynthConfig(min_segments=3, max_segments=3)
    features, annotations = generate_synthetic_dataset(1, seed=0, config=config)
    assert len(features) == len(annotations) == 1
    assert len(annotations[0].whole_boundaries) == 2


def test_same_seed_is_bitwise_identical():
    a_feat, a_ann = generate_synthetic_dataset(3, seed=7)
    b_feat, b_ann = generate_synthetic_dataset(3, seed=7)
    for x, y in zip(a_feat, b_feat):
        assert x.video_id == y.video_id
        assert x.features.tobytes() == y.features.tobytes()
    assert a_ann == b_ann


def test_different_seeds_differ():
    a, _ = generate_synthetic_dataset(1, seed=1)
    b, _ = generate_synthetic_dataset(1, seed=2)
    assert a[0].features.shape != b[0].features.shape or not np.array_equal(a[0].features, b[0].features)


def test_noiseless_two_segments_change_only_at_boundary():
    config = SynthConfig(min_segments=2, max_segments=2, noise=0.0)
    features, annotations = generate_synthetic_dataset(1, seed=5, config=config)
    f = features[0].features
    diffs = np.linalg.norm(np.diff(f, axis=0), axis=1)
    changed = np.flatnonzero(diffs > 0)
    assert len(changed) == 1
    boundary = snippetize_labels(annotations[0], features[0].length, config.snippet_rate).indices(BoundaryClass.WHOLE)
    assert boundary == [changed[0] + 1]


def test_generated_shapes_respect_config():
    config = SynthConfig(length_min=20, length_max=30, feature_dim=16)
    features, annotations = generate_synthetic_dataset(10, seed=3, config=config)
    for seq, ann in zip(features, annotations):
        assert 20 <= seq.length <= 30
        assert seq.dim == 16
        assert seq.features.dtype == np.float32
        assert ann.duration == pytest.approx(seq.length / config.snippet_rate)
        assert sorted(ann.whole_boundaries) == sorted(ann.action_boundaries + ann.shot_boundaries)


def test_shot_probability_extremes():
    _, only_action = generate_synthetic_dataset(5, seed=0, config=SynthConfig(shot_probability=0.0))
    _, only_shot = generate_synthetic_dataset(5, seed=0, config=SynthConfig(shot_probability=1.0))
    assert all(not a.shot_boundaries for a in only_action)
    assert all(not a.action_boundaries for a in only_shot)


@pytest.mark.parametrize("overrides", [
    {"length_min": 50, "length_max": 40},
    {"min_segments": 1},
    {"length_min": 8, "min_segment_length": 5},
    {"noise": -1.0},
    {"shot_probability": 1.5},
])
def test_invalid_config(overrides):
    with pytest.raises(ConfigurationError):
        generate_synthetic_dataset(1, seed=0, config=SynthConfig(**overrides))


def test_zero_videos_rejected():
    with pytest.raises(ConfigurationError):
        generate_synthetic_dataset(0, seed=0)


def test_config_dict_round_trip():
    config = SynthConfig(noise=0.5, feature_dim=12)
    assert SynthConfig.from_dict(config.to_dict()) == config
