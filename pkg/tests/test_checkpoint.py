import json
from dataclasses import replace

import numpy as np
import pytest

from gebd.checkpoint import (
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    metrics_path,
    save_checkpoint,
)
from gebd.datamodel import DatasetSplit
from gebd.errors import FormatError, InputError
from gebd.trainer import predict_probabilities, train_fold


@pytest.fixture
def trained(tiny_dataset, tiny_train_config):
    ids = tiny_dataset.video_ids
    return train_fold(DatasetSplit(2, ids[2:], ids[:2]), tiny_dataset, replace(tiny_train_config, epochs=2))


def test_save_load_preserves_predictions_bit_exactly(trained, tiny_dataset, tmp_path):
    path = save_checkpoint(tmp_path / "fold_2.gebc", trained)
    loaded = load_checkpoint(path)
    for vid in tiny_dataset.video_ids:
        seq = tiny_dataset.features[vid]
        assert np.array_equal(predict_probabilities(trained, seq), predict_probabilities(loaded, seq))


def test_save_load_preserves_metadata(trained, tmp_path):
    loaded = load_checkpoint(save_checkpoint(tmp_path / "c.gebc", trained))
    assert loaded.fold_index == 2
    assert loaded.model_config == trained.model_config
    assert loaded.train_config == trained.train_config
    assert loaded.history == trained.history
    assert loaded.best_epoch == trained.best_epoch
    assert loaded.tuned_threshold == trained.tuned_threshold
    assert loaded.threshold == trained.threshold


def test_encoding_is_deterministic(trained):
    assert encode_checkpoint(trained) == encode_checkpoint(trained)


def test_metrics_jsonl_mirrors_history(trained, tmp_path):
    path = save_checkpoint(tmp_path / "run" / "fold.gebc", trained)
    assert metrics_path(path).name == "fold.metrics.jsonl"
    lines = metrics_path(path).read_text().splitlines()
    assert len(lines) == len(trained.history)
    first = json.loads(lines[0])
    assert first["fold_index"] == 2
    assert first["epoch"] == 1


def test_bad_magic(trained):
    data = bytearray(encode_checkpoint(trained))
    data[:4] = b"NOPE"
    with pytest.raises(FormatError) as exc:
        decode_checkpoint(bytes(data))
    assert exc.value.offset == 0


def test_truncated_checkpoint(trained):
    data = encode_checkpoint(trained)
    with pytest.raises(FormatError, match="truncated"):
        decode_checkpoint(data[: len(data) - 3])


def test_trailing_bytes(trained):
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(encode_checkpoint(trained) + b"\0")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(InputError):
        load_checkpoint(tmp_path / "absent.gebc")
