"""Synthetic end-to-end quality checks. Minutes of CPU each; run with `pytest -m slow`."""
import statistics

import pytest

from gebd.datamodel import VideoDataset
from gebd.experiments import run_ablation, run_cross_validation
from gebd.synthetic import generate_synthetic_dataset
from gebd.trainer import TrainConfig

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def synthetic_200():
    return VideoDataset.from_lists(*generate_synthetic_dataset(200, seed=0))


def test_five_fold_held_out_f1(synthetic_200):
    report, _ = run_cross_validation(synthetic_200, TrainConfig(seed=0), k=5)
    assert report.mean_val_f1 >= 0.85


def test_ablation_ordering(synthetic_200):
    report = run_ablation(synthetic_200, TrainConfig(), ["direct", "tsm_no_cl", "tsm_cl", "combined"], SEEDS, k=5)
    assert report.median("tsm_cl") >= report.median("tsm_no_cl") + 0.02
    assert report.median("combined") >= max(report.median("direct"), report.median("tsm_cl")) - 0.01


def test_ensemble_beats_mean_fold(synthetic_200):
    test = VideoDataset.from_lists(*generate_synthetic_dataset(50, seed=1000))
    gains = []
    for seed in SEEDS:
        report, _ = run_cross_validation(synthetic_200, TrainConfig(seed=seed), k=5, test=test)
        gains.append(report.test_ensemble_f1 - report.mean_test_fold_f1)
    assert statistics.median(gains) >= 0.0
