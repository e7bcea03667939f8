import numpy as np
import pytest
import torch

from gebd.datamodel import VideoDataset
from gebd.encoder import EncoderConfig
from gebd.heads import DecoderConfig
from gebd.model import ModelConfig
from gebd.synthetic import SynthConfig, generate_synthetic_dataset
from gebd.trainer import TrainConfig

TINY_ENCODER = {"d_enc": 8, "transformer_layers": 1, "transformer_heads": 2}
TINY_DECODER = {
    "c_decoder": 8,
    "stage_widths": [8, 8, 8, 8],
    "classifier_hidden": 8,
    "direct_layers": 1,
    "direct_heads": 4,
    "simsiam_hidden": 8,
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_synth_config():
    return SynthConfig(length_min=12, length_max=16, feature_dim=8, noise=0.3)


@pytest.fixture
def tiny_dataset(tiny_synth_config):
    features, annotations = generate_synthetic_dataset(6, seed=0, config=tiny_synth_config)
    return VideoDataset.from_lists(features, annotations)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(epochs=2, encoder=dict(TINY_ENCODER), decoder=dict(TINY_DECODER))


@pytest.fixture
def tiny_model_config():
    def make(in_dim=6, variant="combined", stop_gradient=True):
        return ModelConfig(
            in_dim=in_dim,
            variant=variant,
            stop_gradient=stop_gradient,
            encoder=EncoderConfig(**TINY_ENCODER),
            decoder=DecoderConfig(**TINY_DECODER),
        )
    return make


@pytest.fixture(autouse=True)
def _single_thread():
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(threads)
