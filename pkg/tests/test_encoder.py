import math

import pytest
import torch

from gebd.datamodel import BoundaryClass
from gebd.encoder import (
    UNBOUNDED,
    EncoderBank,
    EncoderConfig,
    ModuleKind,
    receptive_field,
)
from gebd.errors import ConfigurationError, ShapeError


def _stream_index(bank, boundary_class, kind):
    return bank.meta.index((boundary_class, kind))


def test_bank_shape_contract():
    bank = EncoderBank(64, EncoderConfig(d_enc=32))
    out = bank.encode(torch.randn(30, 64))
    assert len(out.streams) == 12
    assert all(s.shape == (30, 32) for s in out.streams)
    assert out.length == 30


def test_stream_order_is_class_major():
    meta = EncoderConfig().stream_meta()
    assert [c for c, _ in meta[:4]] == [BoundaryClass.ACTION] * 4
    assert [k for _, k in meta[4:8]] == list(ModuleKind)
    assert [c for c, _ in meta[8:]] == [BoundaryClass.WHOLE] * 4


def test_class_streams():
    bank = EncoderBank(4, EncoderConfig(d_enc=8, transformer_heads=2)).encode(torch.randn(6, 4))
    assert bank.class_streams(BoundaryClass.SHOT) == [4, 5, 6, 7]


@pytest.mark.parametrize("kind, expected", [
    (ModuleKind.POINTWISE, 1),
    (ModuleKind.SMALL_CONV, 3),
    (ModuleKind.MID_CONV, 7),
    ("transformer", UNBOUNDED),
])
def test_receptive_field(kind, expected):
    assert receptive_field(kind) == expected


def test_receptive_field_transformer_is_infinite():
    assert math.isinf(receptive_field(ModuleKind.TRANSFORMER))


def test_receptive_field_unknown_kind():
    with pytest.raises(ConfigurationError):
        receptive_field("lstm")


def test_pointwise_constant_in_constant_out():
    bank = EncoderBank(5, EncoderConfig(d_enc=8, transformer_heads=2))
    features = torch.ones(10, 5) * 0.7
    with torch.no_grad():
        out = bank.encode(features).streams[_stream_index(bank, BoundaryClass.ACTION, ModuleKind.POINTWISE)]
    assert torch.allclose(out, out[0].expand_as(out), atol=1e-6)


@pytest.mark.parametrize("kind, reach", [
    (ModuleKind.POINTWISE, 0),
    (ModuleKind.SMALL_CONV, 1),
    (ModuleKind.MID_CONV, 3),
])
def test_conv_receptive_field_by_perturbation(kind, reach):
    bank = EncoderBank(6, EncoderConfig(d_enc=8, transformer_heads=2))
    features = torch.randn(20, 6)
    perturbed = features.clone()
    t = 10
    perturbed[t] += 1.0
    idx = _stream_index(bank, BoundaryClass.WHOLE, kind)
    with torch.no_grad():
        before = bank.encode(features).streams[idx]
        after = bank.encode(perturbed).streams[idx]
    changed = torch.nonzero((before - after).abs().amax(dim=1) > 0).flatten().tolist()
    assert changed == list(range(t - reach, t + reach + 1))


def test_transformer_sees_whole_sequence():
    bank = EncoderBank(6, EncoderConfig(d_enc=8, transformer_heads=2))
    features = torch.randn(12, 6)
    perturbed = features.clone()
    perturbed[0] += 1.0
    idx = _stream_index(bank, BoundaryClass.ACTION, ModuleKind.TRANSFORMER)
    with torch.no_grad():
        delta = (bank.encode(features).streams[idx] - bank.encode(perturbed).streams[idx]).abs().amax(dim=1)
    assert bool((delta > 0).all())


def test_same_seed_same_outputs():
    features = torch.randn(15, 4)
    a = EncoderBank(4, EncoderConfig(d_enc=8, transformer_heads=2, seed=3))
    b = EncoderBank(4, EncoderConfig(d_enc=8, transformer_heads=2, seed=3))
    with torch.no_grad():
        for x, y in zip(a.encode(features).streams, b.encode(features).streams):
            assert torch.equal(x, y)


def test_seeded_build_leaves_global_rng_alone():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    EncoderBank(4, EncoderConfig(d_enc=8, transformer_heads=2))
    assert torch.equal(torch.rand(3), expected)


@pytest.mark.parametrize("shape", [(10, 5), (10,), (1, 4)])
def test_encode_shape_errors(shape):
    bank = EncoderBank(4, EncoderConfig(d_enc=8, transformer_heads=2))
    with pytest.raises(ShapeError):
        bank.encode(torch.randn(*shape))


@pytest.mark.parametrize("overrides", [
    {"d_enc": 0},
    {"module_kinds": ["pointwise", "small_conv", "mid_conv"]},
    {"module_kinds": ["pointwise", "small_conv", "mid_conv", "lstm"]},
    {"d_enc": 10, "transformer_heads": 4},
])
def test_invalid_encoder_config(overrides):
    with pytest.raises(ConfigurationError):
        EncoderConfig(**overrides).validate()


def test_shapes_hold_for_random_lengths(rng):
    bank = EncoderBank(5, EncoderConfig(d_enc=8, transformer_heads=2))
    for length in rng.integers(2, 65, size=15).tolist() + [2, 64]:
        with torch.no_grad():
            out = bank.encode(torch.randn(length, 5))
        assert out.length == length
        assert all(s.shape == (length, 8) for s in out.streams)


def test_each_stream_gradient_matches_finite_differences():
    bank = EncoderBank(4, EncoderConfig(d_enc=8, transformer_heads=2, seed=1)).double()
    gen = torch.Generator().manual_seed(0)
    features = torch.randn(7, 4, dtype=torch.float64, generator=gen)
    # a weighted readout, since a plain sum is flat through the transformer's final layer norm
    weights = torch.randn(7, 8, dtype=torch.float64, generator=gen)

    def readout(index):
        return (bank.encode(features).streams[index] * weights).sum()

    h = 1e-6
    for index, module in enumerate(bank.streams):
        bank.zero_grad()
        readout(index).backward()
        analytic, numeric = [], []
        for param in module.parameters():
            flat, grad = param.data.view(-1), param.grad.view(-1)
            for k in torch.randperm(flat.numel(), generator=gen)[:3].tolist():
                original = flat[k].item()
                with torch.no_grad():
                    flat[k] = original + h
                    up = readout(index).item()
                    flat[k] = original - h
                    down = readout(index).item()
                    flat[k] = original
                analytic.append(grad[k].item())
                numeric.append((up - down) / (2 * h))
        analytic, numeric = torch.tensor(analytic), torch.tensor(numeric)
        error = (analytic - numeric).norm() / max((analytic.norm() + numeric.norm()).item(), 1e-12)
        assert error <= 1e-3, bank.meta[index]
