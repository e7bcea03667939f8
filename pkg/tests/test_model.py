import numpy as np
import pytest
import torch

from gebd.datamodel import BoundaryAnnotation, snippetize_labels
from gebd.errors import ConfigurationError, ShapeError
from gebd.heads import LossWeights
from gebd.model import GEBDModel, ModelConfig, ModelVariant, parse_variant
from gebd.similarity import class_masks


def _labels_and_masks(length=8, local_range=4):
    ann = BoundaryAnnotation.from_classes("v", float(length), [3.0], [6.0], 1.0)
    labels = snippetize_labels(ann, length, 1.0)
    return labels, class_masks(labels, local_range)


@pytest.mark.parametrize("variant, tsm, direct, contrastive", [
    ("direct", False, True, False),
    ("tsm_no_cl", True, False, False),
    ("tsm_cl", True, False, True),
    ("combined", True, True, True),
])
def test_variant_flags(variant, tsm, direct, contrastive):
    v = parse_variant(variant)
    assert (v.uses_tsm, v.uses_direct, v.uses_contrastive) == (tsm, direct, contrastive)


def test_unknown_variant():
    with pytest.raises(ConfigurationError):
        parse_variant("triple")


def test_combined_forward(tiny_model_config):
    model = GEBDModel(tiny_model_config())
    result = model(torch.randn(8, 6))
    preds = result.preds
    assert preds.p_final.shape == (3, 8)
    assert preds.p_tsm is not None and preds.p_direct is not None
    assert torch.allclose(preds.alpha, torch.full((3,), 0.5))
    assert result.stack.tsm.shape == (12, 8, 8)


@pytest.mark.parametrize("variant", ["direct", "tsm_no_cl", "tsm_cl"])
def test_single_pass_variants(tiny_model_config, variant):
    model = GEBDModel(tiny_model_config(variant=variant))
    preds = model(torch.randn(8, 6)).preds
    assert preds.alpha is None
    if variant == "direct":
        assert preds.p_tsm is None and torch.equal(preds.p_final, preds.p_direct)
    else:
        assert preds.p_direct is None and torch.equal(preds.p_final, preds.p_tsm)


def test_all_variants_share_parameter_layout(tiny_model_config):
    names = {v: sorted(GEBDModel(tiny_model_config(variant=v.value)).state_dict()) for v in ModelVariant}
    assert len({tuple(n) for n in names.values()}) == 1


def test_forward_shape_error(tiny_model_config):
    with pytest.raises(ShapeError):
        GEBDModel(tiny_model_config())(torch.randn(8, 5))


def test_same_seed_same_parameters(tiny_model_config):
    a = GEBDModel(tiny_model_config(), seed=2).state_dict()
    b = GEBDModel(tiny_model_config(), seed=2).state_dict()
    c = GEBDModel(tiny_model_config(), seed=3).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_contrastive_term_only_for_contrastive_variants(tiny_model_config):
    labels, masks = _labels_and_masks()
    y = torch.as_tensor(labels.as_array())
    for variant in ModelVariant:
        model = GEBDModel(tiny_model_config(variant=variant.value))
        parts = model.loss(model(torch.randn(8, 6)), y, masks, LossWeights())
        if variant.uses_contrastive:
            assert parts.contrastive.item() != 0.0
        else:
            assert parts.contrastive.item() == 0.0
        assert torch.isfinite(parts.total)


def test_zero_lambda_skips_contrastive_term(tiny_model_config):
    labels, masks = _labels_and_masks()
    model = GEBDModel(tiny_model_config())
    parts = model.loss(model(torch.randn(8, 6)), torch.as_tensor(labels.as_array()), masks,
                       LossWeights(lambda_contra=0.0))
    assert parts.contrastive.item() == 0.0


def test_no_boundaries_flags_skipped_contrastive(tiny_model_config):
    ann = BoundaryAnnotation.from_classes("v", 8.0, [], [], 1.0)
    labels = snippetize_labels(ann, 8, 1.0)
    model = GEBDModel(tiny_model_config())
    parts = model.loss(model(torch.randn(8, 6)), torch.as_tensor(labels.as_array()),
                       class_masks(labels, 4), LossWeights())
    assert parts.contrastive_skipped


def test_backward_reaches_every_parameter(tiny_model_config):
    labels, masks = _labels_and_masks()
    model = GEBDModel(tiny_model_config())
    parts = model.loss(model(torch.randn(8, 6)), torch.as_tensor(labels.as_array()), masks, LossWeights())
    parts.total.backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None]
    assert missing == []


def test_end_to_end_gradient_matches_finite_differences(tiny_model_config):
    # finite differences move both contrastive branches, so compare against the undetached form
    model = GEBDModel(tiny_model_config(stop_gradient=False), seed=5).double()
    torch.manual_seed(0)
    model.train()
    features = torch.randn(8, 6, dtype=torch.float64)
    labels, masks = _labels_and_masks()
    y = torch.as_tensor(labels.as_array(), dtype=torch.float64)
    weights = LossWeights()

    def loss_value():
        return model.loss(model(features), y, masks, weights).total

    model.zero_grad()
    loss_value().backward()

    params = [p for p in model.parameters()]
    flat = [(pi, k) for pi, p in enumerate(params) for k in range(p.numel())]
    rng = np.random.default_rng(0)
    sample = [flat[i] for i in rng.choice(len(flat), size=100, replace=False)]

    h = 1e-6
    analytic, numeric = [], []
    with torch.no_grad():
        for pi, k in sample:
            values = params[pi].view(-1)
            analytic.append(params[pi].grad.view(-1)[k].item())
            values[k] += h
            up = loss_value().item()
            values[k] -= 2 * h
            down = loss_value().item()
            values[k] += h
            numeric.append((up - down) / (2 * h))

    analytic, numeric = np.array(analytic), np.array(numeric)
    error = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    assert error <= 1e-3


def test_model_config_round_trip(tiny_model_config):
    config = tiny_model_config(variant="tsm_cl", stop_gradient=False)
    back = ModelConfig.from_dict(config.to_dict())
    assert back == config


@pytest.mark.parametrize("length", [8, 13])
def test_train_and_eval_forwards_agree(tiny_model_config, length):
    model = GEBDModel(tiny_model_config())
    # a different length first, so no state from one video can leak into the next
    model.train()
    model(torch.randn(21, 6))
    features = torch.randn(length, 6)
    with torch.no_grad():
        trained = model(features).preds.p_final
        model.eval()
        evaluated = model(features).preds.p_final
    torch.testing.assert_close(trained, evaluated)


def test_decoder_has_no_running_statistics(tiny_model_config):
    model = GEBDModel(tiny_model_config())
    assert not any(isinstance(m, torch.nn.modules.batchnorm._BatchNorm) for m in model.modules())
    assert all("running" not in name for name, _ in model.named_buffers())
