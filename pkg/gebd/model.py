from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional
import logging

import torch
import torch.nn as nn

from .datamodel import BoundaryClass
from .encoder import EncodedBank, EncoderBank, EncoderConfig
from .errors import ConfigurationError, ShapeError
from .heads import (
    DecoderConfig,
    DirectClassifier,
    LossWeights,
    PassPredictions,
    TSMClassifier,
    TSMDecoder,
    combine,
    decode_tsm,
    direct_classify,
    gather_diagonal,
    total_loss,
    tsm_classify,
)
from .similarity import (
    ContrastiveMask,
    SimilarityStack,
    SimSiamHead,
    bank_masks,
    contrastive_loss,
    contrastive_matrix,
    stack_tsm,
)

logger = logging.getLogger('gebd.model')


class ModelVariant(str, Enum):
    """Ablation variants: which passes run and whether the contrastive term is used."""
    DIRECT = "direct"
    TSM_NO_CL = "tsm_no_cl"
    TSM_CL = "tsm_cl"
    COMBINED = "combined"

    @property
    def uses_tsm(self) -> bool:
        return self is not ModelVariant.DIRECT

    @property
    def uses_direct(self) -> bool:
        return self in (ModelVariant.DIRECT, ModelVariant.COMBINED)

    @property
    def uses_contrastive(self) -> bool:
        return self in (ModelVariant.TSM_CL, ModelVariant.COMBINED)


def parse_variant(value: str) -> ModelVariant:
    try:
        return ModelVariant(value)
    except ValueError:
        raise ConfigurationError(f"Unknown model variant '{value}', expected one of {[v.value for v in ModelVariant]}")


@dataclass
class ModelConfig:
    in_dim: int
    variant: str = ModelVariant.COMBINED.value
    stop_gradient: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def validate(self):
        if self.in_dim < 1:
            raise ConfigurationError(f"in_dim must be positive, got {self.in_dim}")
        parse_variant(self.variant)
        self.encoder.validate()
        self.decoder.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "variant": self.variant,
            "stop_gradient": self.stop_gradient,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        return cls(
            in_dim=int(data["in_dim"]),
            variant=data.get("variant", ModelVariant.COMBINED.value),
            stop_gradient=bool(data.get("stop_gradient", True)),
            encoder=EncoderConfig.from_dict(data.get("encoder", {})),
            decoder=DecoderConfig.from_dict(data.get("decoder", {})),
        )


@dataclass
class ForwardResult:
    preds: PassPredictions
    bank: EncodedBank
    stack: Optional[SimilarityStack] = None


@dataclass
class LossBreakdown:
    total: torch.Tensor
    contrastive: torch.Tensor
    contrastive_skipped: bool


class GEBDModel(nn.Module):
    """Shared encoder bank feeding a TSM pass and a direct pass, merged by a learned convex combination."""
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config.validate()
        self.variant = parse_variant(config.variant)
        enc, dec = config.encoder, config.decoder
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = EncoderBank(config.in_dim, enc)
            self.simsiam_heads = nn.ModuleList(
                SimSiamHead(enc.d_enc, dec.simsiam_hidden) for _ in range(enc.num_streams)
            )
            self.decoder = TSMDecoder(dec)
            self.tsm_head = TSMClassifier(dec.c_decoder, dec.classifier_hidden)
            self.direct_head = DirectClassifier(enc.num_streams * enc.d_enc, dec.direct_layers, dec.direct_heads)
            self.raw_alpha = nn.Parameter(torch.zeros(3))

    def forward(self, features: torch.Tensor) -> ForwardResult:
        if features.dim() != 2 or features.shape[1] != self.config.in_dim:
            raise ShapeError(f"Model expects L×{self.config.in_dim} features, got {tuple(features.shape)}")
        bank = self.encoder.encode(features)
        stack = None
        p_tsm = p_direct = None
        if self.variant.uses_tsm:
            stack = stack_tsm(bank)
            p_tsm = tsm_classify(gather_diagonal(decode_tsm(stack, self.decoder)), self.tsm_head)
        if self.variant.uses_direct:
            p_direct = direct_classify(bank, self.direct_head)

        if p_tsm is not None and p_direct is not None:
            preds = combine(p_tsm, p_direct, self.raw_alpha)
        elif p_tsm is not None:
            preds = PassPredictions(p_final=p_tsm, p_tsm=p_tsm)
        else:
            preds = PassPredictions(p_final=p_direct, p_direct=p_direct)
        return ForwardResult(preds, bank, stack)

    def contrastive_term(self, bank: EncodedBank, masks: Dict[BoundaryClass, ContrastiveMask]):
        matrices = [
            contrastive_matrix(stream, head, self.config.stop_gradient)
            for stream, head in zip(bank.streams, self.simsiam_heads)
        ]
        return contrastive_loss(matrices, bank_masks(bank, masks))

    def loss(self, result: ForwardResult, labels: torch.Tensor,
             masks: Dict[BoundaryClass, ContrastiveMask], weights: LossWeights,
             aux_pass_bce: bool = False) -> LossBreakdown:
        if self.variant.uses_contrastive and weights.lambda_contra > 0:
            l_contra, skipped = self.contrastive_term(result.bank, masks)
        else:
            l_contra, skipped = torch.zeros((), dtype=labels.dtype), False
        total = total_loss(result.preds, labels, l_contra, weights, aux_pass_bce)
        return LossBreakdown(total, l_contra, skipped)
