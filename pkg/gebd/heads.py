from dataclasses import dataclass, asdict, field
from typing import List, Optional
import logging

import torch
import torch.nn as nn

from .encoder import EncodedBank, sinusoidal_positions
from .errors import ConfigurationError, ShapeError
from .similarity import NUM_CHANNELS, SimilarityStack

logger = logging.getLogger('gebd.heads')

BCE_EPS = 1e-7
NUM_CLASSES = 3


@dataclass
class DecoderConfig:
    """TSM-pass decoder and both classification heads."""
    c_decoder: int = 64
    stage_widths: List[int] = field(default_factory=lambda: [32, 32, 64, 64])
    blocks_per_stage: int = 1
    classifier_hidden: int = 32
    direct_layers: int = 2
    direct_heads: int = 4
    simsiam_hidden: int = 32

    def validate(self):
        if self.c_decoder < 1 or self.blocks_per_stage < 1 or self.classifier_hidden < 1:
            raise ConfigurationError("Decoder sizes must be positive")
        if len(self.stage_widths) != 4 or any(w < 1 for w in self.stage_widths):
            raise ConfigurationError(f"Need 4 positive stage widths, got {self.stage_widths}")
        if self.direct_layers < 1 or self.direct_heads < 1 or self.simsiam_hidden < 1:
            raise ConfigurationError("Direct head and SimSiam sizes must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'DecoderConfig':
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


def group_norm(channels: int) -> nn.GroupNorm:
    """Per-sample normalization: groups of 8 channels, or one group for narrow layers."""
    num_groups = channels // 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(num_groups=num_groups, num_channels=channels)


class BasicBlock(nn.Module):
    """ResNet basic block with stride 1 so the L×L extent is kept."""
    def __init__(self, inplanes: int, planes: int):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 3, padding=1, bias=False)
        self.norm1 = group_norm(planes)
        self.relu = nn.ReLU()
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.norm2 = group_norm(planes)
        self.downsample = None
        if inplanes != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(inplanes, planes, 1, bias=False),
                group_norm(planes),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.relu(out + residual)


class TSMDecoder(nn.Module):
    """ResNet-18 style 2-D decoder without strides or pooling: (12, L, L) -> (c_decoder, L, L)."""
    def __init__(self, config: DecoderConfig):
        super().__init__()
        widths = config.stage_widths
        self.stem = nn.Sequential(
            nn.Conv2d(NUM_CHANNELS, widths[0], 3, padding=1, bias=False),
            group_norm(widths[0]),
            nn.ReLU(),
        )
        blocks = []
        inplanes = widths[0]
        for planes in widths:
            for _ in range(config.blocks_per_stage):
                blocks.append(BasicBlock(inplanes, planes))
                inplanes = planes
        self.stages = nn.Sequential(*blocks)
        self.out = nn.Conv2d(inplanes, config.c_decoder, 1)

    def forward(self, tsm: torch.Tensor) -> torch.Tensor:
        return self.out(self.stages(self.stem(tsm)))


def decode_tsm(stack: SimilarityStack, decoder: TSMDecoder) -> torch.Tensor:
    tsm = stack.tsm if isinstance(stack, SimilarityStack) else stack
    if tsm.dim() != 3 or tsm.shape[0] != NUM_CHANNELS or tsm.shape[1] != tsm.shape[2]:
        raise ShapeError(f"Decoder expects a {NUM_CHANNELS}×L×L stack, got {tuple(tsm.shape)}")
    return decoder(tsm.unsqueeze(0)).squeeze(0)


def gather_diagonal(t: torch.Tensor) -> torch.Tensor:
    """out[c][k] = t[c][k][k]."""
    if t.dim() != 3 or t.shape[1] != t.shape[2]:
        raise ShapeError(f"Expected C×L×L, got {tuple(t.shape)}")
    return torch.diagonal(t, dim1=1, dim2=2)


class TSMClassifier(nn.Module):
    """Shallow Conv1d head over the gathered diagonal; returns logits."""
    def __init__(self, c_decoder: int, hidden: int):
        super().__init__()
        self.c_decoder = c_decoder
        self.net = nn.Sequential(
            nn.Conv1d(c_decoder, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(hidden, NUM_CLASSES, 1),
        )

    def forward(self, diag: torch.Tensor) -> torch.Tensor:
        return self.net(diag.unsqueeze(0)).squeeze(0)


def tsm_classify(diag: torch.Tensor, head: TSMClassifier) -> torch.Tensor:
    if diag.dim() != 2 or diag.shape[0] != head.c_decoder:
        raise ShapeError(f"TSM classifier expects {head.c_decoder}×L, got {tuple(diag.shape)}")
    return torch.sigmoid(head(diag))


class DirectClassifier(nn.Module):
    """Transformer encoder over the concatenated streams, one logistic output per class."""
    def __init__(self, width: int, layers: int, heads: int):
        super().__init__()
        if width % heads:
            raise ConfigurationError(f"Direct head width {width} not divisible by {heads} heads")
        self.width = width
        layer = nn.TransformerEncoderLayer(
            d_model=width, nhead=heads, dim_feedforward=2 * width,
            dropout=0.0, activation="gelu", batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)
        self.classifier = nn.Linear(width, NUM_CLASSES)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (L, width) -> logits (3, L)
        h = x + sinusoidal_positions(x.shape[0], x.shape[1], dtype=x.dtype).to(x.device)
        h = self.encoder(h.unsqueeze(0)).squeeze(0)
        return self.classifier(h).T


def direct_classify(bank: EncodedBank, head: DirectClassifier) -> torch.Tensor:
    if len(bank.streams) != NUM_CHANNELS:
        raise ShapeError(f"Expected {NUM_CHANNELS} streams, got {len(bank.streams)}")
    x = torch.cat(bank.streams, dim=1)
    if x.shape[1] != head.width:
        raise ShapeError(f"Direct head expects width {head.width}, got {x.shape[1]}")
    return torch.sigmoid(head(x))


@dataclass
class PassPredictions:
    """Per-class 3×L probabilities; a pass disabled by the model variant is None."""
    p_final: torch.Tensor
    p_tsm: Optional[torch.Tensor] = None
    p_direct: Optional[torch.Tensor] = None
    alpha: Optional[torch.Tensor] = None


def combine(p_tsm: torch.Tensor, p_direct: torch.Tensor, raw_alpha: torch.Tensor) -> PassPredictions:
    """p_final[c] = alpha[c] * p_tsm[c] + (1 - alpha[c]) * p_direct[c], alpha = sigmoid(raw_alpha)."""
    if p_tsm.shape != p_direct.shape:
        raise ShapeError(f"Pass shapes differ: {tuple(p_tsm.shape)} vs {tuple(p_direct.shape)}")
    alpha = torch.sigmoid(raw_alpha)
    a = alpha.view(-1, *([1] * (p_tsm.dim() - 1)))
    p_final = a * p_tsm + (1 - a) * p_direct
    return PassPredictions(p_final=p_final, p_tsm=p_tsm, p_direct=p_direct, alpha=alpha)


def bce(p: torch.Tensor, y: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = p.clamp(eps, 1 - eps)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


@dataclass
class LossWeights:
    w_action: float = 1.0
    w_shot: float = 1.0
    w_whole: float = 1.0
    lambda_contra: float = 1.0

    def validate(self):
        if min(self.w_action, self.w_shot, self.w_whole, self.lambda_contra) < 0:
            raise ConfigurationError("Loss weights must be non-negative")
        return self

    @property
    def class_weights(self) -> List[float]:
        return [self.w_action, self.w_shot, self.w_whole]


def total_loss(preds: PassPredictions, labels: torch.Tensor, l_contra: torch.Tensor,
               weights: LossWeights = None, aux_pass_bce: bool = False) -> torch.Tensor:
    """Weighted per-class BCE on p_final plus lambda_contra * l_contra.

    With aux_pass_bce, each available pass also gets its own weighted BCE term.
    """
    weights = weights or LossWeights()
    if labels.shape != preds.p_final.shape:
        raise ShapeError(f"Labels {tuple(labels.shape)} do not match predictions {tuple(preds.p_final.shape)}")
    outputs = [preds.p_final]
    if aux_pass_bce:
        outputs += [p for p in (preds.p_tsm, preds.p_direct) if p is not None]
    loss = weights.lambda_contra * l_contra
    for p in outputs:
        for c, w in enumerate(weights.class_weights):
            if w:
                loss = loss + w * bce(p[c], labels[c])
    return loss
