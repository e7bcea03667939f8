from dataclasses import dataclass, asdict, field
from enum import Enum
from typing import List, Tuple, Union
import logging
import math

import torch
import torch.nn as nn

from .datamodel import BOUNDARY_CLASSES, BoundaryClass
from .errors import ConfigurationError, ShapeError

logger = logging.getLogger('gebd.encoder')


class ModuleKind(str, Enum):
    """Temporal module architectures, ordered by receptive field."""
    POINTWISE = "pointwise"
    SMALL_CONV = "small_conv"
    MID_CONV = "mid_conv"
    TRANSFORMER = "transformer"


UNBOUNDED = math.inf

_KERNEL_SIZES = {
    ModuleKind.POINTWISE: 1,
    ModuleKind.SMALL_CONV: 3,
    ModuleKind.MID_CONV: 7,
}


def receptive_field(kind: Union[ModuleKind, str]) -> Union[int, float]:
    """Snippets that can influence one output snippet; UNBOUNDED for attention."""
    try:
        kind = ModuleKind(kind)
    except ValueError:
        raise ConfigurationError(f"Unknown module kind '{kind}'")
    if kind is ModuleKind.TRANSFORMER:
        return UNBOUNDED
    return _KERNEL_SIZES[kind]


@dataclass
class EncoderConfig:
    d_enc: int = 32
    module_kinds: List[str] = field(default_factory=lambda: [k.value for k in ModuleKind])
    classes: List[str] = field(default_factory=lambda: [c.value for c in BOUNDARY_CLASSES])
    transformer_layers: int = 2
    transformer_heads: int = 4
    seed: int = 0

    def validate(self):
        if self.d_enc < 1:
            raise ConfigurationError(f"d_enc must be positive, got {self.d_enc}")
        if len(self.module_kinds) != 4 or len(self.classes) != 3:
            raise ConfigurationError("Encoder needs exactly 4 module kinds and 3 classes")
        for kind in self.module_kinds:
            receptive_field(kind)
        for c in self.classes:
            BoundaryClass(c)
        if self.transformer_layers < 1 or self.transformer_heads < 1:
            raise ConfigurationError("Transformer depth and heads must be positive")
        if ModuleKind.TRANSFORMER.value in self.module_kinds and self.d_enc % self.transformer_heads:
            raise ConfigurationError(f"d_enc={self.d_enc} not divisible by {self.transformer_heads} heads")
        return self

    @property
    def num_streams(self) -> int:
        return len(self.module_kinds) * len(self.classes)

    def stream_meta(self) -> List[Tuple[BoundaryClass, ModuleKind]]:
        """Class-major stream order: action×4, shot×4, whole×4."""
        return [(BoundaryClass(c), ModuleKind(k)) for c in self.classes for k in self.module_kinds]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'EncoderConfig':
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class EncodedBank:
    """Twelve separate L×d_enc streams; never concatenated before similarity computation."""
    streams: List[torch.Tensor]
    stream_meta: List[Tuple[BoundaryClass, ModuleKind]]

    @property
    def length(self) -> int:
        return self.streams[0].shape[0]

    def class_streams(self, boundary_class: BoundaryClass) -> List[int]:
        return [i for i, (c, _) in enumerate(self.stream_meta) if c == boundary_class]


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return pe


class ConvStream(nn.Module):
    """One temporal convolution followed by a pointwise projection; receptive field = kernel."""
    def __init__(self, in_dim: int, d_enc: int, kernel_size: int):
        super().__init__()
        self.conv = nn.Conv1d(in_dim, d_enc, kernel_size, padding=kernel_size // 2)
        self.act = nn.GELU()
        self.proj = nn.Conv1d(d_enc, d_enc, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, L, D) -> (B, L, d_enc)
        out = self.proj(self.act(self.conv(x.transpose(1, 2))))
        return out.transpose(1, 2)


class TransformerStream(nn.Module):
    def __init__(self, in_dim: int, d_enc: int, layers: int, heads: int):
        super().__init__()
        self.embed = nn.Linear(in_dim, d_enc)
        layer = nn.TransformerEncoderLayer(
            d_model=d_enc, nhead=heads, dim_feedforward=2 * d_enc,
            dropout=0.0, activation="gelu", batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.embed(x)
        h = h + sinusoidal_positions(h.shape[1], h.shape[2], dtype=h.dtype).to(h.device)
        return self.encoder(h)


def build_stream(kind: ModuleKind, in_dim: int, config: EncoderConfig) -> nn.Module:
    if kind is ModuleKind.TRANSFORMER:
        return TransformerStream(in_dim, config.d_enc, config.transformer_layers, config.transformer_heads)
    return ConvStream(in_dim, config.d_enc, _KERNEL_SIZES[kind])


class EncoderBank(nn.Module):
    """4 module kinds × 3 boundary classes of independent temporal encoders."""
    def __init__(self, in_dim: int, config: EncoderConfig = None):
        super().__init__()
        self.config = (config or EncoderConfig()).validate()
        self.in_dim = in_dim
        self.meta = self.config.stream_meta()
        # fan-in scaled uniform init comes from the torch defaults under this seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.config.seed)
            self.streams = nn.ModuleList(build_stream(kind, in_dim, self.config) for _, kind in self.meta)

    def forward(self, features: torch.Tensor) -> EncodedBank:
        return self.encode(features)

    def encode(self, features: torch.Tensor) -> EncodedBank:
        """Map an L×D sequence to 12 separate L×d_enc streams."""
        if features.dim() != 2 or features.shape[1] != self.in_dim:
            raise ShapeError(f"Encoder expects L×{self.in_dim} features, got {tuple(features.shape)}")
        if features.shape[0] < 2:
            raise ShapeError(f"Need at least 2 snippets, got {features.shape[0]}")
        x = features.unsqueeze(0)
        streams = [module(x).squeeze(0) for module in self.streams]
        return EncodedBank(streams, list(self.meta))
