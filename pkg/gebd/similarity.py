from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterable, List, Sequence, Tuple
import logging

import numpy as np
import torch
import torch.nn as nn

from .datamodel import BOUNDARY_CLASSES, BoundaryClass, LabelSeries
from .encoder import EncodedBank
from .errors import InputError, ShapeError

logger = logging.getLogger('gebd.similarity')

NUM_CHANNELS = 12


class MaskCell(IntEnum):
    NEUTRAL = 0
    POSITIVE = 1
    NEGATIVE = 2


_CELL_CHARS = {MaskCell.NEUTRAL: "0", MaskCell.POSITIVE: "+", MaskCell.NEGATIVE: "-"}


@dataclass
class ContrastiveMask:
    """L×L ternary labelling of similarity cells."""
    cells: np.ndarray
    local_range: int
    boundary_indices: Tuple[int, ...]

    @property
    def length(self) -> int:
        return self.cells.shape[0]

    def positives(self) -> np.ndarray:
        return self.cells == MaskCell.POSITIVE

    def negatives(self) -> np.ndarray:
        return self.cells == MaskCell.NEGATIVE

    def render(self) -> str:
        """Text view: '+' positive, '-' negative, '0' neutral, '#' on a boundary's diagonal cell."""
        rows = []
        boundaries = set(self.boundary_indices)
        for i in range(self.length):
            row = []
            for j in range(self.length):
                if i == j and i in boundaries:
                    row.append("#")
                else:
                    row.append(_CELL_CHARS[MaskCell(self.cells[i, j])])
            rows.append(" ".join(row))
        return "\n".join(rows)


def build_contrastive_mask(boundary_indices: Iterable[int], length: int, local_range: int = 4) -> ContrastiveMask:
    """Label each (i, j) pair as positive, negative or neutral.

    Neutral: |i-j| > w, i == j, or either index is a boundary. Otherwise negative
    when a boundary lies strictly between i and j, positive when none does.
    """
    boundaries = sorted({int(b) for b in boundary_indices})
    if local_range < 1:
        raise InputError(f"local_range must be >= 1, got {local_range}")
    if any(b < 0 or b >= length for b in boundaries):
        raise InputError(f"Boundary indices {boundaries} outside [0, {length})")

    is_boundary = np.zeros(length, dtype=bool)
    is_boundary[boundaries] = True
    # before[k] = number of boundaries with index < k
    before = np.concatenate([[0], np.cumsum(is_boundary)])

    i, j = np.meshgrid(np.arange(length), np.arange(length), indexing="ij")
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    between = before[hi] - before[np.minimum(lo + 1, hi)]
    neutral = (hi - lo > local_range) | (i == j) | is_boundary[i] | is_boundary[j]

    cells = np.where(between > 0, MaskCell.NEGATIVE, MaskCell.POSITIVE).astype(np.int8)
    cells[neutral] = MaskCell.NEUTRAL
    return ContrastiveMask(cells, local_range, tuple(boundaries))


def class_masks(labels: LabelSeries, local_range: int) -> Dict[BoundaryClass, ContrastiveMask]:
    length = len(labels.whole)
    return {c: build_contrastive_mask(labels.indices(c), length, local_range) for c in BOUNDARY_CLASSES}


def pairwise_similarity(stream: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    """Cosine similarity between all rows of an L×d matrix.

    Rows with zero norm get similarity 0 everywhere; the returned flag reports them.
    """
    if stream.dim() != 2:
        raise ShapeError(f"Expected an L×d matrix, got shape {tuple(stream.shape)}")
    norms = stream.norm(dim=1, keepdim=True)
    degenerate = bool((norms == 0).any())
    if degenerate:
        logger.warning("Zero-norm rows in pairwise similarity input")
    unit = stream / norms.clamp_min(torch.finfo(stream.dtype).tiny)
    sim = unit @ unit.T
    return sim.clamp(-1.0, 1.0), degenerate


@dataclass
class SimilarityStack:
    tsm: torch.Tensor
    degenerate: bool = False


def stack_tsm(bank: EncodedBank) -> SimilarityStack:
    """Channel c is the self-similarity of stream c, in stream order."""
    if len(bank.streams) != NUM_CHANNELS:
        raise ShapeError(f"Expected {NUM_CHANNELS} streams, got {len(bank.streams)}")
    lengths = {s.shape[0] for s in bank.streams}
    if len(lengths) != 1:
        raise ShapeError(f"Streams disagree on length: {sorted(lengths)}")
    results = [pairwise_similarity(s) for s in bank.streams]
    return SimilarityStack(torch.stack([r[0] for r in results]), any(r[1] for r in results))


class SimSiamHead(nn.Module):
    """Two pointwise (kernel 1) convolutions with a ReLU between them."""
    def __init__(self, dim: int, hidden: int = None):
        super().__init__()
        hidden = hidden or dim
        self.dim = dim
        self.predictor = nn.Sequential(
            nn.Conv1d(dim, hidden, 1),
            nn.ReLU(),
            nn.Conv1d(hidden, dim, 1),
        )

    def forward(self, stream: torch.Tensor) -> torch.Tensor:
        return simsiam_project(stream, self)


def simsiam_project(stream: torch.Tensor, head: SimSiamHead) -> torch.Tensor:
    if stream.dim() != 2 or stream.shape[1] != head.dim:
        raise ShapeError(f"SimSiam head expects L×{head.dim}, got {tuple(stream.shape)}")
    return head.predictor(stream.T.unsqueeze(0)).squeeze(0).T


def contrastive_matrix(stream: torch.Tensor, head: SimSiamHead, stop_gradient: bool = True) -> torch.Tensor:
    """sim[i][j] = cos(target_i, head(stream)_j); the target branch is detached when stop_gradient."""
    target = stream.detach() if stop_gradient else stream
    pred = simsiam_project(stream, head)
    eps = torch.finfo(stream.dtype).tiny
    target = target / target.norm(dim=1, keepdim=True).clamp_min(eps)
    pred = pred / pred.norm(dim=1, keepdim=True).clamp_min(eps)
    return (target @ pred.T).clamp(-1.0, 1.0)


def contrastive_loss(matrices: Sequence[torch.Tensor],
                     masks: Sequence[ContrastiveMask]) -> Tuple[torch.Tensor, bool]:
    """Mean over usable streams of mean(negative cells) - mean(positive cells).

    Streams lacking either positives or negatives are skipped. When every stream is
    skipped the loss is 0 and the returned flag is True.
    """
    if len(matrices) != len(masks):
        raise ShapeError(f"{len(matrices)} similarity matrices but {len(masks)} masks")
    terms: List[torch.Tensor] = []
    for sim, mask in zip(matrices, masks):
        if tuple(sim.shape) != mask.cells.shape:
            raise ShapeError(f"Matrix {tuple(sim.shape)} does not match mask {mask.cells.shape}")
        pos = torch.as_tensor(mask.positives(), device=sim.device)
        neg = torch.as_tensor(mask.negatives(), device=sim.device)
        if not pos.any() or not neg.any():
            continue
        terms.append(sim[neg].mean() - sim[pos].mean())
    if not terms:
        logger.debug("No stream has both positive and negative cells; contrastive term is 0")
        zero = sum(m.sum() for m in matrices) * 0.0 if matrices else torch.zeros(())
        return zero, True
    return torch.stack(terms).mean(), False


def bank_masks(bank: EncodedBank, masks_by_class: Dict[BoundaryClass, ContrastiveMask]) -> List[ContrastiveMask]:
    """Each stream uses the mask of its own boundary class."""
    return [masks_by_class[c] for c, _ in bank.stream_meta]
