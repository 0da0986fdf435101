import math
from dataclasses import dataclass
from typing import Optional, Union

import torch

from schemas.loss import LossWeights
from services.errors import DegenerateInputError, NonFiniteError, ShapeError

Scalar = Union[float, torch.Tensor]


@dataclass
class BatchContext:
    predicted_heatmaps: torch.Tensor
    gt_heatmaps: torch.Tensor
    encodings_plain: torch.Tensor
    encodings_fused: torch.Tensor

    def __post_init__(self):
        sizes = {t.shape[0] for t in (self.predicted_heatmaps, self.gt_heatmaps,
                                      self.encodings_plain, self.encodings_fused)}
        if len(sizes) != 1:
            raise ShapeError(f'inconsistent batch dimensions {sorted(sizes)}')

    @property
    def batch_size(self) -> int:
        return self.predicted_heatmaps.shape[0]


def _reduce(squared: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == 'mean':
        return squared.mean()
    if reduction == 'sum':
        return squared.sum()
    raise ValueError(f'unknown reduction {reduction!r}')


def heatmap_loss(pred: torch.Tensor, gt: torch.Tensor, mask: Optional[torch.Tensor] = None,
                 reduction: str = 'mean') -> torch.Tensor:
    """
    Squared L2 distance between heatmaps, summed over each joint's map.

    'mean' averages the per-map sums over joints and batch; 'sum' adds them
    all up. `mask` marks visible joints (..., 21); masked maps contribute
    nothing and the mean is taken over the visible maps only.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f'heatmap shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}')
    if reduction not in ('mean', 'sum'):
        raise ValueError(f'unknown reduction {reduction!r}')
    per_map = ((pred - gt.to(pred.dtype)) ** 2).sum(dim=(-2, -1))
    if mask is None:
        return _reduce(per_map, reduction)
    weights = mask.to(per_map.dtype).expand_as(per_map)
    total = (per_map * weights).sum()
    if reduction == 'sum':
        return total
    return total / weights.sum().clamp_min(1.0)


def pose_loss(pred: torch.Tensor, gt: torch.Tensor, reduction: str = 'mean') -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ShapeError(f'pose shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}')
    return _reduce((pred - gt.to(pred.dtype)) ** 2, reduction)


def pairwise_heatmap_distances(pred: torch.Tensor, gt: torch.Tensor, metric: str = 'l2') -> torch.Tensor:
    """D[i, j] = distance between predicted heatmap i and ground-truth heatmap j."""
    diff = pred.flatten(1)[:, None, :] - gt.to(pred.dtype).flatten(1)[None, :, :]
    if metric == 'l2':
        return diff.norm(dim=-1)
    if metric == 'l1':
        return diff.abs().sum(dim=-1)
    raise ValueError(f'unknown mining metric {metric!r}')


def _farthest(row: torch.Tensor, anchor_idx: int) -> int:
    row = row.clone()
    row[anchor_idx] = -math.inf
    # lowest index among the maxima
    return int((row == row.max()).nonzero()[0, 0])


def mine_negatives(pred: torch.Tensor, gt: torch.Tensor, metric: str = 'l2') -> torch.Tensor:
    batch = pred.shape[0]
    if batch < 2:
        raise DegenerateInputError(f'negative mining needs at least 2 samples, got {batch}')
    with torch.no_grad():
        distances = pairwise_heatmap_distances(pred.detach(), gt, metric)
    return torch.tensor([_farthest(distances[i], i) for i in range(batch)], dtype=torch.long)


def select_negative(batch: BatchContext, anchor_idx: int, metric: str = 'l2') -> int:
    size = batch.batch_size
    if size < 2:
        raise DegenerateInputError(f'negative mining needs at least 2 samples, got {size}')
    if not 0 <= anchor_idx < size:
        raise IndexError(f'anchor index {anchor_idx} out of range for batch of {size}')
    with torch.no_grad():
        distances = pairwise_heatmap_distances(batch.predicted_heatmaps.detach(), batch.gt_heatmaps, metric)
    return _farthest(distances[anchor_idx], anchor_idx)


def contrastive_loss(anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor,
                     margin: float = 0.5, clamp_mode: str = 'max') -> torch.Tensor:
    """
    ||a - p||_1 - max(margin, ||a - n||_1), row-wise over the last dim.

    The margin branch carries no gradient; the distance branch receives it
    only when the distance is strictly beyond the margin. `clamp_mode='min'`
    caps the repulsion at the margin instead.
    """
    if not anchor.shape == positive.shape == negative.shape:
        raise ShapeError(f'encoding shapes differ: {tuple(anchor.shape)}, '
                         f'{tuple(positive.shape)}, {tuple(negative.shape)}')
    pos = (anchor - positive).abs().sum(dim=-1)
    neg = (anchor - negative).abs().sum(dim=-1)
    floor = torch.full_like(neg, margin)
    if clamp_mode == 'max':
        repulsion = torch.where(neg > margin, neg, floor)
    elif clamp_mode == 'min':
        repulsion = torch.where(neg < margin, neg, floor)
    else:
        raise ValueError(f'unknown clamp mode {clamp_mode!r}')
    return pos - repulsion


def batch_contrastive_loss(batch: BatchContext, margin: float = 0.5, metric: str = 'l2',
                           clamp_mode: str = 'max') -> torch.Tensor:
    """Every sample is an anchor; its negative is the mined plain encoding."""
    negatives = mine_negatives(batch.predicted_heatmaps, batch.gt_heatmaps, metric)
    anchors = batch.encodings_plain
    per_anchor = contrastive_loss(anchors, batch.encodings_fused, anchors[negatives], margin, clamp_mode)
    return per_anchor.mean()


def _finite(name: str, value: Scalar) -> None:
    v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if not math.isfinite(v):
        raise NonFiniteError(f'{name} loss is not finite ({v})', {name: v})


def total_loss(heat: Scalar, pose: Scalar, con: Optional[Scalar], w: LossWeights) -> Scalar:
    con = 0.0 if con is None else con
    for name, value in (('heat', heat), ('pose', pose), ('con', con)):
        _finite(name, value)
    return w.lambda1 * heat + w.lambda2 * pose + w.lambda3 * con
