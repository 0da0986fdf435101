from typing import Dict, Iterator, Optional, Tuple

import torch
import torch.nn as nn

from data.sample import IMAGE_SIZE
from models.branch2 import Branch2, ProjectionHead
from models.heatmap_net import HeatmapNet
from models.poseprior import PosePriorNet
from services.clip_backends import images_to_nchw
from services.errors import CheckpointError, InvalidConfigError, ShapeError
from utils.geometry import compose_pose

TAPS = ('backbone', 'stage1')


class HandPoseEstimator(nn.Module):
    """
    Heatmap net + Poseprior net, with the training-only Branch2 and
    projection head attached to the heatmap net's shared trunk.
    """

    def __init__(self, channels: int = 32, refinement_stages: int = 2, branch2_tap: str = 'backbone',
                 combination: str = 'concat', zero_init_final: bool = False, linear_projection_head: bool = False):
        super().__init__()
        if branch2_tap not in TAPS:
            raise InvalidConfigError(f'branch2_tap must be one of {TAPS}, got {branch2_tap!r}')
        self.config = {
            'channels': channels,
            'refinement_stages': refinement_stages,
            'branch2_tap': branch2_tap,
            'combination': combination,
            'zero_init_final': zero_init_final,
            'linear_projection_head': linear_projection_head,
        }
        self.branch2_tap = branch2_tap
        self.combination = combination
        self.heatmap_net = HeatmapNet(channels, refinement_stages, zero_init_final)
        self.poseprior = PosePriorNet()
        self.branch2 = Branch2(channels)
        self.projection_head = ProjectionHead(linear=linear_projection_head)

    @classmethod
    def from_settings(cls, model_settings) -> 'HandPoseEstimator':
        return cls(
            channels=model_settings.channels,
            refinement_stages=model_settings.refinement_stages,
            branch2_tap=model_settings.branch2_tap,
            combination=model_settings.combination,
            linear_projection_head=model_settings.linear_projection_head,
        )

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def branch1_parameters(self) -> Iterator[nn.Parameter]:
        yield from self.heatmap_net.parameters()
        yield from self.poseprior.parameters()

    def branch2_parameters(self) -> Iterator[nn.Parameter]:
        yield from self.branch2.parameters()
        yield from self.projection_head.parameters()

    def prepare(self, image: torch.Tensor) -> torch.Tensor:
        """HxWx3 / BxHxWx3 images in [0, 1] to a Bx3x256x256 batch in the model dtype."""
        x = images_to_nchw(image)
        if tuple(x.shape[-2:]) != (IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(f'expected {IMAGE_SIZE}x{IMAGE_SIZE} images, got {tuple(x.shape[-2:])}')
        return x.to(self.dtype)

    def _tap(self, features: torch.Tensor, stage1_features: torch.Tensor) -> torch.Tensor:
        return features if self.branch2_tap == 'backbone' else stage1_features

    def heatmap_forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        heatmaps, features, stage1_features, _ = self.heatmap_net(self.prepare(image))
        return heatmaps, self._tap(features, stage1_features)

    def branch2_plain(self, feat: torch.Tensor) -> torch.Tensor:
        return self.branch2.plain(feat)

    def branch2_fused(self, feat: torch.Tensor, clip: torch.Tensor, mode: Optional[str] = None) -> torch.Tensor:
        return self.branch2.fused(feat, clip, mode or self.combination)

    def poseprior_forward(self, heatmaps: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.poseprior(heatmaps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Branch1 only: Bx3x256x256 batch to Bx21x3 root-relative poses."""
        heatmaps, _, _, _ = self.heatmap_net(x)
        canonical, rotation = self.poseprior(heatmaps)
        return compose_pose(canonical, rotation)

    def forward_train(self, x: torch.Tensor, clip: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """
        One pass over both branches for an already prepared Bx3x256x256 batch.

        Without a clip feature Branch2 is skipped and the encodings are None.
        """
        heatmaps, features, stage1_features, stages = self.heatmap_net(x)
        canonical, rotation = self.poseprior(heatmaps)
        out = {
            'heatmaps': heatmaps,
            'stage_heatmaps': stages,
            'canonical': canonical,
            'rotation': rotation,
            'pose': compose_pose(canonical, rotation),
            'encodings_plain': None,
            'encodings_fused': None,
        }
        if clip is not None:
            feat = self._tap(features, stage1_features)
            e1, e2 = self.branch2(feat, clip, self.combination)
            out['encodings_plain'] = self.projection_head(e1)
            out['encodings_fused'] = self.projection_head(e2)
        return out


def predict(model: Optional[HandPoseEstimator], image: torch.Tensor) -> torch.Tensor:
    """
    Test-time path: heatmaps, Poseprior, composition. Branch2 is never touched.

    Returns 21x3 for a single HxWx3 image and Bx21x3 for a batch.
    """
    if model is None:
        raise CheckpointError('no trained model loaded')
    single = torch.as_tensor(image).dim() == 3
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            poses = model(model.prepare(image))
    finally:
        model.train(was_training)
    return poses[0] if single else poses
