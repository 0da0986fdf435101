from typing import Tuple

import torch
import torch.nn as nn

from models.layers import conv_relu, mlp
from services.errors import InvalidConfigError, ShapeError

CLIP_DIM = 512
INTERMEDIATE_DIM = 512
ENCODING_DIM = 128
COMBINATIONS = ('concat', 'sum')


class Branch2(nn.Module):
    """
    Training-only branch producing the plain (e1) and CLIP-fused (e2) features.

    The ConvBlock and its 512-d projection are shared by both paths; the
    fused path then maps through its own FC layers.
    """

    def __init__(self, channels: int = 32):
        super().__init__()
        self.in_channels = channels
        self.conv_block = nn.Sequential(
            conv_relu(channels, 64, stride=2),
            conv_relu(64, 64, stride=2),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
        )
        self.projection = nn.Linear(64 * 4 * 4, INTERMEDIATE_DIM)
        self.fc_concat = mlp(INTERMEDIATE_DIM + CLIP_DIM, INTERMEDIATE_DIM, INTERMEDIATE_DIM)
        self.fc_sum = mlp(INTERMEDIATE_DIM, INTERMEDIATE_DIM, INTERMEDIATE_DIM)

    def _project(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.dim() != 4 or feat.shape[1] != self.in_channels:
            raise ShapeError(f'branch2 expects Bx{self.in_channels}xHxW features, got {tuple(feat.shape)}')
        return self.projection(self.conv_block(feat))

    def plain(self, feat: torch.Tensor) -> torch.Tensor:
        return self._project(feat)

    def fused(self, feat: torch.Tensor, clip: torch.Tensor, mode: str = 'concat') -> torch.Tensor:
        return self._fuse(self._project(feat), clip, mode)

    def forward(self, feat: torch.Tensor, clip: torch.Tensor,
                mode: str = 'concat') -> Tuple[torch.Tensor, torch.Tensor]:
        """(e1, e2) with the ConvBlock evaluated once."""
        z = self._project(feat)
        return z, self._fuse(z, clip, mode)

    def _fuse(self, z: torch.Tensor, clip: torch.Tensor, mode: str) -> torch.Tensor:
        if mode not in COMBINATIONS:
            raise InvalidConfigError(f'combination mode must be one of {COMBINATIONS}, got {mode!r}')
        if clip.shape[-1] != CLIP_DIM:
            raise ShapeError(f'clip feature must be {CLIP_DIM}-d, got {tuple(clip.shape)}')
        clip = clip.to(z.dtype).expand(z.shape[0], CLIP_DIM)
        if mode == 'concat':
            return self.fc_concat(torch.cat([z, clip], dim=-1))
        return self.fc_sum(z + clip)


class ProjectionHead(nn.Module):
    """512 -> 512 -> 128 MLP shared by the plain and fused paths."""

    def __init__(self, linear: bool = False):
        super().__init__()
        self.fc1 = nn.Linear(INTERMEDIATE_DIM, INTERMEDIATE_DIM)
        self.activation = nn.Identity() if linear else nn.ReLU()
        self.fc2 = nn.Linear(INTERMEDIATE_DIM, ENCODING_DIM)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        if e.shape[-1] != INTERMEDIATE_DIM:
            raise ShapeError(f'projection head expects {INTERMEDIATE_DIM}-d input, got {tuple(e.shape)}')
        return self.fc2(self.activation(self.fc1(e)))
