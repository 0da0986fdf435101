from typing import Tuple

import torch
import torch.nn as nn

from data.heatmaps import HEATMAP_SIZE
from models.layers import conv_relu, mlp
from services.errors import ShapeError
from utils.geometry import N_JOINTS, nearest_rotation, root_relative

HEATMAP_SHAPE = (N_JOINTS, HEATMAP_SIZE, HEATMAP_SIZE)


class PosePriorNet(nn.Module):
    """Lifts heatmaps to a canonical 3D pose and a rotation into camera space."""

    def __init__(self, hidden: int = 256):
        super().__init__()
        self.encoder = nn.Sequential(
            conv_relu(N_JOINTS, 32, stride=2),
            conv_relu(32, 64, stride=2),
            conv_relu(64, 64, stride=2),
            nn.Flatten(),
        )
        self.shared = mlp(64 * 4 * 4, hidden, final_activation=True)
        self.canonical_stream = mlp(hidden, 128, N_JOINTS * 3)
        self.rotation_stream = mlp(hidden, 128, 9)
        rot_out = self.rotation_stream[-1]
        with torch.no_grad():
            rot_out.weight.mul_(0.01)
            rot_out.bias.copy_(torch.eye(3).flatten())

    def forward(self, heatmaps: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if tuple(heatmaps.shape[-3:]) != HEATMAP_SHAPE or heatmaps.dim() != 4:
            raise ShapeError(f'poseprior expects Bx21x32x32 heatmaps, got {tuple(heatmaps.shape)}')
        shared = self.shared(self.encoder(heatmaps))
        canonical = root_relative(self.canonical_stream(shared).view(-1, N_JOINTS, 3))
        rotation = nearest_rotation(self.rotation_stream(shared).view(-1, 3, 3))
        return canonical, rotation
