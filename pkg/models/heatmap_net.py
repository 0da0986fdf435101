from typing import List, Tuple

import torch
import torch.nn as nn

from models.layers import conv_relu
from utils.geometry import N_JOINTS


class HeatmapNet(nn.Module):
    """
    Small convolutional-pose-machine stack (Branch1).

    A conv/pool backbone brings 256x256 images to 32x32 features. A first
    stage predicts heatmaps from those features; each refinement stage
    consumes the features concatenated with the previous stage's heatmaps.
    """

    def __init__(self, channels: int = 32, refinement_stages: int = 2, zero_init_final: bool = False):
        super().__init__()
        self.backbone = nn.Sequential(
            conv_relu(3, 16, stride=2),
            conv_relu(16, channels),
            nn.MaxPool2d(2),
            conv_relu(channels, channels),
            nn.MaxPool2d(2),
            conv_relu(channels, channels),
        )
        self.stage1_body = conv_relu(channels, channels)
        self.stage1_head = nn.Conv2d(channels, N_JOINTS, 1)
        self.refinements = nn.ModuleList([
            nn.Sequential(
                conv_relu(channels + N_JOINTS, channels),
                conv_relu(channels, channels),
                nn.Conv2d(channels, N_JOINTS, 1),
            )
            for _ in range(refinement_stages)
        ])
        if zero_init_final:
            nn.init.zeros_(self.final_layer.weight)
            nn.init.zeros_(self.final_layer.bias)

    @property
    def final_layer(self) -> nn.Conv2d:
        return self.refinements[-1][-1] if len(self.refinements) else self.stage1_head

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, List[torch.Tensor]]:
        """Returns final heatmaps, backbone features, stage-1 features and every stage's heatmaps."""
        features = self.backbone(x)
        stage1_features = self.stage1_body(features)
        heatmaps = self.stage1_head(stage1_features)
        stages = [heatmaps]
        for refine in self.refinements:
            heatmaps = refine(torch.cat([features, heatmaps], dim=1))
            stages.append(heatmaps)
        return heatmaps, features, stage1_features, stages
