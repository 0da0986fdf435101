from typing import Optional

import numpy as np

from data.sample import IMAGE_SIZE
from services.errors import ShapeError
from utils.geometry import N_JOINTS

HEATMAP_SIZE = 32
STRIDE = IMAGE_SIZE // HEATMAP_SIZE


def render_gt_heatmap(joints2d: np.ndarray, sigma: float = 1.5,
                      visible: Optional[np.ndarray] = None) -> np.ndarray:
    """
    One Gaussian per joint on the 32x32 grid, peak normalized to 1.

    Grid cell (x, y) is compared with the joint position divided by the
    stride. Joints outside the 256x256 frame, or flagged invisible, give an
    all-zero channel.
    """
    if sigma <= 0:
        raise ValueError(f'sigma must be positive, got {sigma}')
    joints2d = np.asarray(joints2d, dtype=np.float64)
    if joints2d.shape != (N_JOINTS, 2):
        raise ShapeError(f'expected {N_JOINTS}x2 joints, got {joints2d.shape}')
    in_frame = np.all((joints2d >= 0) & (joints2d < HEATMAP_SIZE * STRIDE), axis=1)
    if visible is not None:
        in_frame &= np.asarray(visible, dtype=bool)

    grid = np.arange(HEATMAP_SIZE, dtype=np.float64)
    centers = joints2d / STRIDE
    dx = grid[None, None, :] - centers[:, 0, None, None]
    dy = grid[None, :, None] - centers[:, 1, None, None]
    log_maps = -(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2)
    # normalizing in log space keeps the peak at exactly 1 for tiny sigma
    maps = np.exp(log_maps - log_maps.max(axis=(1, 2), keepdims=True))
    maps[~in_frame] = 0.0
    return maps.astype(np.float32)
