"""The six conventional image augmentations used as a baseline comparison."""
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

OPS = ('color_jitter', 'cutout', 'gaussian_noise', 'sobel', 'color_drop', 'gaussian_blur')


def _color_jitter(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    brightness, contrast, saturation = rng.uniform(0.7, 1.3, size=3)
    img = img * brightness
    mean = img.mean()
    img = (img - mean) * contrast + mean
    gray = img.mean(dim=0, keepdim=True)
    return (img - gray) * saturation + gray


def _cutout(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    size = int(rng.integers(32, 96))
    y, x = rng.integers(0, img.shape[1] - size, size=2)
    img = img.clone()
    img[:, y:y + size, x:x + size] = 0.0
    return img


def _gaussian_noise(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    noise = torch.from_numpy(rng.normal(0.0, 0.05, size=img.shape).astype(np.float32))
    return img + noise


def _sobel(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    kx = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    kernels = torch.stack([kx, kx.T])[:, None]
    gray = img.mean(dim=0, keepdim=True)[None]
    grad = F.conv2d(gray, kernels, padding=1)
    magnitude = grad.pow(2).sum(dim=1).sqrt()
    return magnitude.expand(3, -1, -1) / magnitude.max().clamp_min(1e-6)


def _color_drop(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    return img.mean(dim=0, keepdim=True).expand(3, -1, -1).clone()


def _gaussian_blur(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    sigma = rng.uniform(0.5, 2.0)
    radius = int(np.ceil(3 * sigma))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float32)
    kernel = torch.exp(-xs ** 2 / (2 * sigma ** 2))
    kernel = kernel / kernel.sum()
    x = img[:, None]
    x = F.conv2d(F.pad(x, (radius, radius, 0, 0), mode='reflect'), kernel.view(1, 1, 1, -1))
    x = F.conv2d(F.pad(x, (0, 0, radius, radius), mode='reflect'), kernel.view(1, 1, -1, 1))
    return x[:, 0]


_FUNCS = {
    'color_jitter': _color_jitter,
    'cutout': _cutout,
    'gaussian_noise': _gaussian_noise,
    'sobel': _sobel,
    'color_drop': _color_drop,
    'gaussian_blur': _gaussian_blur,
}


def normal_augment(image: torch.Tensor, seed: int, ops: Optional[Sequence[str]] = None) -> torch.Tensor:
    """Apply one randomly chosen op from `ops` to a 3xHxW image in [0, 1]."""
    ops = list(ops or OPS)
    unknown = set(ops) - set(_FUNCS)
    if unknown:
        raise ValueError(f'unknown augmentation ops {sorted(unknown)}')
    rng = np.random.default_rng(seed)
    op = ops[int(rng.integers(len(ops)))]
    return _FUNCS[op](image, rng).clamp(0.0, 1.0)
