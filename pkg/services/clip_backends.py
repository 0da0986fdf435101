import hashlib
from abc import ABC, abstractmethod
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from services.errors import EncoderUnavailableError, InvalidPromptError, ShapeError
from utils.logging import get_logger

logger = get_logger(__name__)

CLIP_DIM = 512
NATIVE_RESOLUTION = 224
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


def images_to_nchw(images: torch.Tensor) -> torch.Tensor:
    """Accept HxWx3, BxHxWx3 or Bx3xHxW images in [0, 1] and return Bx3xHxW float32."""
    images = torch.as_tensor(images)
    if images.dim() == 3:
        images = images.unsqueeze(0)
    if images.dim() == 4 and images.shape[1] == 3 and images.shape[-1] != 3:
        return images.contiguous().float()
    if images.dim() != 4 or images.shape[-1] != 3:
        raise ShapeError(f'expected HxWx3 or BxHxWx3 images, got {tuple(images.shape)}')
    return images.permute(0, 3, 1, 2).contiguous().float()


def resample(images_nchw: torch.Tensor, size: int = NATIVE_RESOLUTION) -> torch.Tensor:
    return F.interpolate(images_nchw, size=(size, size), mode='bilinear', align_corners=False)


def check_texts(texts: Sequence[str]) -> List[str]:
    texts = list(texts)
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise InvalidPromptError('prompt text must be a non-empty string')
    return texts


class ClipBackend(nn.Module, ABC):
    """Frozen image/text encoder pair producing CLIP_DIM vectors."""

    name: str = 'abstract'

    def freeze(self) -> 'ClipBackend':
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def train(self, mode: bool = True):
        # encoders never leave eval mode
        return super().train(False)

    @abstractmethod
    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        ...

    @abstractmethod
    def encode_texts(self, texts: Sequence[str]) -> torch.Tensor:
        ...


class StubClipBackend(ClipBackend):
    """
    Deterministic test double.

    Each input is hashed together with the seed; the digest seeds a Gaussian
    draw that is normalized to unit length and rotated by a fixed orthogonal
    matrix. Outputs therefore have norm 1 up to float rounding.
    """

    name = 'stub'

    def __init__(self, seed: int = 0, dim: int = CLIP_DIM):
        super().__init__()
        self.seed = seed
        self.dim = dim
        gen = torch.Generator().manual_seed(seed)
        q, _ = torch.linalg.qr(torch.randn(dim, dim, generator=gen, dtype=torch.float64))
        self.mixing = nn.Parameter(q.float(), requires_grad=False)
        self.freeze()

    def _vector(self, kind: bytes, payload: bytes) -> torch.Tensor:
        digest = hashlib.sha256(self.seed.to_bytes(8, 'little', signed=True) + kind + payload).digest()
        gen = torch.Generator().manual_seed(int.from_bytes(digest[:8], 'little') & ((1 << 63) - 1))
        v = torch.randn(self.dim, generator=gen, dtype=torch.float64)
        return (v / v.norm()).float()

    @torch.no_grad()
    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        batch = resample(images_to_nchw(images))
        quantized = (batch.clamp(0, 1) * 255).round().to(torch.uint8).numpy()
        raw = torch.stack([self._vector(b'image', np.ascontiguousarray(x).tobytes()) for x in quantized])
        return raw @ self.mixing.T

    @torch.no_grad()
    def encode_texts(self, texts: Sequence[str]) -> torch.Tensor:
        texts = check_texts(texts)
        raw = torch.stack([self._vector(b'text', t.encode('utf-8')) for t in texts])
        return raw @ self.mixing.T


class PretrainedClipBackend(ClipBackend):
    name = 'pretrained'

    def __init__(self, pretrained_id: str = 'ViT-B-32/openai'):
        super().__init__()
        try:
            import open_clip
        except ImportError as e:
            raise EncoderUnavailableError('open_clip is not installed; install open-clip-torch '
                                          'or use clip.backend=stub') from e
        arch, _, tag = pretrained_id.partition('/')
        try:
            model, _, _ = open_clip.create_model_and_transforms(arch, pretrained=tag or None)
        except Exception as e:  # download or weight errors surface as many types
            raise EncoderUnavailableError(f'could not load pretrained CLIP {pretrained_id}: {e}') from e
        self.model = model
        self.tokenizer = open_clip.get_tokenizer(arch)
        self.register_buffer('mean', torch.tensor(CLIP_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer('std', torch.tensor(CLIP_STD).view(1, 3, 1, 1), persistent=False)
        self.freeze()
        logger.info('loaded pretrained clip', extra={'pretrained_id': pretrained_id})

    @torch.no_grad()
    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        batch = F.interpolate(images_to_nchw(images), size=(NATIVE_RESOLUTION, NATIVE_RESOLUTION),
                              mode='bicubic', align_corners=False).clamp(0, 1)
        return self.model.encode_image((batch - self.mean) / self.std).float()

    @torch.no_grad()
    def encode_texts(self, texts: Sequence[str]) -> torch.Tensor:
        tokens = self.tokenizer(check_texts(texts))
        return self.model.encode_text(tokens).float()


def load_backend(backend: str = 'stub', seed: int = 0, pretrained_id: str = 'ViT-B-32/openai') -> ClipBackend:
    if backend == 'stub':
        return StubClipBackend(seed=seed)
    if backend == 'pretrained':
        return PretrainedClipBackend(pretrained_id)
    raise EncoderUnavailableError(f'unknown clip backend {backend!r}')
