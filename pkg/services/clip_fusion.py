import hashlib
from typing import Sequence, Union

import torch
import torch.nn.functional as F

from schemas.clip import FusionConfig
from schemas.prompt import Prompt
from services.clip_backends import CLIP_DIM, ClipBackend, StubClipBackend
from services.errors import NonFiniteError, ShapeError

TextLike = Union[Prompt, str]


def _text(prompt: TextLike) -> str:
    return prompt.text if isinstance(prompt, Prompt) else prompt


def _checked(features: torch.Tensor, what: str) -> torch.Tensor:
    if features.shape[-1] != CLIP_DIM:
        raise ShapeError(f'{what}: expected {CLIP_DIM}-d features, got {tuple(features.shape)}')
    if not torch.isfinite(features).all():
        raise NonFiniteError(f'{what}: encoder produced non-finite values')
    return features


def stub_encoder(seed: int = 0) -> StubClipBackend:
    return StubClipBackend(seed=seed)


def encode_image(image: torch.Tensor, backend: ClipBackend) -> torch.Tensor:
    """A single HxWx3 image to its 512-d feature."""
    return _checked(backend.encode_images(image)[0], 'encode_image')


def encode_text(prompt: TextLike, backend: ClipBackend) -> torch.Tensor:
    return _checked(backend.encode_texts([_text(prompt)])[0], 'encode_text')


def encode_images(images: torch.Tensor, backend: ClipBackend) -> torch.Tensor:
    return _checked(backend.encode_images(images), 'encode_images')


def encode_texts(prompts: Sequence[TextLike], backend: ClipBackend) -> torch.Tensor:
    return _checked(backend.encode_texts([_text(p) for p in prompts]), 'encode_texts')


def fuse(img: torch.Tensor, txt: torch.Tensor, cfg: FusionConfig) -> torch.Tensor:
    if img.shape[-1] != CLIP_DIM or txt.shape[-1] != CLIP_DIM:
        raise ShapeError(f'fuse: both inputs must be {CLIP_DIM}-d, got {tuple(img.shape)} and {tuple(txt.shape)}')
    if cfg.normalize_inputs:
        img = F.normalize(img, dim=-1)
        txt = F.normalize(txt, dim=-1)
    r = cfg.image_ratio
    return r * img + (1.0 - r) * txt


def clip_feature(images: torch.Tensor, prompts: Sequence[TextLike], backend: ClipBackend,
                 cfg: FusionConfig, variant: str = 'ie+te') -> torch.Tensor:
    """
    Batched f^CLIP(x, t) for a batch of images and one prompt per image.

    `ie` keeps the image feature only, `te` the text feature only.
    """
    if variant == 'ie':
        cfg = FusionConfig(image_ratio=1.0, normalize_inputs=cfg.normalize_inputs)
    elif variant == 'te':
        cfg = FusionConfig(image_ratio=0.0, normalize_inputs=cfg.normalize_inputs)
    img = encode_images(images, backend)
    txt = encode_texts(prompts, backend)
    return fuse(img, txt, cfg)


def backend_checksum(backend: ClipBackend) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(backend.state_dict().items()):
        digest.update(name.encode('utf-8'))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
