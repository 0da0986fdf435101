"""
Post-hoc analysis over CLIP features: similarity ranking, gallery building,
embedding export and contact sheets. Nothing here modifies a checkpoint or a cache.
"""
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import torch
from PIL import Image, ImageDraw

from data.datasets import HandDataset
from schemas.analysis import EmbeddingExport, EmbeddingRecord, FeatureRecord, RankedItem
from schemas.clip import FusionConfig
from services.clip_backends import ClipBackend
from services.clip_fusion import TextLike, encode_image, encode_images, encode_text, fuse
from services.errors import DegenerateInputError, InvalidConfigError
from services.feature_cache import read_cache, write_cache
from utils.logging import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def rank_by_similarity(query, gallery: Sequence[FeatureRecord], top_k: Optional[int] = None) -> List[RankedItem]:
    """
    Gallery records by descending cosine similarity to `query`, ties by sample_id.

    Zero-norm gallery features are skipped with a warning.
    """
    if not gallery:
        raise DegenerateInputError('gallery is empty')
    q = np.asarray(torch.as_tensor(query).detach().cpu().double().numpy()).reshape(-1)
    if not np.linalg.norm(q) > 0:
        raise DegenerateInputError('query feature has zero norm')
    scored: List[Tuple[float, str]] = []
    for record in gallery:
        v = np.asarray(record.feature, dtype=np.float64)
        if not np.linalg.norm(v) > 0:
            logger.warning('zero-norm gallery feature skipped', extra={'sample_id': record.sample_id})
            continue
        scored.append((cosine(q, v), record.sample_id))
    scored.sort(key=lambda item: (-item[0], item[1]))
    if top_k is not None:
        scored = scored[:top_k]
    return [RankedItem(rank=i + 1, sample_id=sid, score=s) for i, (s, sid) in enumerate(scored)]


def build_aug_feature(image, prompt: TextLike, weight: float, backend: ClipBackend,
                      normalize_inputs: bool = True) -> torch.Tensor:
    """Weighted sum of the image feature and the prompt feature; weight is the image share."""
    if not 0.0 <= weight <= 1.0:
        raise InvalidConfigError(f'weight must be in [0, 1], got {weight}')
    with torch.no_grad():
        img = encode_image(torch.as_tensor(image), backend)
        txt = encode_text(prompt, backend)
    return fuse(img, txt, FusionConfig(image_ratio=weight, normalize_inputs=normalize_inputs))


def build_gallery(dataset: HandDataset, backend: ClipBackend, tag: str = 'frei',
                  exclude_id: Optional[str] = None, batch_size: int = 16) -> List[FeatureRecord]:
    """Image features of every sample except `exclude_id`."""
    indices = [i for i in range(len(dataset)) if dataset.sample_id(i) != exclude_id]
    records = []
    for start in range(0, len(indices), batch_size):
        samples = [dataset[i] for i in indices[start:start + batch_size]]
        with torch.no_grad():
            features = encode_images(torch.from_numpy(np.stack([s.image for s in samples])), backend)
        for s, f in zip(samples, features):
            records.append(FeatureRecord(sample_id=s.sample_id, feature=f.double().tolist(), tag=tag))
    return records


def save_gallery(records: Sequence[FeatureRecord], path: PathLike) -> None:
    write_cache(path, {r.sample_id: np.asarray(r.feature, dtype=np.float32) for r in records})


def load_gallery(path: PathLike, tag: str = 'frei', exclude_id: Optional[str] = None) -> List[FeatureRecord]:
    return [FeatureRecord(sample_id=sid, feature=v.astype(np.float64).tolist(), tag=tag)
            for sid, v in read_cache(path).items() if sid != exclude_id]


def pca2d(features: np.ndarray) -> Tuple[np.ndarray, List[float]]:
    """2-d coordinates on the top two principal axes, and their explained-variance ratios."""
    if features.shape[0] < 2:
        raise DegenerateInputError(f'pca2d needs at least 2 records, got {features.shape[0]}')
    centered = features - features.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, float(np.abs(features).max())):
        raise DegenerateInputError('feature matrix has rank 0 after centering')
    components = vt[:2]
    if components.shape[0] < 2:
        components = np.vstack([components, np.zeros_like(components[0])])
    # fix each axis sign so its largest loading is positive
    for axis in components:
        if axis[np.argmax(np.abs(axis))] < 0:
            axis *= -1.0
    variance = s ** 2
    ratios = [float(variance[i] / variance.sum()) if i < variance.size else 0.0 for i in range(2)]
    return centered @ components.T, ratios


def export_embeddings(records: Sequence[FeatureRecord], projection: str, path: PathLike) -> EmbeddingExport:
    """
    Write one JSON line per record, preceded by a header line.

    The header holds the projection and, for pca2d, the explained-variance ratios.
    """
    if projection not in ('none', 'pca2d'):
        raise InvalidConfigError(f'unknown projection {projection!r}')
    features = np.asarray([r.feature for r in records], dtype=np.float64)
    ratios = None
    if projection == 'pca2d':
        features, ratios = pca2d(features)
    export = EmbeddingExport(
        projection=projection,
        explained_variance_ratio=ratios,
        records=[EmbeddingRecord(sample_id=r.sample_id, tag=r.tag, vector=f.tolist())
                 for r, f in zip(records, features)],
    )
    with open(path, 'wb') as fh:
        fh.write(orjson.dumps({'projection': projection, 'explained_variance_ratio': ratios}) + b'\n')
        for record in export.records:
            fh.write(orjson.dumps(record.dict()) + b'\n')
    return export


def read_embeddings(path: PathLike) -> EmbeddingExport:
    lines = [line for line in Path(path).read_bytes().splitlines() if line.strip()]
    if not lines:
        raise DegenerateInputError(f'{path}: empty embedding file')
    header = orjson.loads(lines[0])
    return EmbeddingExport(
        projection=header['projection'],
        explained_variance_ratio=header.get('explained_variance_ratio'),
        records=[EmbeddingRecord(**orjson.loads(line)) for line in lines[1:]],
    )


def contact_sheet(images: Sequence[np.ndarray], path: PathLike, labels: Optional[Sequence[str]] = None,
                  columns: int = 5, thumb: int = 128) -> Path:
    """Grid PNG of HxWx3 images in [0, 1], captioned with `labels` when given."""
    if len(images) == 0:
        raise DegenerateInputError('no images for the contact sheet')
    rows = math.ceil(len(images) / columns)
    caption = 14 if labels else 0
    sheet = Image.new('RGB', (columns * thumb, rows * (thumb + caption)), (255, 255, 255))
    draw = ImageDraw.Draw(sheet)
    for i, image in enumerate(images):
        pixels = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        tile = Image.fromarray(pixels).resize((thumb, thumb), Image.Resampling.BILINEAR)
        x, y = (i % columns) * thumb, (i // columns) * (thumb + caption)
        sheet.paste(tile, (x, y))
        if labels:
            draw.text((x + 2, y + thumb + 1), str(labels[i])[:20], fill=(0, 0, 0))
    path = Path(path)
    sheet.save(path)
    return path
