import pickle
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
import torch
from PIL import Image
from torch.utils.data import Dataset

from data.augment import normal_augment
from data.heatmaps import render_gt_heatmap
from data.sample import IMAGE_SIZE, Sample
from data.synth import random_style, synth_sample
from schemas.sample import ManifestRecord, SampleMeta
from services.errors import DatasetLoadError, InvalidConfigError
from utils.geometry import MIDDLE_MCP, N_JOINTS, ROOT

FORMATS = ('synth', 'freihand', 'stb', 'rhd')

# source joint index for each unified joint
RHD_TO_UNIFIED = (0, 4, 3, 2, 1, 8, 7, 6, 5, 12, 11, 10, 9, 16, 15, 14, 13, 20, 19, 18, 17)
# STB lists the palm center first, then pinky, ring, middle, index, thumb, tip to base
STB_TO_UNIFIED = (0, 20, 19, 18, 17, 16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1)
STB_INTRINSICS = (607.92271, 607.88192, 314.78337, 236.42484)
STB_SPLITS = {
    'training': [f'B{n}{seq}' for n in range(2, 7) for seq in ('Counting', 'Random')],
    'evaluation': [f'B1{seq}' for seq in ('Counting', 'Random')],
}
FREIHAND_SIZE = 224


class HandDataset(Dataset):
    """Indexable collection of Samples; immutable after construction."""

    source = 'abstract'

    def __len__(self) -> int:
        raise NotImplementedError

    def __getitem__(self, index: int) -> Sample:
        raise NotImplementedError

    def sample_id(self, index: int) -> str:
        return self[index].sample_id


class SynthDataset(HandDataset):
    source = 'synth'

    def __init__(self, n: int, seed: int = 0, styles: Optional[Sequence] = None):
        self.seeds = [seed * 1_000_000 + i for i in range(n)]
        self.styles = list(styles) if styles is not None else [None] * n
        self._cache: Dict[int, Sample] = {}

    @classmethod
    def from_seeds(cls, seeds: Sequence[int], styles: Sequence) -> 'SynthDataset':
        dataset = cls(0)
        dataset.seeds, dataset.styles = list(seeds), list(styles)
        return dataset

    def __len__(self) -> int:
        return len(self.seeds)

    def __getitem__(self, index: int) -> Sample:
        # cached pixels are uint8
        if index not in self._cache:
            sample = synth_sample(self.seeds[index], self.styles[index])
            pixels = np.round(sample.image * 255.0).astype(np.uint8)
            self._cache[index] = replace(sample, image=pixels)
        cached = self._cache[index]
        return replace(cached, image=cached.image.astype(np.float32) / 255.0)

    def sample_id(self, index: int) -> str:
        return f'synth-{self.seeds[index]}'


class AnnotatedDataset(HandDataset):
    """File-backed dataset: annotations are loaded up front, images on access."""

    def __init__(self, source: str, joints3d: np.ndarray, joints2d: np.ndarray,
                 visible: np.ndarray, metas: List[SampleMeta]):
        self.source = source
        self.joints3d = joints3d
        self.joints2d = joints2d
        self.visible = visible
        self.metas = metas

    def __len__(self) -> int:
        return len(self.metas)

    def sample_id(self, index: int) -> str:
        return self.metas[index].sample_id

    def __getitem__(self, index: int) -> Sample:
        meta = self.metas[index]
        try:
            with Image.open(meta.image_path) as img:
                image = img.convert('RGB').transform(
                    (IMAGE_SIZE, IMAGE_SIZE), Image.Transform.EXTENT, meta.crop_box,
                    Image.Resampling.BILINEAR)
        except OSError as e:
            raise DatasetLoadError(f'{meta.sample_id}: cannot read image {meta.image_path}: {e}') from e
        return Sample(
            image=np.asarray(image, dtype=np.float32) / 255.0,
            joints3d=self.joints3d[index],
            joints2d=self.joints2d[index],
            meta=meta,
            visible=self.visible[index],
        )


class SubsetDataset(HandDataset):
    def __init__(self, base: HandDataset, indices: Sequence[int]):
        self.base = base
        self.indices = list(indices)
        self.source = base.source

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, index: int) -> Sample:
        return self.base[self.indices[index]]

    def sample_id(self, index: int) -> str:
        return self.base.sample_id(self.indices[index])


class TrainingView(Dataset):
    """Tensors for training and evaluation: image, GT heatmaps, pose, visibility, scale."""

    def __init__(self, dataset: HandDataset, sigma: float = 1.5, augment: bool = False, seed: int = 0):
        self.dataset = dataset
        self.sigma = sigma
        self.augment = augment
        self.seed = seed
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.dataset)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        sample = self.dataset[index]
        image = torch.from_numpy(np.ascontiguousarray(sample.image.transpose(2, 0, 1)))
        if self.augment:
            op_seed = np.random.SeedSequence([self.seed, self.epoch, index]).generate_state(1)[0]
            image = normal_augment(image, seed=int(op_seed))
        scale = sample.meta.scale_mm if sample.meta.scale_mm is not None else float('nan')
        return {
            'index': index,
            'image': image,
            'heatmaps': torch.from_numpy(render_gt_heatmap(sample.joints2d, self.sigma, sample.visible)),
            'joints3d': torch.from_numpy(np.asarray(sample.joints3d, dtype=np.float32)),
            'visible': torch.from_numpy(np.asarray(sample.visible, dtype=bool)),
            'scale': torch.tensor(scale, dtype=torch.float32),
        }


def split_indices(n: int, holdout: int, seed: int = 0) -> Tuple[List[int], List[int]]:
    if not 0 <= holdout < n:
        raise InvalidConfigError(f'holdout must be in [0, {n}), got {holdout}')
    order = np.random.default_rng(seed).permutation(n)
    return sorted(order[holdout:].tolist()), sorted(order[:holdout].tolist())


def normalize_pose(joints_mm: np.ndarray) -> Tuple[np.ndarray, float]:
    relative = joints_mm - joints_mm[ROOT]
    scale = float(np.linalg.norm(relative[MIDDLE_MCP]))
    if not scale > 0:
        raise ValueError('degenerate hand: wrist and middle MCP coincide')
    return relative / scale, scale


def crop_box(uv: np.ndarray, visible: np.ndarray, margin: float = 1.5,
             min_side: float = 48.0) -> Tuple[float, float, float, float]:
    points = uv[visible] if visible.any() else uv
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = (lo + hi) / 2.0
    side = max(float((hi - lo).max()) * margin, min_side)
    return (float(center[0] - side / 2), float(center[1] - side / 2),
            float(center[0] + side / 2), float(center[1] + side / 2))


def _to_crop(uv: np.ndarray, box: Tuple[float, float, float, float]) -> np.ndarray:
    side = box[2] - box[0]
    return (uv - np.asarray(box[:2])) * (IMAGE_SIZE / side)


def _project(points_mm: np.ndarray, k: np.ndarray) -> np.ndarray:
    uvw = points_mm @ k.T
    return uvw[:, :2] / uvw[:, 2:3]


def _build(source: str, records: List[Tuple[str, np.ndarray, np.ndarray, np.ndarray, np.ndarray, str, bool]],
           where: Path) -> AnnotatedDataset:
    """records: (id, joints_mm, uv, visible, K, image_path, crop)."""
    joints3d, joints2d, visible, metas = [], [], [], []
    for sample_id, joints_mm, uv, vis, k, image_path, crop in records:
        try:
            rel, scale = normalize_pose(joints_mm)
        except ValueError as e:
            raise DatasetLoadError(f'{where}: record {sample_id}: {e}') from e
        box = crop_box(uv, vis) if crop else (0.0, 0.0, float(FREIHAND_SIZE), float(FREIHAND_SIZE))
        uv_crop = _to_crop(uv, box)
        joints3d.append(rel.astype(np.float32))
        joints2d.append(uv_crop.astype(np.float32))
        visible.append(vis & np.all((uv_crop >= 0) & (uv_crop < IMAGE_SIZE), axis=1))
        metas.append(SampleMeta(
            sample_id=sample_id,
            source=source,
            scale_mm=scale,
            intrinsics=(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2])),
            root_mm=tuple(float(v) for v in joints_mm[ROOT]),
            image_path=image_path,
            crop_box=box,
        ))
    if not metas:
        raise DatasetLoadError(f'{where}: no records found')
    return AnnotatedDataset(source, np.stack(joints3d), np.stack(joints2d), np.stack(visible), metas)


def _read_json(path: Path):
    try:
        return orjson.loads(path.read_bytes())
    except (OSError, orjson.JSONDecodeError) as e:
        raise DatasetLoadError(f'{path}: {e}') from e


def _checked(array, shape: Tuple[int, ...], where: str) -> np.ndarray:
    try:
        out = np.asarray(array, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DatasetLoadError(f'{where}: not numeric ({e})') from e
    if out.shape != shape or not np.isfinite(out).all():
        raise DatasetLoadError(f'{where}: expected finite array of shape {shape}, got {out.shape}')
    return out


def load_freihand(path: Path, split: str = 'training') -> AnnotatedDataset:
    xyz_list = _read_json(path / f'{split}_xyz.json')
    k_list = _read_json(path / f'{split}_K.json')
    if len(xyz_list) != len(k_list):
        raise DatasetLoadError(f'{path}: {len(xyz_list)} poses but {len(k_list)} camera matrices')
    records = []
    for i, (xyz, k) in enumerate(zip(xyz_list, k_list)):
        where = f'{path / f"{split}_xyz.json"}: record {i}'
        joints_mm = _checked(xyz, (N_JOINTS, 3), where) * 1000.0
        k = _checked(k, (3, 3), f'{path / f"{split}_K.json"}: record {i}')
        uv = _project(joints_mm, k)
        records.append((f'freihand-{split}-{i:08d}', joints_mm, uv, np.ones(N_JOINTS, dtype=bool), k,
                        str(path / split / 'rgb' / f'{i:08d}.jpg'), False))
    return _build('freihand', records, path)


def load_stb(path: Path, split: str = 'evaluation') -> AnnotatedDataset:
    from scipy.io import loadmat

    k = np.array([[STB_INTRINSICS[0], 0.0, STB_INTRINSICS[2]],
                  [0.0, STB_INTRINSICS[1], STB_INTRINSICS[3]],
                  [0.0, 0.0, 1.0]])
    records = []
    for sequence in STB_SPLITS[split]:
        label_path = path / 'labels' / f'{sequence}_SK.mat'
        try:
            hand_para = loadmat(str(label_path))['handPara']
        except (OSError, KeyError, ValueError) as e:
            raise DatasetLoadError(f'{label_path}: {e}') from e
        frames = np.asarray(hand_para, dtype=np.float64).transpose(2, 1, 0)
        for i, joints in enumerate(frames):
            where = f'{label_path}: frame {i}'
            joints_mm = _checked(joints, (N_JOINTS, 3), where)[list(STB_TO_UNIFIED)]
            uv = _project(joints_mm, k)
            records.append((f'stb-{sequence}-{i:04d}', joints_mm, uv, np.ones(N_JOINTS, dtype=bool), k,
                            str(path / sequence / f'SK_color_{i}.png'), True))
    return _build('stb', records, path)


def load_rhd(path: Path, split: str = 'evaluation') -> AnnotatedDataset:
    anno_path = path / split / f'anno_{split}.pickle'
    try:
        with open(anno_path, 'rb') as fh:
            annotations = pickle.load(fh)
    except (OSError, pickle.UnpicklingError, EOFError) as e:
        raise DatasetLoadError(f'{anno_path}: {e}') from e
    if not isinstance(annotations, dict):
        raise DatasetLoadError(f'{anno_path}: expected a mapping of sample id to annotation')
    records = []
    for key in sorted(annotations):
        record = annotations[key]
        where = f'{anno_path}: record {key}'
        if not isinstance(record, dict) or not {'xyz', 'uv_vis', 'K'} <= set(record):
            raise DatasetLoadError(f'{where}: missing xyz, uv_vis or K')
        xyz = _checked(record['xyz'], (2 * N_JOINTS, 3), where)
        uv_vis = _checked(record['uv_vis'], (2 * N_JOINTS, 3), where)
        k = _checked(record['K'], (3, 3), where)
        # keep the hand with more visible keypoints, left on ties
        hand = 0 if uv_vis[:N_JOINTS, 2].sum() >= uv_vis[N_JOINTS:, 2].sum() else 1
        rows = [hand * N_JOINTS + j for j in RHD_TO_UNIFIED]
        records.append((f'rhd-{split}-{int(key):05d}', xyz[rows] * 1000.0, uv_vis[rows, :2],
                        uv_vis[rows, 2] > 0, k, str(path / split / 'color' / f'{int(key):05d}.png'), True))
    return _build('rhd', records, path)


def load_dataset(path: Union[str, Path, None], format: str, split: str = 'training',
                 n_samples: int = 500, seed: int = 0) -> HandDataset:
    if format not in FORMATS:
        raise DatasetLoadError(f'unknown dataset format {format!r}; expected one of {FORMATS}')
    if format == 'synth':
        if path is not None and Path(path).is_file():
            return read_manifest(path)
        return SynthDataset(n_samples, seed)
    if path is None or not Path(path).exists():
        raise DatasetLoadError(f'{format} dataset path {path} does not exist')
    loader = {'freihand': load_freihand, 'stb': load_stb, 'rhd': load_rhd}[format]
    return loader(Path(path), split)


def write_manifest(dataset: SynthDataset, path: Union[str, Path]) -> None:
    with open(path, 'wb') as fh:
        for i in range(len(dataset)):
            sample = dataset[i]
            record = ManifestRecord(
                seed=dataset.seeds[i],
                style=dataset.styles[i] or random_style(dataset.seeds[i]),
                joints3d=sample.joints3d.tolist(),
                joints2d=sample.joints2d.tolist(),
                meta=sample.meta,
            )
            fh.write(orjson.dumps(record.dict()) + b'\n')


def read_manifest(path: Union[str, Path]) -> SynthDataset:
    seeds, styles = [], []
    with open(path, 'rb') as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = ManifestRecord(**orjson.loads(line))
            except (orjson.JSONDecodeError, ValueError) as e:
                raise DatasetLoadError(f'{path}: line {line_no}: {e}') from e
            seeds.append(record.seed)
            styles.append(record.style)
    return SynthDataset.from_seeds(seeds, styles)


def dataset_from_settings(data_settings) -> HandDataset:
    return load_dataset(data_settings.path, data_settings.format, data_settings.split,
                        data_settings.n_samples, data_settings.seed)
