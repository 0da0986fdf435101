"""
Versioned checkpoint container.

Layout (little endian):
    magic  b'HCKP'
    u16    version
    u32    metadata length
    orjson metadata (architecture, training config, epoch, step, RNG state,
           and a table of the tensors that follow)
    each tensor as float32, in table order
"""
import base64
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import orjson
import torch

from models.estimator import HandPoseEstimator
from services.errors import CheckpointError
from services.optim import HandAdam
from utils.logging import get_logger

logger = get_logger(__name__)

MAGIC = b'HCKP'
VERSION = 1
_HEADER = struct.Struct('<4sHI')

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    metadata: Dict[str, Any]
    tensors: Dict[str, torch.Tensor]

    @property
    def epoch(self) -> int:
        return int(self.metadata.get('epoch', 0))

    @property
    def step(self) -> int:
        return int(self.metadata.get('step', 0))


def architecture_hash(model: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(f'{name}:{tuple(tensor.shape)};'.encode('utf-8'))
    return digest.hexdigest()


def encode_rng_state(state: torch.Tensor) -> str:
    return base64.b64encode(state.numpy().tobytes()).decode('ascii')


def decode_rng_state(text: str) -> torch.Tensor:
    return torch.from_numpy(np.frombuffer(base64.b64decode(text), dtype=np.uint8).copy())


def save_checkpoint(path: PathLike, model: HandPoseEstimator, optimizer: Optional[HandAdam] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    tensors: Dict[str, torch.Tensor] = {f'model.{k}': v for k, v in model.state_dict().items()}
    meta = dict(metadata or {})
    meta['architecture'] = model.config
    meta['architecture_hash'] = architecture_hash(model)
    if optimizer is not None:
        steps, exp_avg, exp_avg_sq = optimizer.flat_state()
        meta['adam_steps'] = steps
        for i, (m, v) in enumerate(zip(exp_avg, exp_avg_sq)):
            tensors[f'adam.exp_avg.{i}'] = m
            tensors[f'adam.exp_avg_sq.{i}'] = v
    meta['tensors'] = [{'name': name, 'shape': list(t.shape)} for name, t in tensors.items()]

    blob = orjson.dumps(meta, default=str)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'wb') as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for t in tensors.values():
            fh.write(t.detach().to(torch.float32).cpu().contiguous().numpy().astype('<f4').tobytes())
    os.replace(tmp, path)
    logger.info('checkpoint written', extra={'path': str(path), 'epoch': meta.get('epoch'),
                                             'step': meta.get('step')})
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f'{path}: {e}') from e
    if len(data) < _HEADER.size:
        raise CheckpointError(f'{path}: truncated header')
    magic, version, meta_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f'{path}: not a checkpoint')
    if version != VERSION:
        raise CheckpointError(f'{path}: unsupported checkpoint version {version}')
    offset = _HEADER.size
    try:
        metadata = orjson.loads(data[offset:offset + meta_len])
    except orjson.JSONDecodeError as e:
        raise CheckpointError(f'{path}: unreadable metadata ({e})') from e
    offset += meta_len

    tensors = {}
    for entry in metadata.get('tensors', []):
        shape = tuple(entry['shape'])
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(data):
            raise CheckpointError(f'{path}: truncated at tensor {entry["name"]}')
        array = np.frombuffer(data, dtype='<f4', count=count, offset=offset).astype(np.float32)
        tensors[entry['name']] = torch.from_numpy(array.reshape(shape))
        offset += 4 * count
    if offset != len(data):
        raise CheckpointError(f'{path}: {len(data) - offset} trailing bytes')
    return Checkpoint(metadata, tensors)


def restore_model(model: HandPoseEstimator, checkpoint: Checkpoint) -> HandPoseEstimator:
    if checkpoint.metadata.get('architecture_hash') != architecture_hash(model):
        raise CheckpointError('checkpoint architecture does not match the model')
    reference = model.state_dict()
    state = {k[len('model.'):]: v.to(reference[k[len('model.'):]].dtype)
             for k, v in checkpoint.tensors.items() if k.startswith('model.')}
    model.load_state_dict(state)
    return model


def restore_optimizer(optimizer: HandAdam, checkpoint: Checkpoint) -> HandAdam:
    steps = checkpoint.metadata.get('adam_steps')
    if steps is None:
        raise CheckpointError('checkpoint carries no optimizer state')
    exp_avg = [checkpoint.tensors[f'adam.exp_avg.{i}'] for i in range(len(steps))]
    exp_avg_sq = [checkpoint.tensors[f'adam.exp_avg_sq.{i}'] for i in range(len(steps))]
    try:
        optimizer.load_flat_state(steps, exp_avg, exp_avg_sq)
    except ValueError as e:
        raise CheckpointError(f'optimizer state does not fit: {e}') from e
    return optimizer


def load_model(source: Union[PathLike, Checkpoint]) -> HandPoseEstimator:
    checkpoint = source if isinstance(source, Checkpoint) else load_checkpoint(source)
    architecture = checkpoint.metadata.get('architecture')
    if not isinstance(architecture, dict):
        raise CheckpointError('checkpoint carries no architecture description')
    model = HandPoseEstimator(**architecture)
    restore_model(model, checkpoint)
    return model.eval()
