"""
Binary cache of 512-d features keyed by sample id.

Layout (little endian):
    magic  b'HCFC'
    u16    version
    u32    entry count
    u16    feature dim
    then per entry: u16 id length, UTF-8 id, dim x float32
"""
import os
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from services.errors import FeatureCacheError

MAGIC = b'HCFC'
VERSION = 1
_HEADER = struct.Struct('<4sHIH')
_ID_LEN = struct.Struct('<H')


def write_cache(path: Union[str, Path], features: Mapping[str, np.ndarray], dim: int = 512) -> None:
    """Every entry is checked before anything is written; the file is replaced atomically."""
    chunks = [_HEADER.pack(MAGIC, VERSION, len(features), dim)]
    for sample_id, vector in features.items():
        vector = np.asarray(vector, dtype='<f4').reshape(-1)
        if vector.shape[0] != dim:
            raise FeatureCacheError(f'{sample_id}: expected {dim} values, got {vector.shape[0]}')
        encoded = sample_id.encode('utf-8')
        if len(encoded) > 0xFFFF:
            raise FeatureCacheError(f'{sample_id[:32]}...: id longer than {0xFFFF} bytes')
        chunks += [_ID_LEN.pack(len(encoded)), encoded, vector.tobytes()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'wb') as fh:
        fh.writelines(chunks)
    os.replace(tmp, path)


def read_cache(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FeatureCacheError(f'{path}: truncated header')
    magic, version, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureCacheError(f'{path}: not a feature cache')
    if version != VERSION:
        raise FeatureCacheError(f'{path}: unsupported version {version}')
    offset = _HEADER.size
    features = {}
    try:
        for _ in range(count):
            (n,) = _ID_LEN.unpack_from(data, offset)
            offset += _ID_LEN.size
            sample_id = data[offset:offset + n].decode('utf-8')
            offset += n
            vector = np.frombuffer(data, dtype='<f4', count=dim, offset=offset).astype(np.float32)
            offset += 4 * dim
            features[sample_id] = vector
    except (struct.error, ValueError) as e:
        raise FeatureCacheError(f'{path}: corrupt entry after {len(features)} records') from e
    if offset != len(data):
        raise FeatureCacheError(f'{path}: {len(data) - offset} trailing bytes')
    return features


def merge_caches(*paths: Union[str, Path]) -> Dict[str, np.ndarray]:
    merged: Dict[str, np.ndarray] = {}
    for path in paths:
        merged.update(read_cache(path))
    return merged
