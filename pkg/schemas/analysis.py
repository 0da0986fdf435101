import math
from typing import List, Literal, Optional

from pydantic import BaseModel, constr, validator

CLIP_DIM = 512


class FeatureRecord(BaseModel):
    sample_id: str
    feature: List[float]
    tag: constr(min_length=1) = 'frei'

    @validator('feature')
    def finite_clip_vector(cls, v):
        if len(v) != CLIP_DIM:
            raise ValueError(f'expected a {CLIP_DIM}-d feature, got {len(v)} values')
        if not all(math.isfinite(x) for x in v):
            raise ValueError('feature holds non-finite values')
        return v


class RankedItem(BaseModel):
    rank: int
    sample_id: str
    score: float


class EmbeddingRecord(BaseModel):
    sample_id: str
    tag: str
    vector: List[float]


class EmbeddingExport(BaseModel):
    projection: Literal['none', 'pca2d']
    explained_variance_ratio: Optional[List[float]] = None
    records: List[EmbeddingRecord]
