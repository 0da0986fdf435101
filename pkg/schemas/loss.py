import math

from pydantic import BaseModel, validator


class LossWeights(BaseModel):
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1

    @validator('lambda1', 'lambda2', 'lambda3')
    def finite_non_negative(cls, v):
        if not math.isfinite(v) or v < 0:
            raise ValueError(f'loss weights must be finite and non-negative, got {v}')
        return v
