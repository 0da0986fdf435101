from typing import List

from pydantic import BaseModel, confloat, conint, validator

from utils.geometry import N_JOINTS


class EvalReport(BaseModel):
    epe_mm: confloat(ge=0)
    per_joint_epe: List[float]
    n_samples: conint(ge=1)
    auc_20_50: confloat(ge=0, le=1) = 0.0
    pck_thresholds: List[float] = []
    pck: List[float] = []

    @validator('per_joint_epe')
    def one_value_per_joint(cls, v):
        if len(v) != N_JOINTS:
            raise ValueError(f'expected {N_JOINTS} per-joint errors, got {len(v)}')
        return v


class CrossValidationReport(BaseModel):
    best: dict
    grid: List[dict]
    mean_epe: List[float]
    fold_epe: List[List[float]]
