from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, BaseSettings, root_validator, validator


class ClipSettings(BaseModel):
    backend: Literal['pretrained', 'stub'] = 'stub'
    image_ratio: float = 0.6
    normalize_inputs: bool = True
    pretrained_id: str = 'ViT-B-32/openai'
    stub_seed: int = 0
    # ie+te fuses both features; ie and te keep only one of them
    variant: Literal['ie+te', 'ie', 'te'] = 'ie+te'
    cache_path: Optional[Path] = None

    @validator('image_ratio')
    def ratio_in_unit_interval(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f'image_ratio must be in [0, 1], got {v}')
        return v


class LossSettings(BaseModel):
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    margin: float = 0.5
    mining_metric: Literal['l2', 'l1'] = 'l2'
    reduction: Literal['mean', 'sum'] = 'mean'
    clamp_mode: Literal['max', 'min'] = 'max'

    @validator('lambda1', 'lambda2', 'lambda3')
    def finite_non_negative(cls, v):
        if not (v >= 0.0 and v != float('inf')):
            raise ValueError(f'loss weights must be finite and non-negative, got {v}')
        return v


class ModelSettings(BaseModel):
    channels: int = 32
    refinement_stages: int = 2
    branch2_tap: Literal['backbone', 'stage1'] = 'backbone'
    combination: Literal['concat', 'sum'] = 'concat'
    stage_loss: bool = False
    linear_projection_head: bool = False


class DataSettings(BaseModel):
    format: Literal['synth', 'freihand', 'stb', 'rhd'] = 'synth'
    path: Optional[Path] = None
    split: Literal['training', 'evaluation'] = 'training'
    n_samples: int = 500
    holdout: int = 100
    sigma: float = 1.5
    seed: int = 0
    augment: bool = False

    @validator('sigma')
    def sigma_positive(cls, v):
        if v <= 0:
            raise ValueError('sigma must be positive')
        return v


class TrainSettings(BaseModel):
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-4
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    prompt_policy: Literal['per-sample', 'per-batch', 'per-epoch'] = 'per-sample'
    seed: int = 0
    checkpoint_dir: Path = Path('checkpoints')
    log_csv: Optional[Path] = None
    num_workers: int = 0

    @validator('learning_rate')
    def lr_positive(cls, v):
        if v <= 0:
            raise ValueError('learning_rate must be positive')
        return v

    @validator('batch_size', 'epochs')
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError('must be at least 1')
        return v


class ApiSettings(BaseModel):
    api_v1: str = '/api/v1'
    checkpoint: Optional[Path] = None


class Settings(BaseSettings):
    app_name: str = 'Hand CLIP Pose'
    log_level: str = 'INFO'
    clip: ClipSettings = ClipSettings()
    loss: LossSettings = LossSettings()
    model: ModelSettings = ModelSettings()
    data: DataSettings = DataSettings()
    train: TrainSettings = TrainSettings()
    api: ApiSettings = ApiSettings()

    @root_validator(skip_on_failure=True)
    def contrastive_needs_pairs(cls, values):
        loss, train = values.get('loss'), values.get('train')
        if loss.lambda3 > 0 and train.batch_size < 2:
            raise ValueError('batch_size must be >= 2 when loss.lambda3 > 0')
        return values

    class Config:
        env_file = '.env'
        env_nested_delimiter = '__'


PROFILES = {
    'stb': {'clip': {'image_ratio': 0.6}, 'loss': {'lambda1': 1.0, 'lambda2': 1.0, 'lambda3': 0.1}},
    'rhd': {'clip': {'image_ratio': 0.9}, 'loss': {'lambda1': 1.0, 'lambda2': 1.0, 'lambda3': 0.1}},
}


def _merge(base: dict, update: dict) -> dict:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(path: Union[str, Path, None] = None, profile: Optional[str] = None) -> Settings:
    """
    Build settings from an optional YAML file, then apply a target profile.

    Values from the YAML file win over environment variables; the profile
    wins over both.
    """
    data = {}
    if path is not None:
        with open(path, 'r', encoding='utf-8') as fh:
            data = yaml.safe_load(fh) or {}
    if profile is not None:
        data = _merge(data, PROFILES[profile])
    return Settings(**data)


def apply_profile(current: Settings, profile: str) -> Settings:
    return override(current, PROFILES[profile])


def override(current: Settings, updates: dict) -> Settings:
    """A validated copy of `current` with nested `updates` merged in."""
    return Settings(**_merge(current.dict(), updates))


settings = Settings()
