from functools import lru_cache
from typing import Optional

from fastapi import HTTPException

from config.settings import settings
from models.estimator import HandPoseEstimator
from services.checkpoint import load_model
from services.errors import (CheckpointError, DatasetLoadError, DegenerateInputError, EncoderUnavailableError,
                             HandClipError, InvalidConfigError, InvalidPromptError, ShapeError)

STATUS_CODES = (
    (InvalidConfigError, 404),
    (CheckpointError, 503),
    (EncoderUnavailableError, 503),
    (ShapeError, 422),
    (InvalidPromptError, 422),
    (DegenerateInputError, 422),
    (DatasetLoadError, 422),
)


def as_http(error: HandClipError) -> HTTPException:
    status = next((code for cls, code in STATUS_CODES if isinstance(error, cls)), 400)
    return HTTPException(status_code=status, detail=str(error))


@lru_cache(maxsize=1)
def _cached_model(path: str) -> HandPoseEstimator:
    return load_model(path)


def get_model() -> Optional[HandPoseEstimator]:
    """The trained estimator named by api.checkpoint, or None when none is configured."""
    if settings.api.checkpoint is None:
        return None
    try:
        return _cached_model(str(settings.api.checkpoint))
    except CheckpointError as e:
        raise as_http(e)
