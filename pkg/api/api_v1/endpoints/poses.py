import io
from typing import Optional

import numpy as np
import torch
from fastapi import APIRouter, Depends, File, HTTPException, UploadFile

from api.dependencies import as_http, get_model
from models.estimator import HandPoseEstimator, predict
from schemas.api import Pose3D
from services.errors import CheckpointError, HandClipError, ShapeError
from utils.geometry import JOINT_NAMES

router = APIRouter()


@router.post("/predict", response_model=Pose3D)
async def predict_pose(
    file: UploadFile = File(...),
    model: Optional[HandPoseEstimator] = Depends(get_model),
):
    """
    Estimate a 3D hand pose from an uploaded .npy 256x256x3 image in [0, 1].
    """
    try:
        image = np.load(io.BytesIO(await file.read()), allow_pickle=False)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=f'not a .npy array: {e}')
    try:
        if image.ndim != 3:
            raise ShapeError(f'expected one HxWx3 image, got shape {image.shape}')
        if model is None:
            raise CheckpointError('no checkpoint configured (API__CHECKPOINT)')
        pose = predict(model, torch.from_numpy(image.astype(np.float32)))
    except HandClipError as e:
        raise as_http(e)
    return Pose3D(joint_names=list(JOINT_NAMES), joints=pose.tolist())
