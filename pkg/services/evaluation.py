from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch
from scipy.integrate import trapezoid

from data.datasets import HandDataset
from models.estimator import HandPoseEstimator, predict
from schemas.report import EvalReport
from services.checkpoint import Checkpoint, load_model
from services.errors import DatasetLoadError, DegenerateInputError, ShapeError
from utils.geometry import N_JOINTS, ROOT

PCK_RANGE_MM = (20.0, 50.0)
PCK_STEPS = 31

ModelSource = Union[HandPoseEstimator, Checkpoint, str, Path]


def joint_errors_mm(pred: np.ndarray, gt: np.ndarray, scale_mm: Sequence[float]) -> np.ndarray:
    """
    Per-joint Euclidean distances in mm, Nx21.

    Ground truth is moved so its root sits at the origin. Predictions are
    taken as they are: the test path already emits root-relative poses, so
    an offset in a prediction shows up in full on every joint.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    scale = np.asarray(scale_mm, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[1:] != (N_JOINTS, 3):
        raise ShapeError(f'expected matching Nx{N_JOINTS}x3 poses, got {pred.shape} and {gt.shape}')
    if scale.shape != (pred.shape[0],):
        raise ShapeError(f'expected {pred.shape[0]} scales, got {scale.shape}')
    gt = gt - gt[:, ROOT:ROOT + 1]
    return np.linalg.norm(pred - gt, axis=-1) * scale[:, None]


def report_from_errors(errors: np.ndarray) -> EvalReport:
    if errors.shape[0] == 0:
        raise DegenerateInputError('no samples to evaluate')
    thresholds = np.linspace(*PCK_RANGE_MM, PCK_STEPS)
    pck = np.array([(errors <= t).mean() for t in thresholds])
    auc = float(trapezoid(pck, thresholds) / (thresholds[-1] - thresholds[0]))
    return EvalReport(
        epe_mm=float(errors.mean(axis=1).mean()),
        per_joint_epe=errors.mean(axis=0).tolist(),
        n_samples=int(errors.shape[0]),
        auc_20_50=auc,
        pck_thresholds=thresholds.tolist(),
        pck=pck.tolist(),
    )


def _model(source: ModelSource) -> HandPoseEstimator:
    if isinstance(source, torch.nn.Module):
        return source
    return load_model(source)


def evaluate_epe(source: ModelSource, dataset: HandDataset, batch_size: int = 16) -> EvalReport:
    """
    Mean end-point error in mm over `dataset`, using the test path only.

    Every sample must carry scale_mm to turn canonical units into millimetres.
    """
    model = _model(source)
    errors = []
    for start in range(0, len(dataset), batch_size):
        samples = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        for s in samples:
            if s.meta.scale_mm is None:
                raise DatasetLoadError(f'{s.sample_id}: no mm scale, cannot report EPE in mm')
        images = torch.from_numpy(np.stack([s.image for s in samples]))
        pred = predict(model, images).double().numpy()
        gt = np.stack([s.joints3d for s in samples])
        errors.append(joint_errors_mm(pred, gt, [s.meta.scale_mm for s in samples]))
    return report_from_errors(np.concatenate(errors, axis=0))
