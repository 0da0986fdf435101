from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config.settings import Settings, override
from data.datasets import HandDataset, SubsetDataset
from schemas.report import CrossValidationReport
from services.clip_backends import ClipBackend
from services.errors import InvalidConfigError
from services.evaluation import evaluate_epe
from services.trainer import Trainer
from utils.logging import get_logger

logger = get_logger(__name__)

# grid key -> (settings section, field)
GRID_KEYS = {
    'image_ratio': ('clip', 'image_ratio'),
    'lambda3': ('loss', 'lambda3'),
    'combination': ('model', 'combination'),
}


def make_folds(n: int, k: int, seed: int = 0) -> List[List[int]]:
    """k disjoint folds covering range(n), from one seeded permutation."""
    if k < 2:
        raise InvalidConfigError(f'cross-validation needs k >= 2, got {k}')
    if n < k:
        raise InvalidConfigError(f'dataset of {n} samples is smaller than k={k}')
    order = np.random.default_rng(seed).permutation(n)
    return [sorted(fold.tolist()) for fold in np.array_split(order, k)]


def apply_point(settings: Settings, point: Dict[str, Any]) -> Settings:
    updates: Dict[str, Dict[str, Any]] = {}
    for key, value in point.items():
        if key not in GRID_KEYS:
            raise InvalidConfigError(f'unknown grid key {key!r}; expected one of {sorted(GRID_KEYS)}')
        section, field = GRID_KEYS[key]
        updates.setdefault(section, {})[field] = value
    return override(settings, updates)


def fold_epe(settings: Settings, dataset: HandDataset, folds: Sequence[Sequence[int]], fold: int,
             point: Dict[str, Any], backend: Optional[ClipBackend] = None) -> float:
    """Train on every fold but `fold` and return the EPE on `fold`."""
    train_idx = sorted(i for j, f in enumerate(folds) if j != fold for i in f)
    # fold runs leave the training CSV alone
    fold_settings = override(apply_point(settings, point), {'train': {'log_csv': None}})
    trainer = Trainer(fold_settings, SubsetDataset(dataset, train_idx),
                      backend=backend, write_checkpoints=False)
    trainer.train()
    return evaluate_epe(trainer.model, SubsetDataset(dataset, folds[fold])).epe_mm


def cross_validate(settings: Settings, dataset: HandDataset, k: int, grid: Sequence[Dict[str, Any]],
                   backend: Optional[ClipBackend] = None) -> CrossValidationReport:
    """
    Pick the grid point with the lowest mean held-out EPE over k seeded random folds.

    Ties go to the earlier grid point.
    """
    if not grid:
        raise InvalidConfigError('empty hyperparameter grid')
    folds = make_folds(len(dataset), k, settings.train.seed)
    for point in grid:
        apply_point(settings, point)

    fold_errors: List[List[float]] = []
    for p, point in enumerate(grid):
        errors = [fold_epe(settings, dataset, folds, f, point, backend) for f in range(k)]
        fold_errors.append(errors)
        logger.info('grid point done', extra={'point': point, 'index': p, 'mean_epe_mm': float(np.mean(errors))})
    means = [float(np.mean(e)) for e in fold_errors]
    best = min(range(len(grid)), key=lambda i: (means[i], i))
    return CrossValidationReport(best=dict(grid[best]), grid=[dict(g) for g in grid],
                                 mean_epe=means, fold_epe=fold_errors)
