from pathlib import Path

import numpy as np
import pytest
import torch

from config.settings import Settings
from data.datasets import SynthDataset
from models.estimator import HandPoseEstimator
from services.clip_backends import StubClipBackend

GOLDEN_DIR = Path(__file__).parent / 'golden'


@pytest.fixture
def backend():
    return StubClipBackend(seed=0)


@pytest.fixture
def small_model():
    torch.manual_seed(0)
    return HandPoseEstimator(channels=8, refinement_stages=1)


@pytest.fixture(scope='session')
def synth4():
    return SynthDataset(4, seed=3)


@pytest.fixture
def tiny_settings(tmp_path):
    """Settings for runs that finish in seconds on a CPU."""
    return Settings(
        model={'channels': 8, 'refinement_stages': 1},
        data={'n_samples': 4, 'holdout': 0},
        train={'epochs': 1, 'batch_size': 2, 'learning_rate': 1e-3,
               'checkpoint_dir': tmp_path / 'ckpt', 'log_csv': tmp_path / 'log.csv'},
    )


@pytest.fixture
def golden():
    """
    Compare an array with tests/golden/<name>.npy.

    The file is recorded the first time a name is seen; delete it to re-record
    after an intended change.
    """
    def check(name: str, array, rtol: float = 1e-6, atol: float = 1e-9):
        array = np.asarray(array)
        path = GOLDEN_DIR / f'{name}.npy'
        if not path.exists():
            GOLDEN_DIR.mkdir(exist_ok=True)
            np.save(path, array)
            return
        np.testing.assert_allclose(array, np.load(path), rtol=rtol, atol=atol)
    return check
