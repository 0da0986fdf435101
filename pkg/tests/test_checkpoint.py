import pytest
import torch

from models.estimator import HandPoseEstimator
from services.checkpoint import (MAGIC, decode_rng_state, encode_rng_state, load_checkpoint, load_model,
                                 restore_model, restore_optimizer, save_checkpoint)
from services.errors import CheckpointError
from services.optim import HandAdam


def _trained_optimizer(model):
    optimizer = HandAdam(model.parameters(), lr=1e-3)
    for p in model.parameters():
        p.grad = torch.full_like(p, 0.01)
    optimizer.step()
    return optimizer


def test_round_trip_restores_weights_and_metadata(tmp_path, small_model):
    optimizer = _trained_optimizer(small_model)
    path = save_checkpoint(tmp_path / 'a.ckpt', small_model, optimizer, {'epoch': 3, 'step': 12})
    assert path.read_bytes()[:4] == MAGIC
    assert not path.with_suffix('.ckpt.tmp').exists()

    checkpoint = load_checkpoint(path)
    assert checkpoint.epoch == 3 and checkpoint.step == 12
    assert checkpoint.metadata['architecture'] == small_model.config

    torch.manual_seed(1)
    other = HandPoseEstimator(channels=8, refinement_stages=1)
    restore_model(other, checkpoint)
    for (name, a), b in zip(small_model.state_dict().items(), other.state_dict().values()):
        assert torch.equal(a.float(), b.float()), name


def test_optimizer_state_round_trip(tmp_path, small_model):
    optimizer = _trained_optimizer(small_model)
    checkpoint = load_checkpoint(save_checkpoint(tmp_path / 'a.ckpt', small_model, optimizer))
    fresh = HandAdam(small_model.parameters(), lr=1e-3)
    restore_optimizer(fresh, checkpoint)
    steps, exp_avg, exp_avg_sq = fresh.flat_state()
    ref_steps, ref_avg, ref_sq = optimizer.flat_state()
    assert steps == ref_steps
    assert all(torch.equal(a, b) for a, b in zip(exp_avg, ref_avg))
    assert all(torch.equal(a, b) for a, b in zip(exp_avg_sq, ref_sq))


def test_model_only_checkpoint_has_no_optimizer_state(tmp_path, small_model):
    checkpoint = load_checkpoint(save_checkpoint(tmp_path / 'a.ckpt', small_model))
    with pytest.raises(CheckpointError, match='no optimizer state'):
        restore_optimizer(HandAdam(small_model.parameters()), checkpoint)


def test_load_model_builds_the_stored_architecture(tmp_path, small_model):
    model = load_model(save_checkpoint(tmp_path / 'a.ckpt', small_model))
    assert model.config == small_model.config
    assert not model.training


def test_architecture_mismatch(tmp_path, small_model):
    checkpoint = load_checkpoint(save_checkpoint(tmp_path / 'a.ckpt', small_model))
    with pytest.raises(CheckpointError, match='architecture'):
        restore_model(HandPoseEstimator(channels=16, refinement_stages=1), checkpoint)


@pytest.mark.parametrize('mangle', [
    lambda data: b'XXXX' + data[4:],
    lambda data: data[:5],
    lambda data: data[:-8],
    lambda data: data + b'\x00' * 4,
])
def test_corrupt_files_raise(tmp_path, small_model, mangle):
    path = save_checkpoint(tmp_path / 'a.ckpt', small_model)
    path.write_bytes(mangle(path.read_bytes()))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / 'absent.ckpt')


def test_rng_state_encoding():
    torch.manual_seed(5)
    state = torch.get_rng_state()
    assert torch.equal(decode_rng_state(encode_rng_state(state)), state)
