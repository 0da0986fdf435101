import pytest

from data.datasets import SynthDataset
from services.cross_validation import apply_point, cross_validate, fold_epe, make_folds
from services.errors import InvalidConfigError


@pytest.fixture(scope='module')
def synth10():
    return SynthDataset(10, seed=6)


def test_folds_partition_the_dataset():
    folds = make_folds(10, 3, seed=1)
    assert [len(f) for f in folds] == [4, 3, 3]
    assert sorted(i for f in folds for i in f) == list(range(10))
    assert make_folds(10, 3, seed=1) == folds
    assert make_folds(10, 3, seed=2) != folds


@pytest.mark.parametrize('n, k', [(10, 1), (3, 4)])
def test_fold_errors(n, k):
    with pytest.raises(InvalidConfigError):
        make_folds(n, k)


def test_apply_point(tiny_settings):
    updated = apply_point(tiny_settings, {'image_ratio': 0.9, 'lambda3': 0.2, 'combination': 'sum'})
    assert updated.clip.image_ratio == 0.9
    assert updated.loss.lambda3 == 0.2
    assert updated.model.combination == 'sum'
    assert tiny_settings.clip.image_ratio == 0.6
    with pytest.raises(InvalidConfigError, match='unknown grid key'):
        apply_point(tiny_settings, {'dropout': 0.1})
    with pytest.raises(ValueError):
        apply_point(tiny_settings, {'image_ratio': 1.5})


def test_cross_validate_picks_the_lowest_mean(tiny_settings, synth10, backend):
    grid = [{'image_ratio': 0.6}, {'image_ratio': 0.9}]
    report = cross_validate(tiny_settings, synth10, 2, grid, backend)
    assert report.grid == grid
    assert len(report.fold_epe) == 2 and all(len(e) == 2 for e in report.fold_epe)
    assert report.mean_epe == [pytest.approx(sum(e) / 2) for e in report.fold_epe]
    best = min(range(2), key=lambda i: (report.mean_epe[i], i))
    assert report.best == grid[best]

    folds = make_folds(len(synth10), 2, tiny_settings.train.seed)
    replay = fold_epe(tiny_settings, synth10, folds, 1, grid[0], backend)
    assert replay == pytest.approx(report.fold_epe[0][1])


def test_single_point_grid_wins(tiny_settings, synth10):
    report = cross_validate(tiny_settings, synth10, 2, [{'lambda3': 0.0}])
    assert report.best == {'lambda3': 0.0}


def test_folds_do_not_write_the_training_log(tiny_settings, synth10):
    assert tiny_settings.train.log_csv is not None
    cross_validate(tiny_settings, synth10, 2, [{'lambda3': 0.0}, {'lambda3': 0.1}])
    assert not tiny_settings.train.log_csv.exists()
    assert not tiny_settings.train.checkpoint_dir.exists()


def test_invalid_grids(tiny_settings, synth10):
    with pytest.raises(InvalidConfigError):
        cross_validate(tiny_settings, synth10, 2, [])
    with pytest.raises(InvalidConfigError):
        cross_validate(tiny_settings, synth10, 2, [{'image_ratio': 0.6}, {'momentum': 0.9}])
    with pytest.raises(InvalidConfigError):
        cross_validate(tiny_settings, SynthDataset(3, seed=0), 4, [{'image_ratio': 0.6}])
