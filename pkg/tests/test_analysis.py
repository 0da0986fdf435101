import numpy as np
import orjson
import pytest
import torch
from PIL import Image

from data.datasets import SynthDataset
from data.synth import describe_style, synth_styles
from schemas.analysis import FeatureRecord
from services.analysis import (build_aug_feature, build_gallery, contact_sheet, export_embeddings, load_gallery, pca2d,
                               rank_by_similarity, read_embeddings, save_gallery)
from services.clip_fusion import encode_image, encode_text
from services.errors import DegenerateInputError, InvalidConfigError


def _record(sample_id, vector, tag='frei'):
    return FeatureRecord(sample_id=sample_id, feature=np.asarray(vector, dtype=np.float64).tolist(), tag=tag)


def _cos(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def _gallery(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return [_record(f's{i:03d}', rng.normal(size=512)) for i in range(n)]


def test_query_ranks_itself_first():
    gallery = _gallery(10)
    ranked = rank_by_similarity(np.asarray(gallery[4].feature), gallery)
    assert ranked[0].sample_id == 's004'
    assert ranked[0].score == pytest.approx(1.0, abs=1e-12)
    assert [r.rank for r in ranked] == list(range(1, 11))


def test_antipodal_scores_minus_one():
    v = np.random.default_rng(1).normal(size=512)
    ranked = rank_by_similarity(v, [_record('far', -v)])
    assert ranked[0].score == pytest.approx(-1.0, abs=1e-12)


def test_matches_brute_force_order():
    gallery = _gallery(50, seed=2)
    query = np.random.default_rng(3).normal(size=512)
    expected = sorted(gallery, key=lambda r: -_cos(query, r.feature))
    ranked = rank_by_similarity(torch.from_numpy(query), gallery, top_k=10)
    assert [r.sample_id for r in ranked] == [r.sample_id for r in expected[:10]]
    scores = [r.score for r in ranked]
    assert scores == sorted(scores, reverse=True)


def test_scaling_gallery_vectors_keeps_the_ranking():
    gallery = _gallery(20, seed=4)
    query = np.random.default_rng(5).normal(size=512)
    scaled = [_record(r.sample_id, np.asarray(r.feature) * (i + 1) * 3.5) for i, r in enumerate(gallery)]
    a = rank_by_similarity(query, gallery)
    b = rank_by_similarity(query, scaled)
    assert [r.sample_id for r in a] == [r.sample_id for r in b]
    np.testing.assert_allclose([r.score for r in a], [r.score for r in b], rtol=1e-12)


def test_ties_break_by_sample_id():
    v = np.random.default_rng(6).normal(size=512)
    ranked = rank_by_similarity(v, [_record('b', v), _record('a', v), _record('c', v)])
    assert [r.sample_id for r in ranked] == ['a', 'b', 'c']


def test_zero_norm_gallery_entry_is_skipped():
    gallery = _gallery(3) + [_record('zero', np.zeros(512))]
    ranked = rank_by_similarity(np.ones(512), gallery)
    assert 'zero' not in [r.sample_id for r in ranked]
    assert len(ranked) == 3


def test_degenerate_queries():
    with pytest.raises(DegenerateInputError):
        rank_by_similarity(np.zeros(512), _gallery(3))
    with pytest.raises(DegenerateInputError):
        rank_by_similarity(np.ones(512), [])


def test_aug_feature_averages_unit_features(backend):
    image = np.random.default_rng(7).uniform(size=(256, 256, 3)).astype(np.float32)
    prompt = 'a photo of peach hand with green background'
    feature = build_aug_feature(image, prompt, 0.5, backend)
    img = encode_image(torch.from_numpy(image), backend)
    txt = encode_text(prompt, backend)
    torch.testing.assert_close(feature, 0.5 * (img / img.norm()) + 0.5 * (txt / txt.norm()))
    torch.testing.assert_close(build_aug_feature(image, prompt, 1.0, backend), img / img.norm())
    with pytest.raises(InvalidConfigError):
        build_aug_feature(image, prompt, 1.2, backend)


def test_gallery_build_and_cache(tmp_path, synth4, backend):
    gallery = build_gallery(synth4, backend, exclude_id=synth4.sample_id(1), batch_size=2)
    assert [r.sample_id for r in gallery] == [synth4.sample_id(i) for i in (0, 2, 3)]
    path = tmp_path / 'gallery.cache'
    save_gallery(gallery, path)
    loaded = load_gallery(path, tag='stb', exclude_id=synth4.sample_id(0))
    assert sorted(r.sample_id for r in loaded) == [synth4.sample_id(2), synth4.sample_id(3)]
    assert {r.tag for r in loaded} == {'stb'}
    by_id = {r.sample_id: r for r in gallery}
    for r in loaded:
        np.testing.assert_allclose(r.feature, by_id[r.sample_id].feature, atol=1e-6)


def test_pca_of_antipodal_pair():
    v = np.random.default_rng(8).normal(size=512)
    coords, ratios = pca2d(np.stack([v, -v]))
    assert ratios == pytest.approx([1.0, 0.0], abs=1e-12)
    np.testing.assert_allclose(np.abs(coords[:, 0]), np.linalg.norm(v))
    np.testing.assert_allclose(coords[:, 1], 0.0, atol=1e-9)


def test_pca_planar_points():
    features = np.zeros((4, 512))
    features[:, 0] = [3.0, -3.0, 0.0, 0.0]
    features[:, 1] = [0.0, 0.0, 1.0, -1.0]
    features += 0.25
    coords, ratios = pca2d(features)
    assert ratios == pytest.approx([0.9, 0.1])
    np.testing.assert_allclose(coords, [[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]], atol=1e-9)


def test_pca_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        pca2d(np.ones((5, 512)))
    with pytest.raises(DegenerateInputError):
        pca2d(np.ones((1, 512)))


def test_export_without_projection(tmp_path):
    records = _gallery(5) + [_record('x', np.ones(512), tag='stb')]
    path = tmp_path / 'emb.jsonl'
    export_embeddings(records, 'none', path)
    lines = path.read_bytes().splitlines()
    assert orjson.loads(lines[0]) == {'projection': 'none', 'explained_variance_ratio': None}
    assert len(lines) == 7
    loaded = read_embeddings(path)
    assert [r.tag for r in loaded.records] == ['frei'] * 5 + ['stb']
    for original, exported in zip(records, loaded.records):
        np.testing.assert_allclose(exported.vector, original.feature, atol=1e-7)


def test_export_pca(tmp_path):
    export = export_embeddings(_gallery(10), 'pca2d', tmp_path / 'emb.jsonl')
    assert all(len(r.vector) == 2 for r in export.records)
    assert sum(export.explained_variance_ratio) <= 1.0
    assert read_embeddings(tmp_path / 'emb.jsonl').explained_variance_ratio == export.explained_variance_ratio
    with pytest.raises(InvalidConfigError):
        export_embeddings(_gallery(3), 'tsne', tmp_path / 'x.jsonl')


def test_contact_sheet(tmp_path):
    images = [np.full((256, 256, 3), v, dtype=np.float32) for v in (0.0, 0.5, 1.0)]
    path = contact_sheet(images, tmp_path / 'sheet.png', labels=['a', 'b', 'c'], columns=2)
    with Image.open(path) as sheet:
        assert sheet.size == (256, 2 * (128 + 14))
        assert sheet.getpixel((10, 10)) == (0, 0, 0)
        assert sheet.getpixel((128 + 10, 10)) == (128, 128, 128)
    with pytest.raises(DegenerateInputError):
        contact_sheet([], tmp_path / 'empty.png')


def test_synthetic_gallery_ranking(backend):
    dataset = SynthDataset(50, seed=9, styles=synth_styles(50, 9))
    gallery = build_gallery(dataset, backend)
    query_sample = dataset[7]
    query = build_aug_feature(query_sample.image, describe_style(dataset.styles[7]), 0.5, backend)
    ranked = rank_by_similarity(query, gallery)
    q = query.double().numpy()
    expected = sorted(gallery, key=lambda r: (-_cos(q, r.feature), r.sample_id))
    assert [r.sample_id for r in ranked] == [r.sample_id for r in expected]

    itself = rank_by_similarity(encode_image(torch.from_numpy(query_sample.image), backend), gallery, top_k=1)
    assert itself[0].sample_id == query_sample.sample_id
    assert itself[0].score == pytest.approx(1.0, abs=1e-6)
