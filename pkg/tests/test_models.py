import pytest
import torch
import torch.nn.functional as F

from config.settings import ModelSettings
from data.heatmaps import render_gt_heatmap
from data.synth import synth_annotations
from models.branch2 import Branch2, ProjectionHead
from models.estimator import HandPoseEstimator, predict
from models.heatmap_net import HeatmapNet
from models.poseprior import PosePriorNet
from services.clip_backends import CLIP_DIM
from services.errors import CheckpointError, InvalidConfigError, ShapeError


def _images(batch=2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(batch, 3, 256, 256, generator=gen)


def test_heatmap_net_shapes():
    net = HeatmapNet(channels=8, refinement_stages=2)
    heatmaps, features, stage1, stages = net(_images())
    assert heatmaps.shape == (2, 21, 32, 32)
    assert features.shape == (2, 8, 32, 32)
    assert stage1.shape == (2, 8, 32, 32)
    assert len(stages) == 3


def test_zero_initialized_final_layer_gives_constant_heatmaps():
    net = HeatmapNet(channels=8, refinement_stages=1, zero_init_final=True)
    heatmaps = net(_images())[0]
    assert torch.count_nonzero(heatmaps) == 0


def test_poseprior_outputs_canonical_pose_and_rotation():
    torch.manual_seed(0)
    canonical, rotation = PosePriorNet()(torch.rand(3, 21, 32, 32))
    assert canonical.shape == (3, 21, 3)
    assert torch.allclose(canonical[:, 0], torch.zeros(3, 3))
    eye = torch.eye(3).expand(3, 3, 3)
    assert torch.allclose(rotation @ rotation.transpose(-1, -2), eye, atol=1e-5)
    assert torch.allclose(torch.linalg.det(rotation), torch.ones(3), atol=1e-5)
    with pytest.raises(ShapeError):
        PosePriorNet()(torch.rand(3, 20, 32, 32))


def test_branch2_plain_and_fused():
    torch.manual_seed(0)
    branch = Branch2(channels=8)
    feat = torch.rand(2, 8, 32, 32)
    clip = torch.rand(CLIP_DIM)
    plain = branch.plain(feat)
    assert plain.shape == (2, 512)
    assert not torch.equal(plain[0], plain[1])
    for mode in ('concat', 'sum'):
        assert branch.fused(feat, clip, mode).shape == (2, 512)
    e1, e2 = branch(feat, clip.expand(2, CLIP_DIM), 'concat')
    assert torch.allclose(e1, plain)
    assert torch.allclose(e2, branch.fused(feat, clip, 'concat'))
    with pytest.raises(InvalidConfigError):
        branch.fused(feat, clip, 'product')
    with pytest.raises(ShapeError):
        branch.fused(feat, torch.rand(256), 'sum')


def test_projection_head_is_shared_shape():
    head = ProjectionHead()
    assert head(torch.rand(4, 512)).shape == (4, 128)
    with pytest.raises(ShapeError):
        head(torch.rand(4, 128))


def test_forward_train_without_clip_skips_branch2(small_model):
    out = small_model.forward_train(_images())
    assert out['heatmaps'].shape == (2, 21, 32, 32)
    assert out['pose'].shape == (2, 21, 3)
    assert out['encodings_plain'] is None and out['encodings_fused'] is None


def test_forward_train_with_clip(small_model):
    out = small_model.forward_train(_images(), torch.rand(2, CLIP_DIM))
    assert out['encodings_plain'].shape == (2, 128)
    assert out['encodings_fused'].shape == (2, 128)


@pytest.mark.parametrize('tap', ['backbone', 'stage1'])
def test_branch2_taps(tap):
    model = HandPoseEstimator(channels=8, refinement_stages=1, branch2_tap=tap)
    heatmaps, feat = model.heatmap_forward(_images().permute(0, 2, 3, 1))
    assert heatmaps.shape == (2, 21, 32, 32)
    assert model.branch2_plain(feat).shape == (2, 512)
    with pytest.raises(InvalidConfigError):
        HandPoseEstimator(branch2_tap='head')


def test_predict_single_and_batch(small_model):
    images = _images().permute(0, 2, 3, 1)
    batch = predict(small_model, images)
    single = predict(small_model, images[1])
    assert batch.shape == (2, 21, 3)
    assert single.shape == (21, 3)
    assert torch.allclose(single, batch[1], atol=1e-5)
    assert small_model.training


def test_predict_rejects_wrong_size_and_missing_model(small_model):
    with pytest.raises(ShapeError):
        predict(small_model, torch.rand(128, 128, 3))
    with pytest.raises(CheckpointError):
        predict(None, torch.rand(256, 256, 3))


def test_predict_ignores_branch2(small_model):
    image = _images(1).permute(0, 2, 3, 1)[0]
    before = predict(small_model, image)
    with torch.no_grad():
        for p in small_model.branch2_parameters():
            p.zero_()
    assert torch.equal(predict(small_model, image), before)


def test_parameter_partition_covers_model(small_model):
    ids = {id(p) for p in small_model.branch1_parameters()} | {id(p) for p in small_model.branch2_parameters()}
    assert ids == {id(p) for p in small_model.parameters()}


def test_settings_reach_the_projection_head():
    model = HandPoseEstimator.from_settings(ModelSettings(channels=8, refinement_stages=1,
                                                          linear_projection_head=True))
    assert isinstance(model.projection_head.activation, torch.nn.Identity)
    assert model.config['linear_projection_head'] is True
    e = torch.randn(3, 512)
    head = model.projection_head
    torch.testing.assert_close(head(e) + head(-e), 2 * head(torch.zeros(3, 512)))

    default = HandPoseEstimator.from_settings(ModelSettings(channels=8, refinement_stages=1))
    assert isinstance(default.projection_head.activation, torch.nn.ReLU)


def _conv_relu(block, h):
    conv = block[0]
    return F.relu(F.conv2d(h, conv.weight, conv.bias, stride=conv.stride, padding=conv.padding))


def _two_layer(seq, v):
    return F.linear(F.relu(F.linear(v, seq[0].weight, seq[0].bias)), seq[2].weight, seq[2].bias)


def _heatmaps_by_hand(net, x):
    b = net.backbone
    h = F.max_pool2d(_conv_relu(b[1], _conv_relu(b[0], x)), 2)
    features = _conv_relu(b[5], F.max_pool2d(_conv_relu(b[3], h), 2))
    heat = F.conv2d(_conv_relu(net.stage1_body, features), net.stage1_head.weight, net.stage1_head.bias)
    for refine in net.refinements:
        h = _conv_relu(refine[1], _conv_relu(refine[0], torch.cat([features, heat], dim=1)))
        heat = F.conv2d(h, refine[2].weight, refine[2].bias)
    return heat, features


def _poseprior_by_hand(net, heat):
    h = heat
    for block in net.encoder[:3]:
        h = _conv_relu(block, h)
    h = F.relu(F.linear(h.flatten(1), net.shared[0].weight, net.shared[0].bias))
    canonical = _two_layer(net.canonical_stream, h).view(-1, 21, 3)
    u, _, vh = torch.linalg.svd(_two_layer(net.rotation_stream, h).view(-1, 3, 3))
    d = torch.linalg.det(u @ vh)
    flip = torch.stack([torch.ones_like(d), torch.ones_like(d), d], dim=-1)
    return canonical - canonical[:, :1], u @ torch.diag_embed(flip) @ vh


def _fixed_model():
    torch.manual_seed(0)
    return HandPoseEstimator(channels=8, refinement_stages=1).double()


def test_heatmap_forward_matches_functional_rebuild(golden):
    model = _fixed_model()
    image = torch.rand(256, 256, 3, generator=torch.Generator().manual_seed(5))
    heat, feat = model.heatmap_forward(image)
    expected_heat, expected_feat = _heatmaps_by_hand(model.heatmap_net, image.permute(2, 0, 1)[None].double())
    torch.testing.assert_close(heat, expected_heat, rtol=0, atol=1e-12)
    torch.testing.assert_close(feat, expected_feat, rtol=0, atol=1e-12)
    golden('heatmap_forward_seed0', heat[0].detach().numpy())


def test_poseprior_forward_matches_functional_rebuild(golden):
    model = _fixed_model()
    joints2d = synth_annotations(11)[1]
    heat = torch.from_numpy(render_gt_heatmap(joints2d)).double()[None]
    canonical, rotation = model.poseprior_forward(heat)
    expected_canonical, expected_rotation = _poseprior_by_hand(model.poseprior, heat)
    torch.testing.assert_close(canonical, expected_canonical, rtol=0, atol=1e-12)
    torch.testing.assert_close(rotation, expected_rotation, rtol=0, atol=1e-10)
    golden('poseprior_canonical_seed0', canonical[0].detach().numpy())
    golden('poseprior_rotation_seed0', rotation[0].detach().numpy())
