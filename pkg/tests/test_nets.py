"""Architecture contracts: VAE encoder/decoder, perceptual net, style head."""

import numpy as np
import pytest

from stylespace import nets
from stylespace import tensor as T
from stylespace.errors import DimensionError
from stylespace.nets import PerceptualNet, StyleEncoderHead, VaeModel


def make_images(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 3, 64, 64)).astype(np.float32)


def test_encode_shapes():
    model = VaeModel(latent_dim=16, seed=1)
    for n in (1, 3):
        code = model.encode(make_images(n))
        assert code.mean.shape == (n, 16)
        assert code.logvar.shape == (n, 16)


def test_encode_identical_rows_for_identical_images():
    model = VaeModel(latent_dim=8, seed=1)
    img = make_images(1, seed=5)
    batch = np.concatenate([img, img], axis=0)
    code = model.encode(batch)
    assert np.array_equal(code.mean.data[0], code.mean.data[1])
    assert np.array_equal(code.logvar.data[0], code.logvar.data[1])


def test_encode_rejects_bad_shapes():
    model = VaeModel(latent_dim=8, seed=1)
    with pytest.raises(DimensionError):
        model.encode(np.zeros((1, 1, 64, 64), dtype=np.float32))
    with pytest.raises(DimensionError):
        model.encode(np.zeros((1, 3, 32, 32), dtype=np.float32))


def test_reparameterize_zero_noise():
    code = nets.LatentCode(T.Tensor([[1.0, -2.0]]), T.Tensor([[0.3, -0.1]]))
    z = nets.reparameterize(code, np.zeros((1, 2), dtype=np.float32))
    assert z.data == pytest.approx(code.mean.data)


def test_reparameterize_unit_sigma():
    code = nets.LatentCode(T.Tensor([[1.0, -2.0]]), T.Tensor([[0.0, 0.0]]))
    z = nets.reparameterize(code, np.array([[0.5, 1.5]], dtype=np.float32))
    assert z.data == pytest.approx(np.array([[1.5, -0.5]]))


def test_reparameterize_hand_example():
    code = nets.LatentCode(T.Tensor([[1.0, 2.0]]), T.Tensor([[np.log(4.0), np.log(9.0)]]))
    z = nets.reparameterize(code, np.array([[1.0, -1.0]], dtype=np.float32))
    assert z.data == pytest.approx(np.array([[3.0, -1.0]]), abs=1e-5)


def test_reparameterize_length_mismatch():
    code = nets.LatentCode(T.Tensor([[1.0, 2.0]]), T.Tensor([[0.0, 0.0]]))
    with pytest.raises(DimensionError):
        nets.reparameterize(code, np.zeros((1, 3), dtype=np.float32))


def test_decode_range_and_shape():
    model = VaeModel(latent_dim=8, seed=2)
    rng = np.random.default_rng(3)
    out = model.decode(rng.standard_normal((2, 8)).astype(np.float32) * 3.0)
    assert out.shape == (2, 3, 64, 64)
    assert out.data.min() >= 0.0
    assert out.data.max() <= 1.0


def test_decode_deterministic():
    model = VaeModel(latent_dim=8, seed=2)
    img = make_images(1, seed=9)
    z = model.encode(img).mean.data
    a = model.decode(z).data
    b = model.decode(z).data
    assert np.array_equal(a, b)


def test_decode_rejects_wrong_latent():
    model = VaeModel(latent_dim=8, seed=2)
    with pytest.raises(DimensionError):
        model.decode(np.zeros((1, 9), dtype=np.float32))


# Regression pins: values computed once from this implementation and frozen.
GOLDEN_MU_PREFIX = np.array([
    3.10293674e-01, 2.44048387e-01, -9.96803120e-03, -4.52843189e-01,
    -9.21204031e-01, -4.55611318e-01, 5.78535795e-01, -5.58341444e-01,
], dtype=np.float32)
GOLDEN_DECODE_ZERO_SHA = "5fd19d9aae99e2570626d4de80587b54ccbf1dcec304f14791edfa90fc1193f5"
GOLDEN_DECODE_RAMP_SHA = "8b9a9e059bc983fb55e431095d1cd99a5d9f83a4b1bd5f16b1c15d2f8fa88c33"


def test_encode_matches_golden_vector():
    model = VaeModel(latent_dim=16, seed=123)
    img = np.random.default_rng(99).random((1, 3, 64, 64)).astype(np.float32)
    mu = model.encode(img).mean.data[0]
    assert mu[:8] == pytest.approx(GOLDEN_MU_PREFIX, abs=1e-6)


def test_decode_matches_golden_hashes():
    import hashlib

    model = VaeModel(latent_dim=16, seed=123)
    zero = model.decode(np.zeros((1, 16), dtype=np.float32)).data
    assert hashlib.sha256(zero.tobytes()).hexdigest() == GOLDEN_DECODE_ZERO_SHA
    ramp = model.decode(np.linspace(-2, 2, 16, dtype=np.float32)[None]).data
    assert hashlib.sha256(ramp.tobytes()).hexdigest() == GOLDEN_DECODE_RAMP_SHA


@pytest.mark.parametrize("n", [1, 2, 7])
def test_round_trip_preserves_shapes(n):
    model = VaeModel(latent_dim=12, seed=4)
    imgs = make_images(n, seed=n)
    code = model.encode(imgs)
    z = nets.reparameterize(code, np.zeros((n, 12), dtype=np.float32))
    out = model.decode(z)
    assert out.shape == imgs.shape


def test_perceptual_feature_length():
    net = PerceptualNet()
    taps, feat = nets.perceptual_features(net, make_images(1))
    assert feat.shape == (1, 4096)
    assert len(taps) == 2


def test_perceptual_frozen_repeatable():
    net = PerceptualNet()
    imgs = make_images(2, seed=8)
    taps_a, feat_a = net.forward(imgs)
    taps_b, feat_b = net.forward(imgs)
    assert np.array_equal(feat_a.data, feat_b.data)
    for a, b in zip(taps_a, taps_b):
        assert np.array_equal(a.data, b.data)


def test_perceptual_params_get_no_grad():
    net = PerceptualNet()
    _, feat = net.forward(make_images(1))
    T.tsum(feat).backward()
    for name, p in net.parameters().items():
        assert p.grad is None, name


def test_perceptual_net_seed_is_stable():
    assert PerceptualNet().checksum() == PerceptualNet().checksum()
    assert PerceptualNet(seed=7).checksum() != PerceptualNet(seed=8).checksum()


def test_style_embed_length():
    head = StyleEncoderHead(seed=0)
    rng = np.random.default_rng(0)
    out = nets.style_embed(head, rng.random((3, 4096)).astype(np.float32))
    assert out.shape == (3, 1024)


def test_style_embed_zero_weights():
    head = StyleEncoderHead(seed=0)
    for p in head.parameters().values():
        p.data[...] = 0.0
    out = nets.style_embed(head, np.ones((1, 4096), dtype=np.float32))
    assert np.array_equal(out.data, np.zeros((1, 1024), dtype=np.float32))


def test_style_embed_linearity_with_identity_activation():
    head = StyleEncoderHead(seed=3)
    for name, p in head.parameters().items():
        if name.endswith(".b"):
            p.data[...] = 0.0
    head.hidden_activation = lambda t: t
    x = np.random.default_rng(4).random((1, 4096)).astype(np.float32)
    one = nets.style_embed(head, x).data
    two = nets.style_embed(head, 2.0 * x).data
    assert two == pytest.approx(2.0 * one, rel=1e-4, abs=1e-4)


def test_style_embed_rejects_wrong_length():
    head = StyleEncoderHead(seed=0)
    with pytest.raises(DimensionError):
        head.forward(np.zeros((1, 1024), dtype=np.float32))


def test_style_embed_gradients_reach_head():
    head = StyleEncoderHead(seed=1)
    x = np.random.default_rng(5).random((2, 4096)).astype(np.float32)
    T.tsum(nets.style_embed(head, x)).backward()
    for name, p in head.parameters().items():
        assert p.grad is not None, name
