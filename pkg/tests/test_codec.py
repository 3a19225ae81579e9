import numpy as np
import pytest
import torch

from miea import checkpoint
from miea.channel import ChannelSpec, apply_channel
from miea.codec import (
    CodecConfig,
    SymbolFrame,
    TrainingDiverged,
    build_codec,
    decode,
    decode_batch,
    encode,
    encode_batch,
    features_to_symbols,
    normalize_power,
    reconstruction_loss,
    symbols_to_features,
    total_variation,
    train_codec,
    tv,
)
from miea.corpus import synthetic_faces
from miea.metrics import psnr

TOY = CodecConfig(image_shape=(16, 16, 3), train_snr_db=0.0, width=8, batch_size=16, epochs=3, lam=0.01)


def _tv_reference(img, beta=1.0):
    """Direct loop over pixels, as in the defining sum."""
    h, w, c = img.shape
    total = 0.0
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                dr = img[i + 1, j, ch] - img[i, j, ch] if i + 1 < h else 0.0
                dc = img[i, j + 1, ch] - img[i, j, ch] if j + 1 < w else 0.0
                total += (dr * dr + dc * dc) ** (beta / 2)
    return total


# -- total variation ---------------------------------------------------------


def test_tv_constant_image_is_zero():
    for beta in (0.5, 1.0, 2.0):
        assert total_variation(np.full((6, 5, 3), 0.3), beta) == 0.0


def test_tv_two_by_two_example():
    img = np.array([[0.0, 1.0], [0.0, 1.0]])[..., None]
    assert total_variation(img, 1.0) == pytest.approx(2.0, abs=1e-12)


def test_tv_single_pixel_is_zero():
    assert total_variation(np.array([[[0.7]]]), 1.0) == 0.0


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_tv_matches_loop_reference(rng, beta):
    img = rng.random((5, 7, 2))
    assert total_variation(img, beta) == pytest.approx(_tv_reference(img, beta), rel=1e-12)


def test_tv_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        tv(torch.zeros(1, 2, 2), 0.0)


def test_tv_gradient_matches_central_differences(rng):
    eps = 1e-6
    for _ in range(20):
        x = torch.tensor(rng.random((1, 8, 8)), dtype=torch.float64, requires_grad=True)
        tv(x, 1.0).backward()
        analytic = x.grad.numpy().ravel()
        base = x.detach().numpy().copy()
        numeric = np.empty_like(analytic)
        for k in range(base.size):
            plus, minus = base.copy().ravel(), base.copy().ravel()
            plus[k] += eps
            minus[k] -= eps
            fp = tv(torch.tensor(plus.reshape(base.shape)), 1.0).item()
            fm = tv(torch.tensor(minus.reshape(base.shape)), 1.0).item()
            numeric[k] = (fp - fm) / (2 * eps)
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert rel < 1e-4


def test_tv_constant_image_has_finite_gradient():
    x = torch.full((3, 4, 4), 0.5, dtype=torch.float64, requires_grad=True)
    tv(x).backward()
    assert torch.isfinite(x.grad).all()


# -- reconstruction loss -----------------------------------------------------


def test_loss_constant_batch_is_zero():
    x = torch.full((3, 3, 4, 4), 0.25)
    assert reconstruction_loss(x, x.clone(), 1.0, 1.0).item() == 0.0


def test_loss_example():
    x = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
    x_hat = torch.full((1, 1, 2, 2), 0.1, dtype=torch.float64)
    assert reconstruction_loss(x, x_hat, 0.0).item() == pytest.approx(0.04, abs=1e-15)


def test_loss_self_is_lambda_times_tv(rng):
    x = torch.tensor(rng.random((1, 3, 6, 6)))
    for lam in (0.0, 0.5, 1.0, 3.0):
        assert reconstruction_loss(x, x, lam, 1.0).item() == lam * tv(x[0], 1.0).item()


def test_loss_batch_averages_per_image_terms(rng):
    x = torch.tensor(rng.random((4, 3, 5, 5)))
    y = torch.tensor(rng.random((4, 3, 5, 5)))
    expected = np.mean([((x[i] - y[i]) ** 2).sum().item() + 0.5 * tv(y[i]).item() for i in range(4)])
    assert reconstruction_loss(x, y, 0.5).item() == pytest.approx(expected, rel=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


# -- symbol reshaping --------------------------------------------------------


def test_symbol_count():
    assert features_to_symbols(np.ones((2, 2, 2))).n_symbols == 4


def test_odd_element_count_rejected():
    with pytest.raises(ValueError):
        features_to_symbols(np.ones((3, 1, 1)))


def test_all_twos_give_unit_symbol_power():
    y = features_to_symbols(np.full((4, 4, 2), 2.0))
    per_symbol = (y.symbols ** 2).sum(axis=1)
    np.testing.assert_allclose(per_symbol, np.ones(16), rtol=0, atol=1e-15)


def test_flatten_order_is_documented_split():
    f = np.arange(8, dtype=np.float64).reshape(2, 2, 2)
    y = features_to_symbols(f, normalize=False)
    np.testing.assert_array_equal(y.symbols, [[0, 4], [1, 5], [2, 6], [3, 7]])


def test_round_trip_bit_exact_on_normalized_tensors(rng):
    for _ in range(1000):
        shape = tuple(int(d) for d in rng.integers(1, 6, size=3))
        if np.prod(shape) % 2:
            shape = (shape[0], shape[1], shape[2] * 2)
        f = normalize_power(rng.standard_normal(shape).astype(np.float32))
        back = symbols_to_features(features_to_symbols(f))
        assert back.dtype == f.dtype
        np.testing.assert_array_equal(back, f)


def test_round_trip_up_to_global_scale(rng):
    f = rng.standard_normal((4, 4, 6)) * 3.0
    back = symbols_to_features(features_to_symbols(f))
    scale = back.ravel()[0] / f.ravel()[0]
    np.testing.assert_allclose(back, f * scale, rtol=1e-12)


def test_zero_frame_gives_zero_features():
    y = SymbolFrame(np.zeros((8, 2), np.float32), (2, 2, 4))
    np.testing.assert_array_equal(symbols_to_features(y), np.zeros((2, 2, 4)))


def test_frame_shape_mismatch():
    with pytest.raises(ValueError):
        SymbolFrame(np.zeros((5, 2)), (2, 2, 2))


# -- config ------------------------------------------------------------------


def test_config_feature_shape_ratio():
    cfg = CodecConfig()
    assert cfg.feature_shape == (16, 16, 8)
    h, w, c = cfg.feature_shape
    assert h * w * c == pytest.approx(64 * 64 * 3 / 6)
    assert cfg.n_symbols == 1024


def test_config_paper_defaults():
    cfg = CodecConfig()
    assert (cfg.lam, cfg.beta, cfg.batch_size, cfg.learning_rate) == (1.0, 1.0, 128, 1e-3)


@pytest.mark.parametrize("kw", [{"lam": -1}, {"beta": 0}, {"batch_size": 0}])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        CodecConfig(**kw)


def test_config_dict_round_trip():
    assert CodecConfig.from_dict(TOY.to_dict()) == TOY


# -- encode / decode ---------------------------------------------------------


@pytest.fixture(scope="module")
def toy_codec():
    return build_codec(TOY, seed=3)


@pytest.fixture(scope="module")
def faces():
    return synthetic_faces(500, 16, seed=11)


def test_encode_is_deterministic_and_unit_power(toy_codec, faces):
    for x in faces[:10]:
        a, b = encode(toy_codec, x), encode(toy_codec, x)
        assert a == b
        assert abs(a.power() - 1.0) <= 1e-6
        assert a.origin_shape == TOY.feature_shape
        assert a.n_symbols == TOY.n_symbols


def test_batch_and_single_encode_agree(toy_codec, faces):
    batch = encode_batch(toy_codec, faces[:4])
    for x, y in zip(faces[:4], batch):
        np.testing.assert_allclose(encode(toy_codec, x).symbols, y.symbols, atol=1e-6)


def test_decode_is_clamped_and_deterministic(toy_codec, rng):
    y = SymbolFrame((rng.standard_normal((TOY.n_symbols, 2)) * 50).astype(np.float32), TOY.feature_shape)
    a, b = decode(toy_codec, y), decode(toy_codec, y)
    np.testing.assert_array_equal(a, b)
    assert a.shape == TOY.image_shape
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_shape_mismatches(toy_codec):
    with pytest.raises(ValueError):
        encode(toy_codec, np.zeros((8, 8, 3), np.float32))
    with pytest.raises(ValueError):
        decode(toy_codec, SymbolFrame(np.zeros((4, 2), np.float32), (2, 2, 2)))


# -- training ----------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(faces):
    cfg = CodecConfig(image_shape=(16, 16, 3), train_snr_db=0.0, width=16, batch_size=32, epochs=15, lam=0.01)
    return train_codec(faces, cfg, rng_seed=5, validation=faces[:32])


def test_training_reduces_loss(trained):
    _, report = trained
    assert len(report.losses) == 15
    assert report.losses[-1] < report.losses[0]
    assert np.isfinite(report.val_psnr) and -1 <= report.val_ssim <= 1


def test_training_is_deterministic(faces):
    cfg = CodecConfig(image_shape=(16, 16, 3), train_snr_db=10.0, width=8, batch_size=64, epochs=2)
    a, ra = train_codec(faces[:128], cfg, rng_seed=9)
    b, rb = train_codec(faces[:128], cfg, rng_seed=9)
    assert ra.losses == rb.losses
    for pa, pb in zip(a.net.parameters(), b.net.parameters()):
        assert torch.equal(pa, pb)


def test_noiseless_link_beats_training_snr(trained, faces):
    codec, _ = trained
    x = faces[:64]
    frames = encode_batch(codec, x)
    clean = decode_batch(codec, frames)
    noisy = decode_batch(codec, [apply_channel(y, ChannelSpec(0.0, seed=i)) for i, y in enumerate(frames)])
    p_clean = np.mean([psnr(a, b) for a, b in zip(x, clean)])
    p_noisy = np.mean([psnr(a, b) for a, b in zip(x, noisy)])
    assert p_clean > p_noisy


def test_training_input_errors():
    with pytest.raises(ValueError):
        train_codec(np.zeros((0, 16, 16, 3), np.float32), TOY)
    with pytest.raises(ValueError):
        train_codec(np.zeros((4, 8, 8, 3), np.float32), TOY)


def test_training_divergence_is_reported(faces):
    cfg = CodecConfig(image_shape=(16, 16, 3), width=8, batch_size=16, epochs=1, learning_rate=1e30)
    with pytest.raises(TrainingDiverged, match="epoch"):
        train_codec(faces[:64] * np.nan, cfg)


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(trained, tmp_path, faces):
    codec, _ = trained
    path = tmp_path / "codec.ckpt"
    checkpoint.save_codec(codec, path)
    loaded = checkpoint.load_codec(path)
    assert loaded.config == codec.config and loaded.seed == codec.seed
    assert loaded.train_snr_db == codec.train_snr_db
    for (na, pa), (nb, pb) in zip(codec.net.state_dict().items(), loaded.net.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    assert encode(codec, faces[0]) == encode(loaded, faces[0])


def test_checkpoint_file_is_byte_stable(trained, tmp_path):
    codec, _ = trained
    checkpoint.save_codec(codec, tmp_path / "a.ckpt")
    checkpoint.save_codec(codec, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejects_garbage_and_wrong_kind(trained, tmp_path):
    codec, _ = trained
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_codec(bad)
    good = tmp_path / "good.ckpt"
    checkpoint.save_codec(codec, good)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_inverse_net(good)
