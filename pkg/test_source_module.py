# test_source_module.py
import numpy as np
import pytest

from app.config import SourceConfig
from app.errors import ShapeError
from app.models import tensor as T
from app.models.features import F0Track
from app.models.source import (NoiseShaper, SourceModule, batch_excitations, build_noise_dnn, generate_excitation,
                               upsample_f0, upsample_vuv)
from app.models.tensor import Tensor, default_dtype
from app.utils.gradcheck import check_gradients

NO_DNN = SourceConfig(dnn_enabled=False)


def clean_excitation(freq, num_samples, phase=0.0):
    f = np.full(num_samples, freq)
    v = np.ones(num_samples, dtype=bool)
    return generate_excitation(f, v, NO_DNN, phase=phase, noise=np.zeros(num_samples)).samples


def test_upsample_f0_constant_and_length():
    out = upsample_f0(np.full(5, 220.0))
    assert out.shape == (5 * 256,)
    assert np.all(out == 220.0)


def test_upsample_f0_interpolates_between_centres():
    out = upsample_f0([200.0, 210.0])
    assert out[256] == pytest.approx(205.0)
    assert out[0] == 200.0 and out[-1] == 210.0
    assert np.all(np.diff(out) >= 0)


def test_upsample_f0_keeps_unvoiced_frames_at_zero():
    out = upsample_f0([200.0, 0.0, 300.0], hop=4)
    assert out.tolist() == [200.0] * 4 + [0.0] * 4 + [300.0] * 4
    assert upsample_f0([200.0, 210.0], hop=2, mode='step').tolist() == [200, 200, 210, 210]
    with pytest.raises(ShapeError):
        upsample_f0([])


def test_upsample_vuv():
    out = upsample_vuv([True, False])
    assert out[:256].all() and not out[256:].any()
    assert upsample_vuv(np.ones(3, dtype=bool)).all()
    assert upsample_vuv(np.zeros(7, dtype=bool)).shape == (7 * 256,)


def test_quarter_period_of_220_5_hz():
    e = clean_excitation(220.5, 8192)
    t = np.arange(1, 8193)
    np.testing.assert_allclose(e, 0.1 * np.sin(2 * np.pi * t / 100), atol=1e-6)
    assert e[24] == pytest.approx(0.1, abs=1e-6)


@pytest.mark.parametrize('freq', [110.0, 220.5, 392.0])
def test_excitation_is_a_single_sinusoid(freq):
    phase = 1.234
    e = clean_excitation(freq, 8192, phase=phase)
    t = np.arange(1, 8193)
    expected = 0.1 * np.sin(2 * np.pi * freq * t / 22050 + phase)
    assert np.max(np.abs(e - expected)) < 1e-5
    peak = np.argmax(np.abs(np.fft.rfft(e, n=8192)))
    assert abs(peak - freq * 8192 / 22050) <= 1


def test_unvoiced_identity_noise_is_scaled_gaussian():
    sigma = NO_DNN.sigma
    signal = generate_excitation(np.zeros(1000), np.zeros(1000, dtype=bool), NO_DNN, rng=np.random.default_rng(9),
                                 phase=0.0)
    expected = np.random.default_rng(9).normal(0.0, sigma, 1000) / (3 * sigma)
    np.testing.assert_allclose(signal.samples, expected, rtol=1e-5, atol=1e-6)


def test_separate_noise_draws_per_branch():
    cfg = SourceConfig(dnn_enabled=False, shared_noise=False)
    noise = np.stack([np.full(4, 0.01), np.full(4, 0.003)])
    v = np.array([True, True, False, False])
    signal = generate_excitation(np.zeros(4), v, cfg, phase=0.0, noise=noise)
    np.testing.assert_allclose(signal.samples, [0.01, 0.01, 1 / 3, 1 / 3], rtol=1e-6)


def test_excitation_input_checks():
    with pytest.raises(ShapeError):
        generate_excitation(np.zeros(4), np.zeros(3, dtype=bool), NO_DNN)
    with pytest.raises(ValueError):
        generate_excitation(-np.ones(4), np.zeros(4, dtype=bool), NO_DNN)


def test_noise_dnn_starts_silent_and_keeps_length(rng):
    g = build_noise_dnn(SourceConfig(), rng)
    for length in rng.integers(1, 300, size=5):
        x = Tensor(rng.normal(size=(1, 1, int(length))))
        y = g(x)
        assert y.shape == x.shape
        assert np.all(y.numpy() == 0)
    with pytest.raises(ValueError):
        build_noise_dnn(NO_DNN)


def test_noise_dnn_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    with default_dtype(np.float64):
        g = NoiseShaper(4, 5, rng)
        g.conv_out.weight.assign(rng.normal(0, 0.3, size=g.conv_out.weight.shape))
        g.conv_out.bias.assign(rng.normal(0, 0.3, size=1))
        cfg = SourceConfig(dnn_channels=4, dnn_kernel=5)
        v = np.arange(200) < 80
        f = np.where(v, 180.0, 0.0)
        noise = rng.normal(0.0, cfg.sigma, 200)
        projection = Tensor(rng.normal(size=(1, 1, 200)))

        def loss_fn():
            e = generate_excitation(f, v, cfg, g=g, phase=0.3, noise=noise).e
            return T.sum_all(T.mul(e, projection))

        assert check_gradients(loss_fn, g.parameters(), atol=1e-3) < 1e-4


def test_shaped_noise_only_in_unvoiced_samples(rng):
    cfg = SourceConfig()
    g = build_noise_dnn(cfg, rng)
    g.conv_out.bias.assign([0.5])
    v = np.arange(512) < 256
    signal = generate_excitation(np.where(v, 200.0, 0.0), v, cfg, g=g, phase=0.0, noise=np.zeros(512))
    samples = signal.samples
    np.testing.assert_allclose(samples[256:], 0.5, rtol=1e-6)
    expected = 0.1 * np.sin(2 * np.pi * 200.0 * np.arange(1, 257) / 22050)
    np.testing.assert_allclose(samples[:256], expected, atol=1e-6)


def test_source_module_length_and_determinism():
    source = SourceModule(SourceConfig())
    track = F0Track([0.0, 200.0, 210.0, 0.0])
    a = source(track, rng=np.random.default_rng(3))
    b = source(track, rng=np.random.default_rng(3))
    assert len(a) == 4 * 256
    assert a.e.shape == (1, 1, 1024)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.vuv_upsampled[256:768].all() and not a.vuv_upsampled[:256].any()


def test_batch_excitations_stacks_items():
    source = SourceModule(NO_DNN)
    track = F0Track(np.full(2, 150.0))
    signals = [source(track, rng=np.random.default_rng(i)) for i in range(3)]
    assert batch_excitations(signals).shape == (3, 1, 512)


if __name__ == "__main__":
    pytest.main([__file__])
