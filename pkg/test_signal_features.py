# test_signal_features.py
import numpy as np
import pytest
from scipy.io import wavfile

from app.config import FeatureConfig
from app.errors import AudioFormatError, ContainerError, ShapeError
from app.models import container
from app.models.features import AudioBuffer, F0Track, FeatureSet, vuv_flags
from app.utils.audio_io import read_wav, write_wav
from app.utils.features import (FeatureExtractor, load_features, log_amplitude_spectrogram, mel_filterbank,
                                mel_spectrogram, save_features)
from app.utils.metrics import las_rmse
from conftest import SAMPLE_RATE, sine

FLOOR = np.log(1e-5)


def test_wav_round_trip_within_quantization(tmp_path):
    samples = np.random.default_rng(0).uniform(-1, 1, 4000)
    path = tmp_path / 'noise.wav'
    write_wav(path, AudioBuffer(samples, SAMPLE_RATE))
    audio = read_wav(path)
    assert audio.sample_rate == SAMPLE_RATE
    assert np.max(np.abs(audio.samples - samples.astype(np.float32))) <= 1 / 32768


def test_wav_round_trip_keeps_the_spectrum(tmp_path):
    samples = np.random.default_rng(2).uniform(-0.8, 0.8, 8192)
    path = tmp_path / 'spectrum.wav'
    write_wav(path, AudioBuffer(samples, SAMPLE_RATE))
    assert las_rmse(samples, read_wav(path)) < 0.01


def test_write_wav_clamps_out_of_range(tmp_path):
    path = tmp_path / 'loud.wav'
    write_wav(path, AudioBuffer([2.0, -3.0, 0.5], SAMPLE_RATE))
    _, data = wavfile.read(path)
    assert data.tolist() == [32767, -32767, 16384]


def test_read_wav_rejects_unsupported_formats(tmp_path):
    stereo = tmp_path / 'stereo.wav'
    wavfile.write(stereo, SAMPLE_RATE, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(AudioFormatError):
        read_wav(stereo)

    eight_bit = tmp_path / 'eight.wav'
    wavfile.write(eight_bit, SAMPLE_RATE, np.full(100, 128, dtype=np.uint8))
    with pytest.raises(AudioFormatError):
        read_wav(eight_bit)

    corrupt = tmp_path / 'corrupt.wav'
    corrupt.write_bytes(b'definitely not a riff file')
    with pytest.raises(AudioFormatError):
        read_wav(corrupt)


def test_frame_count_formula():
    extractor = FeatureExtractor()
    assert log_amplitude_spectrogram(np.zeros(8192)).shape == (32, 513)
    assert extractor.num_frames(5000) == 20
    assert extractor.frames(np.zeros(5000)).shape == (20, 1024)


def test_sine_peaks_at_its_bin():
    k = 40
    n = 8192
    x = sine(SAMPLE_RATE * k / 1024, n)
    peaks = np.argmax(log_amplitude_spectrogram(x), axis=1)
    # frames whose window lies wholly inside the signal; the two reflect-padded
    # edge frames see a phase-flipped mirror and may land one bin off
    first = -(-FeatureExtractor().side_padding // 256)
    last = (n + FeatureExtractor().side_padding - 1024) // 256
    assert (first, last) == (2, 29)
    assert np.all(peaks[first:last + 1] == k)
    assert np.all(np.abs(peaks - k) <= 1)


def test_silence_hits_the_floor():
    np.testing.assert_allclose(log_amplitude_spectrogram(np.zeros(2048)), FLOOR)
    mel = mel_spectrogram(np.zeros(2048))
    assert mel.frames.shape == (8, 80)
    np.testing.assert_allclose(mel.frames, np.float32(FLOOR))


def test_mel_filterbank_rows():
    basis = mel_filterbank(FeatureConfig())
    assert basis.shape == (80, 513)
    assert np.all(basis.sum(axis=1) > 0)
    for filt in basis:
        support = np.flatnonzero(filt > 0)
        assert support[-1] - support[0] + 1 == support.size


def test_doubling_amplitude_adds_log_two():
    extractor = FeatureExtractor()
    x = np.random.default_rng(1).normal(0, 0.1, 4096)
    a = extractor.log_mel(x)
    b = extractor.log_mel(2 * x)
    unfloored = a > FLOOR + 1.0
    assert unfloored.mean() > 0.9
    np.testing.assert_allclose(b[unfloored] - a[unfloored], np.log(2), atol=1e-6)


def test_f0_of_a_sine(sine_audio):
    track = FeatureExtractor().extract_f0(sine_audio)
    voiced = track.f0[track.vuv]
    assert track.num_voiced >= 0.9 * len(track)
    assert np.all(np.abs(voiced - 220.5) <= 2.0)


def test_f0_of_noise_and_silence():
    extractor = FeatureExtractor()
    noise = np.random.default_rng(5).normal(0, 0.3, SAMPLE_RATE)
    track = extractor.extract_f0(noise)
    assert np.mean(~track.vuv) >= 0.9
    assert extractor.extract_f0(np.zeros(SAMPLE_RATE)).num_voiced == 0


def test_mel_and_f0_frames_align():
    extractor = FeatureExtractor()
    x = sine(150.0, 5000)
    features = extractor.extract(AudioBuffer(x, SAMPLE_RATE), name='odd')
    assert features.mel.num_frames == len(features.f0_track) == 20
    assert features.num_samples == 5000


def test_extractor_rejects_other_sample_rates():
    with pytest.raises(ValueError):
        FeatureExtractor().mel_spectrogram(AudioBuffer(np.zeros(1000), 16000))


def test_vuv_flags():
    assert vuv_flags([0, 220, 0]).tolist() == [False, True, False]
    assert not vuv_flags(np.zeros(4)).any()
    assert vuv_flags(np.full(4, 100.0)).all()
    with pytest.raises(ValueError):
        F0Track([100.0, 0.0], vuv=[True, True])
    with pytest.raises(ValueError):
        F0Track([-1.0])


def test_feature_set_needs_matching_frames():
    mel = mel_spectrogram(np.zeros(1024))
    with pytest.raises(ShapeError):
        FeatureSet('x', mel, F0Track(np.zeros(3)))


def test_feature_container_round_trip(tmp_path, sine_audio):
    cfg = FeatureConfig()
    features = FeatureExtractor(cfg).extract(sine_audio, name='tone')
    path = tmp_path / 'tone.feat'
    save_features(path, features, cfg)
    loaded, loaded_cfg = load_features(path)
    assert loaded.name == 'tone'
    assert loaded_cfg == cfg
    np.testing.assert_array_equal(loaded.mel.frames, features.mel.frames)
    np.testing.assert_array_equal(loaded.f0_track.f0, features.f0_track.f0)


def test_mel_only_container(tmp_path):
    cfg = FeatureConfig()
    mel = mel_spectrogram(np.zeros(2048))
    path = tmp_path / 'external.feat'
    save_features(path, FeatureSet('external', mel), cfg)
    loaded, _ = load_features(path)
    assert not loaded.has_f0
    assert loaded.mel.num_frames == 8


def test_container_errors(tmp_path):
    bad = tmp_path / 'bad.feat'
    bad.write_bytes(b'XXXX' + bytes(20))
    with pytest.raises(ContainerError):
        load_features(bad)

    ckpt = tmp_path / 'model.sfgn'
    container.write_container(ckpt, container.KIND_CHECKPOINT, {'step': 0}, {'w': np.zeros(3, dtype=np.float32)})
    with pytest.raises(ContainerError):
        load_features(ckpt)

    truncated = tmp_path / 'truncated.feat'
    truncated.write_bytes(ckpt.read_bytes()[:-4])
    with pytest.raises(ContainerError):
        container.read_container(truncated)


def test_container_preserves_dtypes(tmp_path):
    path = tmp_path / 'blobs.sfgn'
    blobs = {'a': np.arange(6, dtype=np.float32).reshape(2, 3), 'b': np.array([True, False]),
             'c': np.arange(3, dtype=np.float64)}
    container.write_container(path, container.KIND_CHECKPOINT, {'note': 'x'}, blobs)
    meta, loaded = container.read_container(path, expected_kind=container.KIND_CHECKPOINT)
    assert meta == {'note': 'x'}
    assert loaded['a'].dtype == np.float32 and loaded['a'].shape == (2, 3)
    assert loaded['b'].tolist() == [1, 0]
    np.testing.assert_array_equal(loaded['c'], blobs['c'])


if __name__ == "__main__":
    pytest.main([__file__])
