# app/utils/features.py
import logging
import os
from pathlib import Path

import librosa
import numpy as np
from scipy import fft as sp_fft

from app.config import FeatureConfig
from app.errors import ConfigMismatchError, ContainerError
from app.models import container
from app.models.features import AudioBuffer, F0Track, FeatureSet, MelSpectrogram

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = '.feat'


class FeatureExtractor:
    """Acoustic analysis on the shared frame grid.

    Every analysis first pads the waveform at the end to a multiple of the hop,
    then reflect-pads (n_fft - hop) / 2 samples on both sides without further
    centering, so an utterance of T samples yields L = ceil(T / hop) frames and
    frame i is centred on sample i * hop + hop / 2.
    """

    def __init__(self, cfg=None):
        self.cfg = cfg or FeatureConfig()
        self._mel_basis = None

    @property
    def side_padding(self):
        return (self.cfg.n_fft - self.cfg.hop_length) // 2

    @property
    def mel_basis(self):
        if self._mel_basis is None:
            self._mel_basis = mel_filterbank(self.cfg)
        return self._mel_basis

    def _samples(self, audio):
        if isinstance(audio, AudioBuffer):
            if audio.sample_rate != self.cfg.sample_rate:
                raise ConfigMismatchError(
                    f"Audio is {audio.sample_rate} Hz but features are configured for {self.cfg.sample_rate} Hz")
            return audio.samples.astype(np.float64)
        return np.asarray(audio, dtype=np.float64).reshape(-1)

    def pad_to_hop(self, audio):
        """Zero-pad the end so the length is a multiple of the hop"""
        samples = self._samples(audio)
        hop = self.cfg.hop_length
        remainder = (-samples.size) % hop
        return np.pad(samples, (0, remainder)) if remainder else samples

    def num_frames(self, num_samples):
        return -(-num_samples // self.cfg.hop_length)

    def _analysis_signal(self, audio):
        padded = self.pad_to_hop(audio)
        side = self.side_padding
        mode = 'reflect' if padded.size > side else 'constant'
        return np.pad(padded, (side, side), mode=mode), padded.size // self.cfg.hop_length

    def frames(self, audio):
        """(L, win_length) matrix of raw analysis frames"""
        signal, num_frames = self._analysis_signal(audio)
        windows = np.lib.stride_tricks.sliding_window_view(signal, self.cfg.n_fft)[::self.cfg.hop_length]
        return windows[:num_frames]

    def magnitude(self, audio):
        """(L, n_fft / 2 + 1) STFT magnitudes with a periodic Hann window"""
        signal, num_frames = self._analysis_signal(audio)
        stft = librosa.stft(signal, n_fft=self.cfg.n_fft, hop_length=self.cfg.hop_length,
                            win_length=self.cfg.win_length, window='hann', center=False)
        return np.abs(stft).T[:num_frames]

    def log_amplitude_spectrogram(self, audio):
        return np.log(np.maximum(self.magnitude(audio), self.cfg.log_floor))

    def log_mel(self, audio):
        """(L, n_mels) float64 log-mel matrix"""
        mel = self.magnitude(audio) @ self.mel_basis.T
        return np.log(np.maximum(mel, self.cfg.log_floor))

    def mel_spectrogram(self, audio):
        return MelSpectrogram(self.log_mel(audio), self.cfg.hop_length)

    def extract_f0(self, audio):
        """Normalised-autocorrelation F0 per frame.

        The first local correlation peak that reaches ``peak_ratio`` of the
        strongest peak in the allowed lag range wins, which keeps octave-down
        errors away. Frames whose winning correlation stays below
        ``voicing_threshold`` are unvoiced.
        """
        cfg = self.cfg
        frames = self.frames(audio)
        width = frames.shape[1]
        min_lag = int(np.floor(cfg.sample_rate / cfg.f0_max))
        max_lag = min(int(np.ceil(cfg.sample_rate / cfg.f0_min)), width - 2)

        spectrum = sp_fft.rfft(frames, n=2 * width, axis=1)
        acf = sp_fft.irfft(np.abs(spectrum) ** 2, n=2 * width, axis=1)[:, :width]
        energy = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
        lags = np.arange(width)
        head = energy[:, width - lags]                   # sum of x[n]^2, n < W - lag
        tail = energy[:, width:width + 1] - energy[:, lags]  # sum of x[n]^2, n >= lag
        nccf = acf / np.sqrt(np.maximum(head * tail, 1e-20))

        f0 = np.zeros(frames.shape[0])
        loud = energy[:, -1] / width > 1e-10
        for i in np.flatnonzero(loud):
            lag = _pick_period(nccf[i], min_lag, max_lag, cfg.peak_ratio, cfg.voicing_threshold)
            if lag is None:
                continue
            freq = cfg.sample_rate / lag
            if cfg.f0_min <= freq <= cfg.f0_max:
                f0[i] = freq
        return F0Track(f0)

    def extract(self, audio, name=''):
        """Mel and F0 for one utterance as a FeatureSet"""
        mel = self.mel_spectrogram(audio)
        f0_track = self.extract_f0(audio)
        num_samples = len(audio) if isinstance(audio, AudioBuffer) else None
        return FeatureSet(name, mel, f0_track, num_samples=num_samples)


def _pick_period(r, min_lag, max_lag, peak_ratio, threshold):
    """Refined lag of the chosen correlation peak, or None when unvoiced"""
    candidates = np.arange(min_lag, max_lag + 1)
    candidates = candidates[candidates >= 1]
    left, mid, right = r[candidates - 1], r[candidates], r[candidates + 1]
    peaks = candidates[(mid >= left) & (mid >= right) & (mid > 0)]
    if peaks.size == 0:
        return None
    best = r[peaks].max()
    if best < threshold:
        return None
    lag = peaks[np.argmax(r[peaks] >= peak_ratio * best)]
    a, b, c = r[lag - 1], r[lag], r[lag + 1]
    denom = a - 2 * b + c
    offset = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return lag + float(np.clip(offset, -0.5, 0.5))


def mel_filterbank(cfg):
    """(n_mels, n_fft / 2 + 1) HTK-scale triangular filters"""
    return librosa.filters.mel(sr=cfg.sample_rate, n_fft=cfg.n_fft, n_mels=cfg.n_mels,
                               fmin=cfg.fmin, fmax=cfg.fmax, htk=True)


def pad_to_hop(audio, cfg=None):
    return FeatureExtractor(cfg).pad_to_hop(audio)


def log_amplitude_spectrogram(audio, cfg=None):
    return FeatureExtractor(cfg).log_amplitude_spectrogram(audio)


def mel_spectrogram(audio, cfg=None):
    return FeatureExtractor(cfg).mel_spectrogram(audio)


def extract_f0(audio, cfg=None):
    return FeatureExtractor(cfg).extract_f0(audio)


def save_features(path, features, cfg):
    """Write a FeatureSet to the binary feature container"""
    blobs = {'mel': features.mel.frames}
    if features.has_f0:
        blobs['f0'] = features.f0_track.f0.astype(np.float64)
        blobs['vuv'] = features.f0_track.vuv.astype(np.uint8)
    meta = {
        'name': features.name,
        'num_samples': features.num_samples,
        'features': cfg.model_dump(),
    }
    container.write_container(path, container.KIND_FEATURES, meta, blobs)
    logger.debug("Saved features for '%s' (%d frames) to %s", features.name, features.mel.num_frames, path)


def load_features(path):
    """Read a feature container; returns (FeatureSet, FeatureConfig)"""
    meta, blobs = container.read_container(path, expected_kind=container.KIND_FEATURES)
    if 'mel' not in blobs:
        raise ContainerError(f"Feature container {path} has no 'mel' blob")
    cfg = FeatureConfig.model_validate(meta.get('features', {}))
    mel = MelSpectrogram(blobs['mel'], cfg.hop_length)
    f0_track = None
    if 'f0' in blobs:
        f0_track = F0Track(blobs['f0'].astype(np.float64))
    name = meta.get('name') or Path(path).stem
    return FeatureSet(name, mel, f0_track, num_samples=meta.get('num_samples')), cfg


def list_feature_files(directory):
    """Feature containers directly inside ``directory``, sorted by name"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix == FEATURE_SUFFIX)


def export_matrix_text(path, matrix, fmt='%.6f'):
    """Plain-text export, one row per frame"""
    os.makedirs(Path(path).parent, exist_ok=True)
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    np.savetxt(path, matrix, fmt=fmt)
