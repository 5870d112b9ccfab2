# app/models/mel.py
import numpy as np
from scipy.signal import get_window

from app.config import FeatureConfig
from app.errors import ShapeError
from app.models import tensor as T
from app.models.ops import conv1d, pad1d
from app.models.tensor import Tensor
from app.utils.features import mel_filterbank


class MelTransform:
    """Log-mel analysis as tensor ops, so a mel loss can be backpropagated.

    Framing, window and filterbank are the ones FeatureExtractor uses; the DFT
    is a strided convolution with fixed cosine and sine kernels.
    """

    def __init__(self, cfg=None):
        self.cfg = cfg or FeatureConfig()
        n_fft, hop = self.cfg.n_fft, self.cfg.hop_length
        self.side_padding = (n_fft - hop) // 2
        self.num_bins = n_fft // 2 + 1

        window = get_window('hann', self.cfg.win_length, fftbins=True)
        if self.cfg.win_length < n_fft:
            offset = (n_fft - self.cfg.win_length) // 2
            window = np.pad(window, (offset, n_fft - self.cfg.win_length - offset))
        n = np.arange(n_fft)
        k = np.arange(self.num_bins)[:, None]
        angle = 2 * np.pi * k * n / n_fft
        kernels = np.concatenate([np.cos(angle) * window, -np.sin(angle) * window], axis=0)
        self.dft_kernel = Tensor(kernels[:, None, :])
        self.mel_kernel = Tensor(mel_filterbank(self.cfg)[:, :, None])

    def __call__(self, audio):
        """(B, 1, T) waveform tensor -> (B, n_mels, T / hop) log-mel tensor"""
        if audio.ndim != 3 or audio.shape[1] != 1:
            raise ShapeError(f"MelTransform expects (batch, 1, time), got {audio.shape}")
        length = audio.shape[-1]
        if length % self.cfg.hop_length:
            raise ShapeError(f"Waveform length {length} is not a multiple of the hop {self.cfg.hop_length}")
        mode = 'reflect' if length > self.side_padding else 'constant'
        padded = pad1d(audio, self.side_padding, self.side_padding, mode=mode)
        spec = conv1d(padded, self.dft_kernel, stride=self.cfg.hop_length)
        real = T.slice_axis(spec, 1, 0, self.num_bins)
        imag = T.slice_axis(spec, 1, self.num_bins, 2 * self.num_bins)
        magnitude = T.sqrt(T.add(T.add(T.square(real), T.square(imag)), 1e-10))
        mel = conv1d(magnitude, self.mel_kernel)
        return T.log(T.clamp_min(mel, self.cfg.log_floor))
