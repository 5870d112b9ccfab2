# app/models/discriminator.py
import numpy as np

from app.config import DiscriminatorConfig
from app.errors import ShapeError
from app.models import tensor as T
from app.models.layers import Conv1d, Module
from app.models.ops import avg_pool1d, pad1d


def fold_length(length, period, min_frames=1):
    """Padded length for a period-p view: a multiple of p, at least p * min_frames"""
    padded = -(-length // period) * period
    return max(padded, period * min_frames)


class PeriodDiscriminator(Module):
    """Judges every p-th sample as its own sequence.

    The waveform is zero-padded and folded into p interleaved columns; the
    columns are stacked on the batch axis and share one stack of 1-D convs,
    which is the (k, 1)-kernel 2-D conv over the (T / p, p) view.
    """

    def __init__(self, period, cfg, rng):
        self.period = period
        self.slope = cfg.lrelu_slope
        self.min_frames = cfg.min_frames
        self.convs = []
        in_channels = 1
        last = len(cfg.mpd_channels) - 1
        for i, channels in enumerate(cfg.mpd_channels):
            stride = 1 if i == last else cfg.mpd_stride
            self.convs.append(Conv1d(in_channels, channels, cfg.mpd_kernel, rng, stride=stride,
                                     padding=(cfg.mpd_kernel - 1) // 2))
            in_channels = channels
        self.post_conv = Conv1d(in_channels, 1, 3, rng, padding=1)

    def fold(self, x):
        """(B, 1, T) -> (B * p, 1, T_pad / p)"""
        batch, _, length = x.shape
        padded = fold_length(length, self.period, self.min_frames)
        if padded > length:
            x = pad1d(x, 0, padded - length)
        frames = padded // self.period
        x = T.reshape(x, (batch, frames, self.period))
        x = T.transpose(x, (0, 2, 1))
        return T.reshape(x, (batch * self.period, 1, frames))

    def forward(self, x):
        h = self.fold(x)
        features = []
        for conv in self.convs:
            h = T.leaky_relu(conv(h), self.slope)
            features.append(h)
        score = self.post_conv(h)
        features.append(score)
        return score, features


class ScaleDiscriminator(Module):
    def __init__(self, cfg, rng):
        self.slope = cfg.lrelu_slope
        self.convs = []
        in_channels = 1
        for channels, kernel, stride in zip(cfg.msd_channels, cfg.msd_kernels, cfg.msd_strides):
            self.convs.append(Conv1d(in_channels, channels, kernel, rng, stride=stride, padding=(kernel - 1) // 2))
            in_channels = channels
        self.post_conv = Conv1d(in_channels, 1, 3, rng, padding=1)

    def forward(self, x):
        features = []
        h = x
        for conv in self.convs:
            h = T.leaky_relu(conv(h), self.slope)
            features.append(h)
        score = self.post_conv(h)
        features.append(score)
        return score, features


def downsample(x):
    """One multi-scale step: average pool, kernel 4, stride 2, padding 1"""
    return avg_pool1d(x, 4, 2, padding=1)


class DiscriminatorSet(Module):
    """Multi-period plus multi-scale discriminators"""

    def __init__(self, cfg=None, rng=None):
        self.cfg = cfg or DiscriminatorConfig()
        rng = rng or np.random.default_rng(0)
        self.period_discriminators = [PeriodDiscriminator(p, self.cfg, rng) for p in self.cfg.periods]
        self.scale_discriminators = [ScaleDiscriminator(self.cfg, rng) for _ in range(self.cfg.msd_scales)]

    @property
    def num_discriminators(self):
        return len(self.period_discriminators) + len(self.scale_discriminators)

    def forward(self, audio):
        """(B, 1, T) waveform -> list of (score, feature maps), periods first, then scales"""
        if audio.ndim != 3 or audio.shape[1] != 1:
            raise ShapeError(f"Discriminators expect (batch, 1, time), got {audio.shape}")
        outputs = [d(audio) for d in self.period_discriminators]
        x = audio
        min_length = 2 ** (len(self.scale_discriminators) + 1)
        if x.shape[-1] < min_length:
            x = pad1d(x, 0, min_length - x.shape[-1])
        for i, d in enumerate(self.scale_discriminators):
            if i > 0:
                x = downsample(x)
            outputs.append(d(x))
        return outputs


def discriminator_forward(audio, discriminators):
    """Score maps and feature maps for a 1-D waveform or a (B, 1, T) tensor"""
    if not isinstance(audio, T.Tensor):
        samples = np.asarray(getattr(audio, 'samples', audio), dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise ShapeError("Discriminators need a non-empty waveform")
        audio = T.Tensor(samples[None, None, :])
    return discriminators(audio)
