# app/models/source.py
import logging

import numpy as np

from app.config import SourceConfig
from app.errors import ShapeError
from app.models import tensor as T
from app.models.features import F0Track
from app.models.layers import Conv1d, Module
from app.models.tensor import Tensor

logger = logging.getLogger(__name__)


class ExcitationSignal:
    """Sample-level source signal and the per-sample V/UV flags it was built from"""

    def __init__(self, e, vuv_upsampled):
        vuv_upsampled = np.asarray(vuv_upsampled, dtype=bool).reshape(-1)
        if e.shape[-1] != vuv_upsampled.size:
            raise ShapeError(f"Excitation has {e.shape[-1]} samples but {vuv_upsampled.size} V/UV flags")
        self.e = e
        self.vuv_upsampled = vuv_upsampled

    def __len__(self):
        return self.vuv_upsampled.size

    @property
    def samples(self):
        return self.e.numpy().reshape(-1)


class NoiseShaper(Module):
    """The trainable noise branch: conv -> tanh -> conv, same length in and out"""

    def __init__(self, channels, kernel, rng):
        self.conv_in = Conv1d(1, channels, kernel, rng)
        self.conv_out = Conv1d(channels, 1, kernel, rng)
        self.conv_out.zero_()

    def forward(self, x):
        return self.conv_out(T.tanh(self.conv_in(x)))


def build_noise_dnn(cfg, rng=None):
    if not cfg.dnn_enabled:
        raise ValueError("Noise DNN requested but dnn_enabled is false")
    rng = rng or np.random.default_rng(cfg.seed)
    return NoiseShaper(cfg.dnn_channels, cfg.dnn_kernel, rng)


def _as_f0_array(f0):
    if isinstance(f0, F0Track):
        return f0.f0
    return np.asarray(f0, dtype=np.float64).reshape(-1)


def upsample_vuv(vuv, hop=256):
    vuv = np.asarray(vuv, dtype=bool).reshape(-1)
    return np.repeat(vuv, hop)


def upsample_f0(f0, hop=256, mode='linear'):
    """Per-sample F0 from frame F0.

    Inside each voiced run the contour is interpolated linearly between frame
    centres (held flat before the first and after the last centre of the run);
    ``mode='step'`` repeats each frame value instead. Unvoiced samples are 0.
    """
    f0 = _as_f0_array(f0)
    if f0.size == 0:
        raise ShapeError("Cannot upsample an empty F0 track")
    if mode == 'step':
        return np.repeat(f0, hop)
    if mode != 'linear':
        raise ValueError(f"Unsupported F0 interpolation: {mode}")

    out = np.zeros(f0.size * hop)
    voiced = f0 > 0
    edges = np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    centres = np.arange(f0.size) * hop + hop / 2
    for start, stop in zip(starts, stops):
        positions = np.arange(start * hop, stop * hop)
        out[start * hop:stop * hop] = np.interp(positions, centres[start:stop], f0[start:stop])
    return out


def generate_excitation(f, v, cfg, g=None, rng=None, phase=None, noise=None):
    """Excitation for per-sample F0 ``f`` and flags ``v``.

    Voiced samples get ``alpha * sin(cumulative phase + phi) + n`` and unvoiced
    samples ``g(n / (3 sigma))``. The phase sum runs over every sample, so it
    holds still through unvoiced stretches. ``phi`` and the noise are drawn from
    ``rng`` unless given explicitly.

    Args:
        f: per-sample F0 in Hz
        v: per-sample voicing flags
        cfg: SourceConfig
        g: NoiseShaper, or None for the identity
        rng: numpy Generator for phi and noise
        phase: fixed initial phase phi
        noise: fixed noise draw n (length T, or (2, T) when noise is not shared)

    Returns:
        ExcitationSignal whose ``e`` is a (1, 1, T) tensor, differentiable
        w.r.t. the parameters of ``g``
    """
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=bool).reshape(-1)
    if f.size != v.size:
        raise ShapeError(f"F0 has {f.size} samples but V/UV has {v.size}")
    if np.any(f < 0):
        raise ValueError("F0 must be non-negative")
    if rng is None and (phase is None or noise is None):
        rng = np.random.default_rng(cfg.seed)

    if phase is None:
        phase = np.pi - rng.uniform(0.0, 2 * np.pi)
    if noise is None:
        shape = f.size if cfg.shared_noise else (2, f.size)
        noise = rng.normal(0.0, cfg.sigma, size=shape)
    noise = np.asarray(noise, dtype=np.float64)
    voiced_noise, unvoiced_noise = (noise, noise) if noise.ndim == 1 else (noise[0], noise[1])

    theta = np.cumsum(2 * np.pi * f / cfg.sample_rate) + phase
    sine = cfg.alpha * np.sin(theta) + voiced_noise
    scaled = unvoiced_noise / (3 * cfg.sigma)

    if g is None:
        return ExcitationSignal(Tensor(np.where(v, sine, scaled)[None, None, :]), v)

    mask = v.astype(np.float64)
    shaped = g(Tensor(scaled[None, None, :]))
    e = T.add(Tensor((sine * mask)[None, None, :]), T.mul(shaped, Tensor((1 - mask)[None, None, :])))
    return ExcitationSignal(e, v)


class SourceModule(Module):
    """F0 track -> excitation, owning the noise-shaping network"""

    def __init__(self, cfg=None, rng=None):
        self.cfg = cfg or SourceConfig()
        rng = rng or np.random.default_rng(self.cfg.seed)
        self.noise_dnn = build_noise_dnn(self.cfg, rng) if self.cfg.dnn_enabled else None

    def upsample(self, f0_track):
        f = upsample_f0(f0_track, self.cfg.hop_length, self.cfg.f0_interpolation)
        v = upsample_vuv(f0_track.vuv, self.cfg.hop_length)
        return np.where(v, f, 0.0), v

    def forward(self, f0_track, rng=None, phase=None, noise=None):
        f, v = self.upsample(f0_track)
        return generate_excitation(f, v, self.cfg, g=self.noise_dnn, rng=rng, phase=phase, noise=noise)


def batch_excitations(signals):
    """Stack single-utterance excitations of equal length into (B, 1, T)"""
    if len(signals) == 1:
        return signals[0].e
    return T.concat([s.e for s in signals], axis=0)
