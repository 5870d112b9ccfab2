# app/models/generator.py
"""Resolution-wise conditional filter: mel upsampling fused with excitation"""
import logging

import numpy as np

from app.config import GeneratorConfig
from app.errors import NonFiniteError, ShapeError
from app.models import tensor as T
from app.models.layers import Conv1d, ConvTranspose1d, Module
from app.models.ops import max_pool1d

logger = logging.getLogger(__name__)


class SubBlockChain(Module):
    """Successive excitation subsampling; stage i conditions UpBlock 4 - i.

    Each stage max-pools by ``k_m[i]`` and, unless disabled, maps the result to
    the paired UpBlock width with a dilated conv and a leaky ReLU. Disabled
    stages pass the pooled excitation itself, repeated over channels.
    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        widths = cfg.channel_widths()
        self.widths = [widths[len(widths) - 1 - i] for i in range(len(cfg.k_m))]
        self.convs = []
        if cfg.subblock_enabled:
            in_channels = 1
            for width, kernel, dilation in zip(self.widths, cfg.k_s, cfg.d_s):
                self.convs.append(Conv1d(in_channels, width, kernel, rng, dilation=dilation))
                in_channels = width

    def forward(self, e):
        length = e.shape[-1]
        total = self.cfg.pool_factors[-1]
        if length % total:
            raise ShapeError(f"Excitation length {length} is not divisible by the total pooling factor {total}")
        outputs = []
        x = e
        for i, pool in enumerate(self.cfg.k_m):
            x = max_pool1d(x, pool, pool)
            if self.convs:
                x = T.leaky_relu(self.convs[i](x), self.cfg.lrelu_slope)
                outputs.append(x)
            else:
                outputs.append(T.expand(x, (x.shape[0], self.widths[i], x.shape[-1])))
        return outputs


class PCResBlock(Module):
    """Residual block that fuses excitation into features at every dilation.

    For each dilation d::

        h = lrelu(conv_e_d(e) + conv_c_d(c))
        c = lrelu(conv_e_1(e) + conv_h_1(h)) + c
    """

    def __init__(self, channels, kernel, dilations, rng, slope=0.1):
        self.slope = slope
        self.excitation_convs = []
        self.feature_convs = []
        self.excitation_convs_1 = []
        self.hidden_convs_1 = []
        for d in dilations:
            self.excitation_convs.append(Conv1d(channels, channels, kernel, rng, dilation=d))
            self.feature_convs.append(Conv1d(channels, channels, kernel, rng, dilation=d))
            self.excitation_convs_1.append(Conv1d(channels, channels, kernel, rng))
            self.hidden_convs_1.append(Conv1d(channels, channels, kernel, rng))

    def forward(self, c, e):
        if c.shape != e.shape:
            raise ShapeError(f"PC-ResBlock needs matching feature and excitation shapes, got {c.shape} and {e.shape}")
        for conv_e, conv_c, conv_e1, conv_h1 in zip(self.excitation_convs, self.feature_convs,
                                                     self.excitation_convs_1, self.hidden_convs_1):
            h = T.leaky_relu(conv_e(e) + conv_c(c), self.slope)
            c = T.leaky_relu(conv_e1(e) + conv_h1(h), self.slope) + c
        return c


class ResBlock(Module):
    """Plain residual block used when excitation fusion is switched off"""

    def __init__(self, channels, kernel, dilations, rng, slope=0.1):
        self.slope = slope
        self.convs_d = [Conv1d(channels, channels, kernel, rng, dilation=d) for d in dilations]
        self.convs_1 = [Conv1d(channels, channels, kernel, rng) for _ in dilations]

    def forward(self, c):
        for conv_d, conv_1 in zip(self.convs_d, self.convs_1):
            h = conv_d(T.leaky_relu(c, self.slope))
            c = conv_1(T.leaky_relu(h, self.slope)) + c
        return c


class UpBlock(Module):
    def __init__(self, in_channels, kernel, stride, cfg, rng):
        self.slope = cfg.lrelu_slope
        self.fused = cfg.pc_resblock_enabled and cfg.excitation_enabled
        out_channels = in_channels // 2
        self.upsample = ConvTranspose1d(in_channels, out_channels, kernel, stride, rng, padding=(kernel - stride) // 2)
        block = PCResBlock if self.fused else ResBlock
        self.resblocks = [block(out_channels, k, dilations, rng, slope=self.slope)
                          for k, dilations in zip(cfg.k_r, cfg.D_r)]

    def forward(self, c, e=None):
        c = self.upsample(T.leaky_relu(c, self.slope))
        if e is not None and c.shape[-1] != e.shape[-1]:
            raise ShapeError(f"UpBlock output has {c.shape[-1]} samples but its excitation has {e.shape[-1]}")
        if self.fused:
            outs = [block(c, e) for block in self.resblocks]
        else:
            if e is not None:
                c = c + e
            outs = [block(c) for block in self.resblocks]
        total = outs[0]
        for out in outs[1:]:
            total = total + out
        return total / len(outs)


class Generator(Module):
    """Mel (B, n_mels, L) plus excitation (B, 1, hop * L) -> waveform (B, 1, hop * L).

    With ``excitation_enabled`` off this is the plain HiFi-GAN generator: no
    SubBlocks are built and the excitation argument is ignored.
    """

    def __init__(self, cfg=None, rng=None):
        self.cfg = cfg or GeneratorConfig()
        rng = rng or np.random.default_rng(0)
        cfg = self.cfg
        self.pre_conv = Conv1d(cfg.n_mels, cfg.h_u, cfg.pre_kernel, rng)
        self.up_blocks = []
        channels = cfg.h_u
        for kernel, stride in zip(cfg.k_u, cfg.u_r):
            self.up_blocks.append(UpBlock(channels, kernel, stride, cfg, rng))
            channels //= 2
        self.sub_blocks = SubBlockChain(cfg, rng) if cfg.excitation_enabled else None
        self.post_conv = Conv1d(channels, 1, cfg.post_kernel, rng)

    def forward(self, mel, e=None):
        return self.forward_with_trace(mel, e)[0]

    def forward_with_trace(self, mel, e=None):
        """Waveform plus the UpBlock and SubBlock outputs, in UpBlock order"""
        cfg = self.cfg
        if mel.ndim != 3 or mel.shape[1] != cfg.n_mels:
            raise ShapeError(f"Generator expects (batch, {cfg.n_mels}, frames), got {mel.shape}")
        if self.sub_blocks is None:
            excitations = [None] * len(self.up_blocks)
        else:
            expected = mel.shape[-1] * cfg.hop_length
            if e is None or e.shape[-1] != expected or e.shape[0] != mel.shape[0]:
                raise ShapeError(f"Excitation shape {None if e is None else e.shape} does not fit "
                                 f"{mel.shape[-1]} frames (expected {expected} samples per item)")
            excitations = list(reversed(self.sub_blocks(e)))
        c = self.pre_conv(mel)
        up_outputs = []
        for i, (block, ex) in enumerate(zip(self.up_blocks, excitations)):
            c = block(c, ex)
            if not np.all(np.isfinite(c.data)):
                raise NonFiniteError(f"Non-finite activation after UpBlock {i + 1}")
            up_outputs.append(c)
        out = T.tanh(self.post_conv(T.leaky_relu(c, cfg.post_lrelu_slope)))
        return out, up_outputs, excitations


def generator_forward(mel, e, generator):
    """Inference helper: MelSpectrogram + ExcitationSignal (or None) -> (B, 1, T) tensor"""
    mel_tensor = T.as_tensor(mel.frames.T[None, :, :])
    return generator(mel_tensor, None if e is None else e.e)
