# app/models/f0_predictor.py
import numpy as np

from app.config import F0PredictorConfig
from app.models import tensor as T
from app.models.features import F0Track
from app.models.layers import Conv1d, Module


class F0Predictor(Module):
    """Frame-wise F0 and voicing from the lowest mel bands.

    Three parallel conv stacks with different kernel sizes read the first
    ``n_bands`` mel channels; their outputs are concatenated and fed to two
    1x1 heads: ReLU for F0 (in units of ``f0_scale`` Hz) and sigmoid for the
    voicing probability.
    """

    def __init__(self, cfg=None, rng=None):
        self.cfg = cfg or F0PredictorConfig()
        rng = rng or np.random.default_rng(0)
        cfg = self.cfg
        self.stacks = []
        for kernel in cfg.kernels:
            layers = []
            in_channels = cfg.n_bands
            for _ in range(cfg.layers):
                layers.append(Conv1d(in_channels, cfg.channels, kernel, rng))
                in_channels = cfg.channels
            self.stacks.append(layers)
        width = cfg.channels * len(cfg.kernels)
        self.f0_head = Conv1d(width, 1, 1, rng)
        self.vuv_head = Conv1d(width, 1, 1, rng)
        # start the ReLU head in its active region
        self.f0_head.bias.assign(np.ones(1))

    @property
    def feature_width(self):
        return self.cfg.channels * len(self.stacks)

    def zero_heads(self):
        self.f0_head.zero_()
        self.vuv_head.zero_()

    def features(self, mel):
        """(B, n_mels, L) tensor -> (B, feature_width, L) tensor"""
        x = T.slice_axis(mel, 1, 0, self.cfg.n_bands)
        outputs = []
        for layers in self.stacks:
            h = x
            for conv in layers:
                h = T.leaky_relu(conv(h), self.cfg.lrelu_slope)
            outputs.append(h)
        return T.concat(outputs, axis=1)

    def forward(self, mel):
        """Returns (f0 in f0_scale units, voicing probability), each (B, 1, L)"""
        h = self.features(mel)
        return T.relu(self.f0_head(h)), T.sigmoid(self.vuv_head(h))

    def predict(self, mel):
        """MelSpectrogram -> F0Track; voiced only where the probability exceeds the threshold.

        Voiced F0 is clipped to [f0_min, f0_max].
        """
        # bands beyond n_bands never enter the graph
        bands = mel.frames[:, :self.cfg.n_bands].T[None, :, :]
        f0_scaled, prob = self(T.as_tensor(bands))
        f0 = f0_scaled.numpy().reshape(-1) * self.cfg.f0_scale
        voiced = prob.numpy().reshape(-1) > self.cfg.vuv_threshold
        return F0Track(np.where(voiced, np.clip(f0, self.cfg.f0_min, self.cfg.f0_max), 0.0))

