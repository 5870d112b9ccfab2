# app/models/vocoder.py
import logging

import numpy as np

from app.config import RunConfig
from app.errors import ConfigMismatchError, MissingF0Error
from app.models.features import AudioBuffer
from app.models.generator import Generator, generator_forward
from app.models.layers import Module
from app.models.source import SourceModule

logger = logging.getLogger(__name__)


class Vocoder(Module):
    """Source module plus generator, built from one RunConfig and one seed"""

    def __init__(self, cfg=None, seed=None):
        self.cfg = cfg or RunConfig()
        seed = self.cfg.source.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        self.source = SourceModule(self.cfg.source, rng)
        self.generator = Generator(self.cfg.generator, rng)

    @property
    def uses_source(self):
        return self.cfg.generator.excitation_enabled

    def trainable_parameters(self):
        if self.uses_source:
            return super().trainable_parameters()
        return self.generator.trainable_parameters()

    def synthesize(self, mel, f0_track=None, predictor=None, rng=None):
        """Waveform for a mel spectrogram.

        Uses ``f0_track`` when given; otherwise asks ``predictor`` for one. A
        generator without excitation input needs neither and skips the source.

        Args:
            mel: MelSpectrogram (L, n_mels)
            f0_track: F0Track with L frames, or None
            predictor: F0Predictor used when ``f0_track`` is None
            rng: numpy Generator for the excitation phase and noise

        Returns:
            AudioBuffer of hop * L samples
        """
        if mel.num_bands != self.cfg.generator.n_mels:
            raise ConfigMismatchError(f"Mel has {mel.num_bands} bands but the generator expects "
                                      f"{self.cfg.generator.n_mels}")
        if not self.uses_source:
            waveform = generator_forward(mel, None, self.generator)
            return AudioBuffer(waveform.numpy().reshape(-1), self.cfg.features.sample_rate)
        if f0_track is None:
            if predictor is None:
                raise MissingF0Error("Features carry no F0 track and no F0 predictor is available")
            f0_track = predictor.predict(mel)
            logger.info("Predicted F0 for %d frames (%d voiced)", len(f0_track), f0_track.num_voiced)
        if len(f0_track) != mel.num_frames:
            raise ConfigMismatchError(f"F0 track has {len(f0_track)} frames, mel has {mel.num_frames}")

        rng = rng or np.random.default_rng(self.cfg.source.seed)
        excitation = self.source(f0_track, rng=rng)
        waveform = generator_forward(mel, excitation, self.generator)
        return AudioBuffer(waveform.numpy().reshape(-1), self.cfg.features.sample_rate)
