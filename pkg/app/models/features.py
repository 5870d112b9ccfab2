# app/models/features.py
import numpy as np

from app.errors import ShapeError


class AudioBuffer:
    """Mono waveform in [-1, 1] with its sample rate"""

    def __init__(self, samples, sample_rate=22050):
        samples = np.asarray(samples, dtype=np.float32).reshape(-1)
        if samples.size == 0:
            raise ShapeError("AudioBuffer needs at least one sample")
        self.samples = samples
        self.sample_rate = int(sample_rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def clipped(self):
        return AudioBuffer(np.clip(self.samples, -1.0, 1.0), self.sample_rate)

    def to_dict(self):
        return {
            'sample_rate': self.sample_rate,
            'num_samples': len(self),
            'duration': round(self.duration, 4),
            'peak': float(np.max(np.abs(self.samples))),
        }


class MelSpectrogram:
    """Frame-major log-mel matrix, shape (L, n_mels)"""

    def __init__(self, frames, hop_length=256):
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ShapeError(f"Mel spectrogram must be (L >= 1, bands), got shape {frames.shape}")
        self.frames = frames
        self.hop_length = hop_length

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_bands(self):
        return self.frames.shape[1]

    def to_dict(self):
        return {'num_frames': self.num_frames, 'num_bands': self.num_bands, 'hop_length': self.hop_length}


class F0Track:
    """Frame-level F0 in Hz (0 where unvoiced) and the matching V/UV flags"""

    def __init__(self, f0, vuv=None):
        f0 = np.asarray(f0, dtype=np.float64).reshape(-1)
        if np.any(f0 < 0) or not np.all(np.isfinite(f0)):
            raise ValueError("F0 values must be finite and non-negative")
        derived = vuv_flags(f0)
        if vuv is not None:
            vuv = np.asarray(vuv, dtype=bool).reshape(-1)
            if vuv.shape != derived.shape or np.any(vuv != derived):
                raise ValueError("V/UV flags must equal f0 > 0 frame by frame")
        self.f0 = f0
        self.vuv = derived

    def __len__(self):
        return self.f0.size

    @property
    def num_voiced(self):
        return int(self.vuv.sum())

    def to_dict(self):
        voiced = self.f0[self.vuv]
        return {
            'num_frames': len(self),
            'num_voiced': self.num_voiced,
            'mean_f0': float(voiced.mean()) if voiced.size else None,
        }


class FeatureSet:
    """Everything the vocoder consumes for one utterance"""

    def __init__(self, name, mel, f0_track=None, num_samples=None):
        if f0_track is not None and len(f0_track) != mel.num_frames:
            raise ShapeError(f"Mel has {mel.num_frames} frames but F0 track has {len(f0_track)}")
        self.name = name
        self.mel = mel
        self.f0_track = f0_track
        self.num_samples = num_samples

    @property
    def has_f0(self):
        return self.f0_track is not None

    def to_dict(self):
        data = {
            'name': self.name,
            'mel': self.mel.to_dict(),
            'has_f0': self.has_f0,
            'num_samples': self.num_samples,
        }
        if self.has_f0:
            data['f0'] = self.f0_track.to_dict()
        return data


def vuv_flags(f0):
    """Voiced wherever F0 is positive"""
    return np.asarray(f0) > 0
