# app/utils/audio_io.py
import logging
import os
import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from app.errors import AudioFormatError
from app.models.features import AudioBuffer

logger = logging.getLogger(__name__)

PCM16_SCALE = 32767.0


def read_wav(path):
    """Read a 16-bit PCM mono WAV file into an AudioBuffer.

    Args:
        path: WAV file path

    Returns:
        AudioBuffer with samples scaled to [-1, 1]
    """
    try:
        with warnings.catch_warnings():
            # scipy warns about unknown chunks; those files are still fine
            warnings.simplefilter('ignore', wavfile.WavFileWarning)
            sample_rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as e:
        raise AudioFormatError(f"Malformed WAV file {path}: {e}") from e

    if data.dtype != np.int16:
        width = data.dtype.itemsize
        kind = 'float' if data.dtype.kind == 'f' else 'PCM'
        raise AudioFormatError(f"Unsupported sample format in {path}: {width * 8}-bit {kind} (expected 16-bit PCM)")
    if data.ndim != 1:
        raise AudioFormatError(f"Unsupported channel count in {path}: {data.shape[1]} (expected mono)")
    if data.size == 0:
        raise AudioFormatError(f"WAV file {path} contains no samples")

    samples = np.clip(data.astype(np.float32) / PCM16_SCALE, -1.0, 1.0)
    return AudioBuffer(samples, sample_rate)


def write_wav(path, audio):
    """Write an AudioBuffer as 16-bit PCM mono, clamping to [-1, 1]"""
    os.makedirs(Path(path).parent, exist_ok=True)
    clipped = np.clip(np.asarray(audio.samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * PCM16_SCALE).astype(np.int16)
    wavfile.write(path, audio.sample_rate, pcm)
    logger.debug("Wrote %d samples to %s", pcm.size, path)


def list_wav_files(directory):
    """WAV files directly inside ``directory``, sorted by name"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == '.wav')
