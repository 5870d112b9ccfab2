# conftest.py
import logging

import numpy as np
import pytest

from app.config import load_preset
from app.models.features import AudioBuffer

SAMPLE_RATE = 22050


def sine(freq, num_samples, amplitude=0.5, sample_rate=SAMPLE_RATE):
    t = np.arange(num_samples) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture
def toy_cfg():
    return load_preset('toy')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_audio():
    """One second of a 220.5 Hz tone"""
    return AudioBuffer(sine(220.5, SAMPLE_RATE), SAMPLE_RATE)


@pytest.fixture
def speechlike_audio():
    """0.6 s of a 220 Hz tone followed by quiet noise"""
    voiced = sine(220.0, int(0.6 * SAMPLE_RATE))
    noise = np.random.default_rng(7).normal(0.0, 0.01, SAMPLE_RATE - voiced.size)
    return AudioBuffer(np.concatenate([voiced, noise]), SAMPLE_RATE)


@pytest.fixture(autouse=True)
def reset_app_logger():
    yield
    # the CLI attaches a stderr handler that outlives CliRunner's captured stream
    app_logger = logging.getLogger('app')
    app_logger.handlers.clear()
    app_logger.setLevel(logging.NOTSET)
