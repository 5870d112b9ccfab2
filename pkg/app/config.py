# app/config.py
import json
import logging
import os
from math import prod
from pathlib import Path
from typing import List, Literal, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.errors import ConfigMismatchError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

PRESETS_FILE = Path(__file__).parent / 'data' / 'presets.json'


class Settings(BaseModel):
    """Process-level defaults read from the environment (or a .env file)"""

    model_config = ConfigDict(extra='forbid')

    log_level: str = 'INFO'
    jobs: int = Field(1, ge=1)
    seed: int = 1234
    preset: str = 'toy'

    @classmethod
    def from_env(cls):
        return cls(
            log_level=os.getenv('SFGAN_LOG_LEVEL', 'INFO').upper(),
            jobs=int(os.getenv('SFGAN_JOBS', '1')),
            seed=int(os.getenv('SFGAN_SEED', '1234')),
            preset=os.getenv('SFGAN_PRESET', 'toy'),
        )


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class FeatureConfig(_Strict):
    sample_rate: int = Field(22050, gt=0)
    n_fft: int = Field(1024, gt=0)
    win_length: int = Field(1024, gt=0)
    hop_length: int = Field(256, gt=0)
    n_mels: int = Field(80, gt=0)
    fmin: float = Field(0.0, ge=0)
    fmax: float = Field(8000.0, gt=0)
    log_floor: float = Field(1e-5, gt=0)
    f0_min: float = Field(50.0, gt=0)
    f0_max: float = Field(800.0, gt=0)
    voicing_threshold: float = Field(0.3, gt=0, lt=1)
    peak_ratio: float = Field(0.9, gt=0, le=1)

    @model_validator(mode='after')
    def _check_ranges(self):
        if self.win_length > self.n_fft:
            raise ValueError(f"win_length {self.win_length} exceeds n_fft {self.n_fft}")
        if self.fmax > self.sample_rate / 2:
            raise ValueError(f"fmax {self.fmax} is above Nyquist for {self.sample_rate} Hz")
        if self.f0_min >= self.f0_max:
            raise ValueError(f"f0_min {self.f0_min} must be below f0_max {self.f0_max}")
        return self


class SourceConfig(_Strict):
    alpha: float = Field(0.1, gt=0)
    sigma: float = Field(0.003, gt=0)
    sample_rate: int = Field(22050, gt=0)
    hop_length: int = Field(256, gt=0)
    dnn_enabled: bool = True
    dnn_channels: int = Field(16, gt=0)
    dnn_kernel: int = Field(9, gt=0)
    f0_interpolation: Literal['linear', 'step'] = 'linear'
    shared_noise: bool = True
    seed: int = 1234


class GeneratorConfig(_Strict):
    h_u: int = Field(512, gt=0)
    k_u: List[int] = [16, 16, 4, 4]
    u_r: List[int] = [8, 8, 2, 2]
    k_r: List[int] = [3, 7, 11]
    D_r: List[List[int]] = [[1, 3, 5], [1, 3, 5], [1, 3, 5]]
    k_m: List[int] = [1, 2, 2, 8]
    k_s: List[int] = [15, 11, 7, 3]
    d_s: List[int] = [7, 5, 3, 1]
    lrelu_slope: float = Field(0.1, gt=0, lt=1)
    post_lrelu_slope: float = Field(0.01, gt=0, lt=1)
    n_mels: int = Field(80, gt=0)
    pre_kernel: int = Field(7, gt=0)
    post_kernel: int = Field(7, gt=0)
    subblock_enabled: bool = True
    pc_resblock_enabled: bool = True
    excitation_enabled: bool = True

    @field_validator('k_u', 'u_r', 'k_m', 'k_s', 'd_s')
    @classmethod
    def _four_stages(cls, value):
        if len(value) != 4:
            raise ValueError(f"Expected 4 stages, got {len(value)}")
        if any(v < 1 for v in value):
            raise ValueError(f"Stage values must be >= 1, got {value}")
        return value

    @model_validator(mode='after')
    def _check_topology(self):
        if len(self.k_r) != len(self.D_r) or not self.k_r:
            raise ValueError(f"k_r and D_r must have the same non-zero length, got {len(self.k_r)} and {len(self.D_r)}")
        if self.h_u % 16:
            raise ValueError(f"h_u must be divisible by 16, got {self.h_u}")
        for k, s in zip(self.k_u, self.u_r):
            if k < s or (k - s) % 2:
                raise ValueError(f"Transposed conv kernel {k} and stride {s} need k >= s and even k - s")
        if any(k % 2 == 0 for k in self.k_r + self.k_s + [self.pre_kernel, self.post_kernel]):
            raise ValueError("Same-padding convolutions need odd kernels")
        return self

    @property
    def hop_length(self):
        return prod(self.u_r)

    @property
    def pool_factors(self):
        """Cumulative SubBlock pooling factor per stage"""
        factors, total = [], 1
        for k in self.k_m:
            total *= k
            factors.append(total)
        return factors

    def channel_widths(self):
        """Output channels of UpBlock 1..4"""
        return [self.h_u // 2 ** (i + 1) for i in range(len(self.u_r))]


class DiscriminatorConfig(_Strict):
    periods: List[int] = [2, 3, 5, 7, 11]
    mpd_channels: List[int] = [32, 128, 512, 1024, 1024]
    mpd_kernel: int = Field(5, gt=0)
    mpd_stride: int = Field(3, gt=0)
    min_frames: int = Field(4, gt=0)
    msd_scales: int = Field(3, ge=1)
    msd_channels: List[int] = [128, 128, 256, 512, 1024, 1024, 1024]
    msd_kernels: List[int] = [15, 41, 41, 41, 41, 41, 5]
    msd_strides: List[int] = [1, 2, 2, 4, 4, 1, 1]
    lrelu_slope: float = Field(0.1, gt=0, lt=1)

    @model_validator(mode='after')
    def _check_msd(self):
        if not (len(self.msd_channels) == len(self.msd_kernels) == len(self.msd_strides)):
            raise ValueError("msd_channels, msd_kernels and msd_strides must have equal lengths")
        if not self.mpd_channels or not self.msd_channels:
            raise ValueError("Discriminators need at least one layer")
        return self


class TrainConfig(_Strict):
    segment_size: int = Field(8192, gt=0)
    batch_size: int = Field(16, gt=0)
    learning_rate: float = Field(2e-4, gt=0)
    betas: Tuple[float, float] = (0.8, 0.99)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    lr_decay: float = Field(0.999, gt=0, le=1)
    lambda_fm: float = Field(2.0, ge=0)
    lambda_mel: float = Field(45.0, ge=0)
    checkpoint_interval: int = Field(1000, gt=0)
    log_interval: int = Field(10, gt=0)


class F0PredictorConfig(_Strict):
    n_bands: int = Field(10, gt=0)
    channels: int = Field(10, gt=0)
    kernels: List[int] = [3, 5, 7]
    layers: int = Field(2, ge=1)
    lrelu_slope: float = Field(0.1, gt=0, lt=1)
    f0_scale: float = Field(100.0, gt=0)
    vuv_threshold: float = Field(0.5, gt=0, lt=1)
    f0_min: float = Field(50.0, gt=0)
    f0_max: float = Field(800.0, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    steps: int = Field(2000, ge=0)
    val_fraction: float = Field(0.0, ge=0, lt=1)
    eval_interval: int = Field(50, gt=0)

    @field_validator('kernels')
    @classmethod
    def _odd_kernels(cls, value):
        if not value or any(k % 2 == 0 for k in value):
            raise ValueError(f"Predictor kernels must be odd and non-empty, got {value}")
        return value

    @model_validator(mode='after')
    def _check_f0_range(self):
        if self.f0_min >= self.f0_max:
            raise ValueError(f"f0_min {self.f0_min} must be below f0_max {self.f0_max}")
        return self


class RunConfig(_Strict):
    preset: str = 'v1'
    features: FeatureConfig = FeatureConfig()
    source: SourceConfig = SourceConfig()
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    train: TrainConfig = TrainConfig()
    f0_predictor: F0PredictorConfig = F0PredictorConfig()

    @model_validator(mode='after')
    def _check_alignment(self):
        hop = self.features.hop_length
        if self.generator.hop_length != hop:
            raise ValueError(f"product(u_r) = {self.generator.hop_length} must equal the hop length {hop}")
        if self.source.hop_length != hop or self.source.sample_rate != self.features.sample_rate:
            raise ValueError("Source hop/sample rate must match the feature settings")
        if self.generator.n_mels != self.features.n_mels:
            raise ValueError(f"Generator expects {self.generator.n_mels} mel bands, features give {self.features.n_mels}")
        if self.f0_predictor.n_bands > self.features.n_mels:
            raise ValueError("F0 predictor uses more bands than the mel has")
        if self.train.segment_size % hop:
            raise ValueError(f"segment_size {self.train.segment_size} must be a multiple of the hop {hop}")
        return self

    def to_dict(self):
        return self.model_dump(mode='json')

    @classmethod
    def from_dict(cls, data):
        return cls.model_validate(data)


def available_presets():
    with open(PRESETS_FILE, 'r') as f:
        return sorted(json.load(f))


def load_preset(name):
    """Build a RunConfig from a named preset in app/data/presets.json"""
    with open(PRESETS_FILE, 'r') as f:
        presets = json.load(f)
    if name not in presets:
        raise ValueError(f"Unknown preset: {name} (available: {', '.join(sorted(presets))})")
    return RunConfig.model_validate({'preset': name, **presets[name]})


def apply_ablations(cfg, no_dnn=False, no_subblock=False, no_pc_resblock=False, hifigan=False):
    """Return a copy of ``cfg`` with the requested components switched off.

    ``hifigan`` drops the whole source path, leaving the HiFi-GAN baseline of
    the same size.
    """
    data = cfg.to_dict()
    if hifigan:
        data['generator'].update(excitation_enabled=False, subblock_enabled=False, pc_resblock_enabled=False)
        data['source']['dnn_enabled'] = False
    if no_dnn:
        data['source']['dnn_enabled'] = False
    if no_subblock:
        data['generator']['subblock_enabled'] = False
    if no_pc_resblock:
        data['generator']['pc_resblock_enabled'] = False
    return RunConfig.from_dict(data)


def load_config(path):
    """Read a JSON run config; unknown keys are rejected"""
    with open(path, 'r') as f:
        data = json.load(f)
    return RunConfig.from_dict(data)


def save_config(cfg, path):
    os.makedirs(Path(path).parent, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(cfg.to_dict(), f, indent=2)


def resolve_config(preset=None, config_path=None, no_dnn=False, no_subblock=False, no_pc_resblock=False,
                   hifigan=False):
    """Config file wins over preset; ablation switches apply on top of either"""
    if config_path:
        cfg = load_config(config_path)
    else:
        cfg = load_preset(preset or Settings.from_env().preset)
    return apply_ablations(cfg, no_dnn=no_dnn, no_subblock=no_subblock, no_pc_resblock=no_pc_resblock,
                           hifigan=hifigan)


def check_feature_config(expected, actual):
    """Raise ConfigMismatchError when two FeatureConfigs disagree on any field"""
    expected = expected.model_dump()
    actual = actual.model_dump()
    diffs = [k for k in expected if expected[k] != actual.get(k)]
    if diffs:
        details = ', '.join(f"{k}: {actual.get(k)} != {expected[k]}" for k in diffs)
        raise ConfigMismatchError(f"Feature configuration does not match the checkpoint ({details})")
