# app/utils/trainer.py
import json
import logging
import os
from pathlib import Path

import numpy as np
from tqdm import tqdm

from app.config import RunConfig
from app.errors import ConfigMismatchError, ContainerError, NonFiniteError
from app.models import container
from app.models.discriminator import DiscriminatorSet
from app.models.f0_predictor import F0Predictor
from app.models.features import F0Track
from app.models.mel import MelTransform
from app.models.optim import AdamW
from app.models.source import batch_excitations
from app.models.tensor import Tensor, backward
from app.models.vocoder import Vocoder
from app.utils.features import FeatureExtractor
from app.utils.losses import discriminator_loss, gan_losses

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.sfgn'
LOG_NAME = 'train_log.jsonl'


class TrainingClip:
    """One utterance prepared for cropping: padded samples, mel frames and F0"""

    def __init__(self, name, samples, mel, f0):
        self.name = name
        self.samples = samples
        self.mel = mel
        self.f0 = f0

    @property
    def num_frames(self):
        return self.mel.shape[0]


def prepare_dataset(dataset, cfg):
    """(name, AudioBuffer) pairs -> TrainingClips padded to at least one segment"""
    if not dataset:
        raise ValueError("Training needs at least one utterance")
    extractor = FeatureExtractor(cfg.features)
    clips = []
    for name, audio in dataset:
        samples = extractor.pad_to_hop(audio)
        if samples.size < cfg.train.segment_size:
            logger.info("Padding %s from %d to %d samples", name, samples.size, cfg.train.segment_size)
            samples = np.pad(samples, (0, cfg.train.segment_size - samples.size))
        mel = extractor.log_mel(samples).astype(np.float32)
        f0 = extractor.extract_f0(samples).f0
        clips.append(TrainingClip(name, samples.astype(np.float32), mel, f0))
    return clips


class Trainer:
    """Alternating discriminator / generator updates on random hop-aligned crops.

    Every bit of randomness after construction (crop choice, excitation phase
    and noise) comes from ``self.rng``, whose state is saved with the weights,
    so a resumed run continues exactly like an uninterrupted one.
    """

    def __init__(self, cfg, dataset, seed=1234, out_dir=None, progress=False):
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir else None
        self.progress = progress
        self.clips = prepare_dataset(dataset, cfg)

        init_rng = np.random.default_rng(seed)
        self.vocoder = Vocoder(cfg, seed=seed)
        self.discriminators = DiscriminatorSet(cfg.discriminator, init_rng)
        tc = cfg.train
        self.opt_g = AdamW(self.vocoder.trainable_parameters(), lr=tc.learning_rate, betas=tc.betas,
                           eps=tc.eps, weight_decay=tc.weight_decay)
        self.opt_d = AdamW(self.discriminators.trainable_parameters(), lr=tc.learning_rate, betas=tc.betas,
                           eps=tc.eps, weight_decay=tc.weight_decay)
        self.mel_transform = MelTransform(cfg.features)
        self.rng = np.random.default_rng([seed, 1])
        self.step = 0
        self.history = []
        self.predictor = None

        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)

    @property
    def steps_per_epoch(self):
        return max(1, -(-len(self.clips) // self.cfg.train.batch_size))

    def learning_rate(self, step=None):
        step = self.step if step is None else step
        epoch = step // self.steps_per_epoch
        return self.cfg.train.learning_rate * self.cfg.train.lr_decay ** epoch

    def sample_batch(self):
        """Random crops: (mel (B, n_mels, F), audio (B, 1, T), excitation (B, 1, T) or None)"""
        hop = self.cfg.features.hop_length
        seg_frames = self.cfg.train.segment_size // hop
        mels, audios, excitations = [], [], []
        for _ in range(self.cfg.train.batch_size):
            clip = self.clips[int(self.rng.integers(len(self.clips)))]
            start = int(self.rng.integers(clip.num_frames - seg_frames + 1))
            mels.append(clip.mel[start:start + seg_frames].T)
            audios.append(clip.samples[start * hop:(start + seg_frames) * hop])
            if self.vocoder.uses_source:
                f0_track = F0Track(clip.f0[start:start + seg_frames])
                excitations.append(self.vocoder.source(f0_track, rng=self.rng))
        mel = Tensor(np.stack(mels))
        audio = Tensor(np.stack(audios)[:, None, :])
        return mel, audio, batch_excitations(excitations) if excitations else None

    def discriminator_step(self, audio, fake, lr):
        """LSGAN update of the discriminators on detached fakes; generator weights are untouched"""
        self.opt_d.zero_grad()
        real_outputs = self.discriminators(audio)
        fake_outputs = self.discriminators(fake.detach())
        loss_disc = discriminator_loss(real_outputs, fake_outputs)
        backward(loss_disc)
        self.opt_d.lr = lr
        self.opt_d.step()
        return loss_disc

    def generator_step(self, audio, fake, lr):
        """Generator update against the current discriminators, which are not stepped"""
        self.opt_g.zero_grad()
        real_outputs = self.discriminators(audio)
        fake_outputs = self.discriminators(fake)
        losses = gan_losses(real_outputs, fake_outputs, self.mel_transform(audio), self.mel_transform(fake),
                            lambda_fm=self.cfg.train.lambda_fm, lambda_mel=self.cfg.train.lambda_mel)
        backward(losses['total'])
        self.opt_g.lr = lr
        self.opt_g.step()
        return losses

    def train_step(self):
        """One D update then one G update; returns the float losses"""
        lr = self.learning_rate()
        mel, audio, excitation = self.sample_batch()
        fake = self.vocoder.generator(mel, excitation)
        loss_disc = self.discriminator_step(audio, fake, lr)
        losses = self.generator_step(audio, fake, lr)

        self.step += 1
        record = {
            'step': self.step,
            'loss_disc': loss_disc.item(),
            'loss_adv': losses['adv'].item(),
            'loss_fm': losses['fm'].item(),
            'loss_mel': losses['mel'].item(),
            'loss_gen': losses['total'].item(),
            'lr': lr,
        }
        if not all(np.isfinite(v) for v in record.values()):
            raise NonFiniteError(f"Non-finite loss at step {self.step}: {record}")
        self.history.append(record)
        return record

    def train(self, steps):
        """Run ``steps`` more updates with periodic logs and checkpoints"""
        tc = self.cfg.train
        for _ in tqdm(range(steps), desc='train', disable=not self.progress):
            record = self.train_step()
            if self.step % tc.log_interval == 0 or self.step == 1:
                self._log(record)
            if self.out_dir and self.step % tc.checkpoint_interval == 0:
                self.save(self.out_dir / f'checkpoint_{self.step:08d}.sfgn')
        if self.out_dir:
            self.save(self.out_dir / CHECKPOINT_NAME)
        return self

    def _log(self, record):
        logger.info("step %d: disc %.4f adv %.4f fm %.4f mel %.4f gen %.4f lr %.3g", record['step'],
                    record['loss_disc'], record['loss_adv'], record['loss_fm'], record['loss_mel'],
                    record['loss_gen'], record['lr'])
        if self.out_dir:
            with open(self.out_dir / LOG_NAME, 'a') as f:
                f.write(json.dumps(record) + '\n')

    def save(self, path):
        save_checkpoint(path, self)

    @classmethod
    def resume(cls, path, dataset, out_dir=None, progress=False):
        """Rebuild a Trainer from a checkpoint so training continues bit-identically"""
        meta, blobs = load_checkpoint(path)
        cfg = RunConfig.from_dict(meta['config'])
        trainer = cls(cfg, dataset, seed=meta['seed'], out_dir=out_dir, progress=progress)
        trainer.vocoder.generator.load_state_dict(container.section(blobs, 'generator'))
        trainer.vocoder.source.load_state_dict(container.section(blobs, 'source'))
        trainer.discriminators.load_state_dict(container.section(blobs, 'discriminator'))
        for name, opt in (('opt_g', trainer.opt_g), ('opt_d', trainer.opt_d)):
            state = dict(container.section(blobs, name))
            state.update(meta['optimizers'][name])
            opt.load_state_dict(state)
        trainer.rng.bit_generator.state = meta['rng_state']
        trainer.step = meta['step']
        trainer.history = list(meta.get('history', []))
        if 'predictor' in meta.get('sections', []):
            trainer.predictor = F0Predictor(cfg.f0_predictor)
            trainer.predictor.load_state_dict(container.section(blobs, 'predictor'))
        logger.info("Resumed from %s at step %d", path, trainer.step)
        return trainer


def _optimizer_blobs(opt):
    state = opt.state_dict()
    scalars = {k: state.pop(k) for k in ('step_count', 'lr')}
    return state, scalars


def save_checkpoint(path, trainer):
    """Write generator, noise DNN, discriminators, optimizer moments, RNG state and any F0 predictor"""
    predictor = trainer.predictor
    blobs = {}
    blobs.update(container.with_prefix('generator', trainer.vocoder.generator.state_dict()))
    blobs.update(container.with_prefix('source', trainer.vocoder.source.state_dict()))
    blobs.update(container.with_prefix('discriminator', trainer.discriminators.state_dict()))
    optimizers = {}
    for name, opt in (('opt_g', trainer.opt_g), ('opt_d', trainer.opt_d)):
        arrays, scalars = _optimizer_blobs(opt)
        blobs.update(container.with_prefix(name, arrays))
        optimizers[name] = scalars
    sections = ['generator', 'source', 'discriminator', 'opt_g', 'opt_d']
    if predictor is not None:
        blobs.update(container.with_prefix('predictor', predictor.state_dict()))
        sections.append('predictor')
    meta = {
        'config': trainer.cfg.to_dict(),
        'seed': trainer.seed,
        'step': trainer.step,
        'rng_state': trainer.rng.bit_generator.state,
        'optimizers': optimizers,
        'history': trainer.history,
        'sections': sections,
    }
    container.write_container(path, container.KIND_CHECKPOINT, meta, blobs)
    logger.info("Saved checkpoint at step %d to %s", trainer.step, path)


def load_checkpoint(path):
    meta, blobs = container.read_container(path, expected_kind=container.KIND_CHECKPOINT)
    for key in ('config', 'seed', 'step'):
        if key not in meta:
            raise ContainerError(f"Checkpoint {path} header lacks '{key}'")
    return meta, blobs


def load_vocoder(path):
    """Inference view of a checkpoint: (Vocoder, F0Predictor or None, RunConfig)"""
    meta, blobs = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta['config'])
    vocoder = Vocoder(cfg, seed=meta['seed'])
    vocoder.generator.load_state_dict(container.section(blobs, 'generator'))
    vocoder.source.load_state_dict(container.section(blobs, 'source'))
    predictor = None
    if 'predictor' in meta.get('sections', []):
        predictor = F0Predictor(cfg.f0_predictor)
        predictor.load_state_dict(container.section(blobs, 'predictor'))
    return vocoder, predictor, cfg


def store_predictor(path, predictor):
    """Add or replace the predictor section of an existing checkpoint"""
    meta, blobs = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta['config'])
    if predictor.cfg != cfg.f0_predictor:
        raise ConfigMismatchError("Predictor configuration differs from the checkpoint's f0_predictor section")
    blobs = {k: v for k, v in blobs.items() if not k.startswith('predictor/')}
    blobs.update(container.with_prefix('predictor', predictor.state_dict()))
    sections = [s for s in meta.get('sections', []) if s != 'predictor'] + ['predictor']
    meta['sections'] = sections
    container.write_container(path, container.KIND_CHECKPOINT, meta, blobs)
    logger.info("Stored F0 predictor in %s", path)


def train(dataset, cfg, steps, seed=1234, out_dir=None, progress=False):
    """Build a Trainer and run ``steps`` updates"""
    trainer = Trainer(cfg, dataset, seed=seed, out_dir=out_dir, progress=progress)
    return trainer.train(steps)
