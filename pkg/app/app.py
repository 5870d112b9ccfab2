# app/app.py
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np
from tqdm import tqdm

from app.config import Settings, check_feature_config, load_preset, resolve_config, save_config
from app.errors import MissingF0Error
from app.models.features import AudioBuffer
from app.models.source import SourceModule
from app.utils.audio_io import list_wav_files, read_wav, write_wav
from app.utils.f0_trainer import evaluate_f0_predictor, train_f0_predictor
from app.utils.features import (FEATURE_SUFFIX, FeatureExtractor, export_matrix_text, list_feature_files,
                                load_features, save_features)
from app.utils.metrics import evaluate_directories, export_mel_diff, mel_diff_map
from app.utils.trainer import CHECKPOINT_NAME, Trainer, load_vocoder, store_predictor

logger = logging.getLogger(__name__)

# Errors that end a command with a one-line diagnostic instead of a traceback
DOMAIN_ERRORS = (ValueError, RuntimeError, FloatingPointError, OSError)


def setup_logging(level):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    app_logger = logging.getLogger('app')
    app_logger.handlers = [handler]
    app_logger.setLevel(level.upper())


def run_guarded(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except DOMAIN_ERRORS as e:
        logger.debug("Command failed", exc_info=True)
        raise click.ClickException(f"{type(e).__name__}: {e}") from e


def load_wav_dataset(wav_dir):
    paths = list_wav_files(wav_dir)
    if not paths:
        raise ValueError(f"No WAV files in {wav_dir}")
    return [(p.stem, read_wav(p)) for p in paths]


def load_feature_dir(features_dir):
    paths = list_feature_files(features_dir)
    if not paths:
        raise ValueError(f"No {FEATURE_SUFFIX} files in {features_dir}")
    loaded = [load_features(p) for p in paths]
    return [fs for fs, _ in loaded], loaded[0][1]


@click.group()
@click.option('--seed', type=int, default=None, help='Random seed (default SFGAN_SEED or 1234)')
@click.option('--log-level', default=None, help='Logging level (default SFGAN_LOG_LEVEL or INFO)')
@click.option('--quiet', is_flag=True, help='Hide progress bars')
@click.option('--jobs', type=click.IntRange(min=1), default=None, help='Files processed in parallel')
@click.pass_context
def cli(ctx, seed, log_level, quiet, jobs):
    """Source-filter neural vocoder: feature extraction, synthesis, training and evaluation"""
    settings = Settings.from_env()
    setup_logging(log_level or settings.log_level)
    ctx.obj = {
        'seed': settings.seed if seed is None else seed,
        'jobs': jobs or settings.jobs,
        'progress': not quiet,
        'preset': settings.preset,
    }


@cli.command()
@click.option('--wav', 'wav_path', required=True, type=click.Path(exists=True), help='WAV file or directory')
@click.option('--out', 'out_path', required=True, type=click.Path(), help='Feature file, or directory for a directory input')
@click.option('--preset', default=None, help='Preset whose feature settings are used')
@click.option('--text', is_flag=True, help='Also export mel and F0 as text matrices')
@click.pass_obj
def extract(obj, wav_path, out_path, preset, text):
    """Extract the log-mel spectrogram and F0 track of WAV audio"""
    cfg = run_guarded(load_preset, preset or obj['preset']).features
    extractor = FeatureExtractor(cfg)
    wav_path, out_path = Path(wav_path), Path(out_path)

    def extract_one(item):
        source, target = item
        features = extractor.extract(read_wav(source), name=source.stem)
        save_features(target, features, cfg)
        if text:
            stem = target.with_suffix('')
            export_matrix_text(stem.with_name(stem.name + '_mel.txt'), features.mel.frames)
            export_matrix_text(stem.with_name(stem.name + '_f0.txt'), features.f0_track.f0, fmt='%.4f')
        return features

    def extract_all():
        if wav_path.is_dir():
            jobs = [(p, out_path / (p.stem + FEATURE_SUFFIX)) for p in list_wav_files(wav_path)]
        else:
            jobs = [(wav_path, out_path)]
        with ThreadPoolExecutor(max_workers=obj['jobs']) as pool:
            return list(tqdm(pool.map(extract_one, jobs), total=len(jobs), desc='extract', disable=not obj['progress']))

    results = run_guarded(extract_all)
    for features in results:
        logger.info("%s: %d frames, %d voiced", features.name, features.mel.num_frames, features.f0_track.num_voiced)
    click.echo(f"Extracted features for {len(results)} file(s)")


@cli.command()
@click.option('--features', 'features_path', required=True, type=click.Path(exists=True))
@click.option('--ckpt', required=True, type=click.Path(exists=True))
@click.option('--out', 'out_path', required=True, type=click.Path())
@click.option('--external-mel', is_flag=True, help='Ignore any stored F0 and predict it from the mel')
@click.pass_obj
def synthesize(obj, features_path, ckpt, out_path, external_mel):
    """Generate a waveform from stored features and a checkpoint"""

    def run():
        features, feature_cfg = load_features(features_path)
        vocoder, predictor, cfg = load_vocoder(ckpt)
        check_feature_config(cfg.features, feature_cfg)
        f0_track = None if external_mel else features.f0_track
        if f0_track is None and predictor is None and vocoder.uses_source:
            raise MissingF0Error(f"{features_path} has no usable F0 track and {ckpt} holds no F0 predictor")
        audio = vocoder.synthesize(features.mel, f0_track=f0_track, predictor=predictor,
                                   rng=np.random.default_rng(obj['seed']))
        write_wav(out_path, audio)
        return audio

    audio = run_guarded(run)
    click.echo(f"Wrote {len(audio)} samples to {out_path}")


@cli.command()
@click.option('--wav-dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out-dir', required=True, type=click.Path(file_okay=False))
@click.option('--steps', required=True, type=click.IntRange(min=0))
@click.option('--config', 'config_path', type=click.Path(exists=True), default=None, help='JSON run config')
@click.option('--preset', default=None, help='Named preset (v1, v2, hifigan_v1, hifigan_v2, toy)')
@click.option('--no-dnn', is_flag=True, help='Replace the noise DNN with the identity')
@click.option('--no-subblock', is_flag=True, help='Feed directly subsampled excitation to the UpBlocks')
@click.option('--no-pc-resblock', is_flag=True, help='Use plain residual blocks after adding the excitation')
@click.option('--hifigan', is_flag=True, help='Train the HiFi-GAN baseline without the source path')
@click.option('--resume', type=click.Path(exists=True), default=None, help='Checkpoint to continue from')
@click.pass_obj
def train(obj, wav_dir, out_dir, steps, config_path, preset, no_dnn, no_subblock, no_pc_resblock, hifigan, resume):
    """Adversarial training of the vocoder on a directory of WAV files"""

    def run():
        dataset = load_wav_dataset(wav_dir)
        if resume:
            trainer = Trainer.resume(resume, dataset, out_dir=out_dir, progress=obj['progress'])
        else:
            cfg = resolve_config(preset or (None if config_path else obj['preset']), config_path,
                                 no_dnn=no_dnn, no_subblock=no_subblock, no_pc_resblock=no_pc_resblock,
                                 hifigan=hifigan)
            trainer = Trainer(cfg, dataset, seed=obj['seed'], out_dir=out_dir, progress=obj['progress'])
        save_config(trainer.cfg, Path(out_dir) / 'config.json')
        return trainer.train(steps)

    trainer = run_guarded(run)
    last = trainer.history[-1] if trainer.history else {}
    click.echo(f"Trained to step {trainer.step}; checkpoint {Path(out_dir) / CHECKPOINT_NAME}"
               + (f"; mel loss {last['loss_mel']:.4f}" if last else ''))


@cli.command('train-f0')
@click.option('--features-dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--ckpt', required=True, type=click.Path(exists=True))
@click.option('--steps', type=click.IntRange(min=0), default=None)
@click.pass_obj
def train_f0(obj, features_dir, ckpt, steps):
    """Train the mel-to-F0 predictor and store it in a checkpoint"""

    def run():
        dataset, feature_cfg = load_feature_dir(features_dir)
        _, _, cfg = load_vocoder(ckpt)
        check_feature_config(cfg.features, feature_cfg)
        predictor, _ = train_f0_predictor(dataset, cfg.f0_predictor, steps=steps, seed=obj['seed'],
                                          progress=obj['progress'])
        store_predictor(ckpt, predictor)
        return evaluate_f0_predictor(dataset, predictor)

    scores = run_guarded(run)
    rmse = scores['f0_rmse_cent']
    click.echo(f"F0 predictor stored in {ckpt}: V/UV accuracy {scores['vuv_accuracy_pct']:.2f}%, "
               f"F0 RMSE {'NA' if rmse is None else f'{rmse:.2f}'} cents")


@cli.command()
@click.option('--ref-dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--gen-dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_path', type=click.Path(), default=None, help='Write the text report here')
@click.option('--tsv', 'tsv_path', type=click.Path(), default=None, help='Write a TSV table here')
@click.option('--preset', default=None, help='Preset whose feature settings are used')
@click.pass_obj
def evaluate(obj, ref_dir, gen_dir, out_path, tsv_path, preset):
    """SNR, LAS-RMSE, MCD, F0-RMSE and V/UV error over files paired by name"""
    cfg = run_guarded(load_preset, preset or obj['preset']).features
    report = run_guarded(evaluate_directories, ref_dir, gen_dir, jobs=obj['jobs'],
                         extractor=FeatureExtractor(cfg), progress=obj['progress'])
    text = report.to_text()
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text)
        logger.info("Report written to %s", out_path)
    else:
        click.echo(text, nl=False)
    if tsv_path:
        Path(tsv_path).parent.mkdir(parents=True, exist_ok=True)
        Path(tsv_path).write_text(report.to_tsv())


@cli.command()
@click.option('--features', 'features_path', required=True, type=click.Path(exists=True))
@click.option('--out', 'out_path', required=True, type=click.Path())
@click.option('--ckpt', type=click.Path(exists=True), default=None, help='Use the noise DNN from this checkpoint')
@click.option('--preset', default=None)
@click.pass_obj
def excitation(obj, features_path, out_path, ckpt, preset):
    """Write the source-module excitation for stored F0 as a WAV file"""

    def run():
        features, feature_cfg = load_features(features_path)
        if not features.has_f0:
            raise MissingF0Error(f"{features_path} has no F0 track")
        if ckpt:
            vocoder, _, cfg = load_vocoder(ckpt)
            source = vocoder.source
        else:
            cfg = load_preset(preset or obj['preset'])
            source = SourceModule(cfg.source)
        check_feature_config(cfg.features, feature_cfg)
        signal = source(features.f0_track, rng=np.random.default_rng(obj['seed']))
        # excitation peaks can exceed 1 in unvoiced stretches; write_wav clamps
        write_wav(out_path, AudioBuffer(signal.samples, cfg.features.sample_rate))
        return signal

    signal = run_guarded(run)
    click.echo(f"Wrote {len(signal)} excitation samples to {out_path}")


@cli.command('mel-diff')
@click.option('--a', 'path_a', required=True, type=click.Path(exists=True), help='Feature file A')
@click.option('--b', 'path_b', required=True, type=click.Path(exists=True), help='Feature file B')
@click.option('--out', 'prefix', required=True, type=click.Path(), help='Output prefix for .txt and .png')
def mel_diff(path_a, path_b, prefix):
    """|A - B| mel difference map as text and a grayscale image"""

    def run():
        a, _ = load_features(path_a)
        b, _ = load_features(path_b)
        return export_mel_diff(mel_diff_map(a.mel, b.mel), prefix)

    text_path, image_path = run_guarded(run)
    click.echo(f"Wrote {text_path} and {image_path}")


@cli.command('show-config')
@click.option('--preset', default=None)
@click.option('--config', 'config_path', type=click.Path(exists=True), default=None)
@click.option('--no-dnn', is_flag=True)
@click.option('--no-subblock', is_flag=True)
@click.option('--no-pc-resblock', is_flag=True)
@click.option('--hifigan', is_flag=True)
@click.option('--out', 'out_path', type=click.Path(), default=None, help='Save the config as JSON')
@click.pass_obj
def show_config(obj, preset, config_path, no_dnn, no_subblock, no_pc_resblock, hifigan, out_path):
    """Print the resolved run configuration"""
    cfg = run_guarded(resolve_config, preset or (None if config_path else obj['preset']), config_path,
                      no_dnn=no_dnn, no_subblock=no_subblock, no_pc_resblock=no_pc_resblock, hifigan=hifigan)
    if out_path:
        save_config(cfg, out_path)
    click.echo(cfg.model_dump_json(indent=2))


if __name__ == '__main__':
    cli()
