# test_cli.py
import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from app.app import cli
from app.config import apply_ablations
from app.models.f0_predictor import F0Predictor
from app.models.features import AudioBuffer
from app.utils.audio_io import read_wav, write_wav
from app.utils.features import load_features
from app.utils.trainer import Trainer, load_vocoder, store_predictor
from conftest import SAMPLE_RATE, sine

GLOBAL = ['--quiet', '--log-level', 'WARNING', '--seed', '5']


def run(*args):
    return CliRunner().invoke(cli, GLOBAL + list(args))


@pytest.fixture
def workspace(tmp_path, toy_cfg):
    """A WAV directory with one 8192-sample tone and an untrained toy checkpoint"""
    wav_dir = tmp_path / 'wavs'
    tone = AudioBuffer(sine(200.0, 8192), SAMPLE_RATE)
    write_wav(wav_dir / 'tone.wav', tone)
    ckpt = tmp_path / 'model.sfgn'
    Trainer(toy_cfg, [('tone', tone)], seed=0).save(ckpt)
    return tmp_path, wav_dir, ckpt


def test_show_config():
    result = run('show-config', '--preset', 'toy', '--no-dnn')
    assert result.exit_code == 0, result.output
    cfg = json.loads(result.output)
    assert cfg['preset'] == 'toy'
    assert cfg['generator']['h_u'] == 32
    assert cfg['source']['dnn_enabled'] is False


def test_show_config_hifigan_baseline():
    result = run('show-config', '--preset', 'toy', '--hifigan')
    assert result.exit_code == 0, result.output
    cfg = json.loads(result.output)
    assert cfg['generator']['excitation_enabled'] is False
    assert cfg['generator']['subblock_enabled'] is False
    assert cfg['source']['dnn_enabled'] is False


def test_unknown_preset_fails_cleanly():
    result = run('show-config', '--preset', 'nope')
    assert result.exit_code != 0
    assert 'Unknown preset' in result.output


def test_extract_single_file_with_text(workspace):
    tmp_path, wav_dir, _ = workspace
    out = tmp_path / 'feats' / 'tone.feat'
    result = run('extract', '--wav', str(wav_dir / 'tone.wav'), '--out', str(out), '--text')
    assert result.exit_code == 0, result.output
    assert 'Extracted features for 1 file(s)' in result.output
    features, _ = load_features(out)
    assert features.mel.num_frames == 32 and features.has_f0
    assert np.loadtxt(tmp_path / 'feats' / 'tone_mel.txt').shape == (32, 80)
    assert np.loadtxt(tmp_path / 'feats' / 'tone_f0.txt').shape == (32,)


def test_extract_directory(workspace):
    tmp_path, wav_dir, _ = workspace
    write_wav(wav_dir / 'other.wav', AudioBuffer(sine(300.0, 4000), SAMPLE_RATE))
    result = run('--jobs', '2', 'extract', '--wav', str(wav_dir), '--out', str(tmp_path / 'feats'))
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in (tmp_path / 'feats').iterdir()) == ['other.feat', 'tone.feat']


def test_extract_rejects_corrupt_wav(tmp_path):
    bad = tmp_path / 'bad.wav'
    bad.write_bytes(b'not audio at all')
    result = run('extract', '--wav', str(bad), '--out', str(tmp_path / 'bad.feat'))
    assert result.exit_code != 0
    assert 'AudioFormatError' in result.output


def extract_tone(tmp_path, wav_dir):
    feat = tmp_path / 'tone.feat'
    result = run('extract', '--wav', str(wav_dir / 'tone.wav'), '--out', str(feat))
    assert result.exit_code == 0, result.output
    return feat


def test_synthesize_is_deterministic(workspace):
    tmp_path, wav_dir, ckpt = workspace
    feat = extract_tone(tmp_path, wav_dir)
    outputs = []
    for name in ('a.wav', 'b.wav'):
        result = run('synthesize', '--features', str(feat), '--ckpt', str(ckpt), '--out', str(tmp_path / name))
        assert result.exit_code == 0, result.output
        outputs.append(read_wav(tmp_path / name))
    assert len(outputs[0]) == 8192
    np.testing.assert_array_equal(outputs[0].samples, outputs[1].samples)


def test_external_mel_needs_a_predictor(workspace, toy_cfg):
    tmp_path, wav_dir, ckpt = workspace
    feat = extract_tone(tmp_path, wav_dir)
    args = ('synthesize', '--features', str(feat), '--ckpt', str(ckpt), '--out', str(tmp_path / 'ext.wav'),
            '--external-mel')
    result = run(*args)
    assert result.exit_code != 0
    assert 'MissingF0Error' in result.output

    store_predictor(ckpt, F0Predictor(toy_cfg.f0_predictor))
    result = run(*args)
    assert result.exit_code == 0, result.output
    assert len(read_wav(tmp_path / 'ext.wav')) == 8192


def test_hifigan_checkpoint_synthesizes_without_f0(workspace, toy_cfg):
    tmp_path, wav_dir, _ = workspace
    feat = extract_tone(tmp_path, wav_dir)
    ckpt = tmp_path / 'baseline.sfgn'
    tone = read_wav(wav_dir / 'tone.wav')
    Trainer(apply_ablations(toy_cfg, hifigan=True), [('tone', tone)], seed=0).save(ckpt)
    result = run('synthesize', '--features', str(feat), '--ckpt', str(ckpt), '--out', str(tmp_path / 'b.wav'),
                 '--external-mel')
    assert result.exit_code == 0, result.output
    assert len(read_wav(tmp_path / 'b.wav')) == 8192


def test_train_f0_stores_predictor(workspace):
    tmp_path, wav_dir, ckpt = workspace
    feats = tmp_path / 'feats'
    assert run('extract', '--wav', str(wav_dir), '--out', str(feats)).exit_code == 0
    result = run('train-f0', '--features-dir', str(feats), '--ckpt', str(ckpt), '--steps', '3')
    assert result.exit_code == 0, result.output
    assert 'V/UV accuracy' in result.output
    _, predictor, _ = load_vocoder(ckpt)
    assert predictor is not None


def test_evaluate_writes_reports(workspace):
    tmp_path, wav_dir, _ = workspace
    result = run('evaluate', '--ref-dir', str(wav_dir), '--gen-dir', str(wav_dir), '--tsv', str(tmp_path / 'r.tsv'))
    assert result.exit_code == 0, result.output
    assert '[aggregate] utterances=1' in result.output
    assert 'saturated' in result.output
    rows = (tmp_path / 'r.tsv').read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith('tone\t')

    result = run('evaluate', '--ref-dir', str(wav_dir), '--gen-dir', str(wav_dir), '--out', str(tmp_path / 'r.txt'))
    assert result.exit_code == 0
    assert '[aggregate]' in (tmp_path / 'r.txt').read_text()


def test_excitation_and_mel_diff(workspace):
    tmp_path, wav_dir, ckpt = workspace
    feat = extract_tone(tmp_path, wav_dir)
    result = run('excitation', '--features', str(feat), '--out', str(tmp_path / 'e.wav'))
    assert result.exit_code == 0, result.output
    assert len(read_wav(tmp_path / 'e.wav')) == 8192
    result = run('excitation', '--features', str(feat), '--out', str(tmp_path / 'e2.wav'), '--ckpt', str(ckpt))
    assert result.exit_code == 0, result.output

    result = run('mel-diff', '--a', str(feat), '--b', str(feat), '--out', str(tmp_path / 'diff' / 'same'))
    assert result.exit_code == 0, result.output
    assert np.all(np.loadtxt(tmp_path / 'diff' / 'same.txt') == 0)
    assert (tmp_path / 'diff' / 'same.png').exists()


def test_commands_repeat_exactly_under_a_seed(workspace):
    tmp_path, wav_dir, ckpt = workspace
    write_wav(wav_dir / 'noise.wav', AudioBuffer(np.random.default_rng(9).normal(0.0, 0.1, 6000), SAMPLE_RATE))
    runs = []
    for tag in ('first', 'second'):
        out = tmp_path / tag
        model = out / 'model.sfgn'
        out.mkdir()
        shutil.copy(ckpt, model)
        steps = [
            ('extract', '--wav', str(wav_dir), '--out', str(out / 'feats'), '--text'),
            ('excitation', '--features', str(out / 'feats' / 'tone.feat'), '--out', str(out / 'e.wav'),
             '--ckpt', str(model)),
            ('mel-diff', '--a', str(out / 'feats' / 'tone.feat'), '--b', str(out / 'feats' / 'noise.feat'),
             '--out', str(out / 'diff')),
            ('evaluate', '--ref-dir', str(wav_dir), '--gen-dir', str(wav_dir), '--tsv', str(out / 'r.tsv')),
            ('train-f0', '--features-dir', str(out / 'feats'), '--ckpt', str(model), '--steps', '3'),
        ]
        outputs = []
        for args in steps:
            result = run(*args)
            assert result.exit_code == 0, result.output
            outputs.append(result.output.replace(str(out), '<out>'))
        runs.append((out, outputs))

    (first, first_out), (second, second_out) = runs
    assert first_out == second_out
    for name in ('noise.feat', 'tone.feat', 'tone_mel.txt', 'noise_f0.txt'):
        assert (first / 'feats' / name).read_bytes() == (second / 'feats' / name).read_bytes()
    for name in ('e.wav', 'diff.txt', 'r.tsv'):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    _, predictor_a, _ = load_vocoder(first / 'model.sfgn')
    _, predictor_b, _ = load_vocoder(second / 'model.sfgn')
    for name, value in predictor_a.state_dict().items():
        np.testing.assert_array_equal(predictor_b.state_dict()[name], value)


@pytest.mark.slow
def test_train_command_writes_checkpoint_and_config(workspace):
    tmp_path, wav_dir, _ = workspace
    out_dir = tmp_path / 'run'
    result = run('train', '--wav-dir', str(wav_dir), '--out-dir', str(out_dir), '--steps', '2', '--preset', 'toy',
                 '--no-subblock')
    assert result.exit_code == 0, result.output
    assert 'Trained to step 2' in result.output
    assert (out_dir / 'checkpoint.sfgn').exists()
    saved = json.loads((out_dir / 'config.json').read_text())
    assert saved['generator']['subblock_enabled'] is False

    result = run('train', '--wav-dir', str(wav_dir), '--out-dir', str(out_dir), '--steps', '1',
                 '--resume', str(out_dir / 'checkpoint.sfgn'))
    assert result.exit_code == 0, result.output
    assert 'Trained to step 3' in result.output


@pytest.mark.slow
def test_train_command_repeats_exactly_under_a_seed(workspace):
    tmp_path, wav_dir, _ = workspace
    states = []
    for tag in ('first', 'second'):
        out_dir = tmp_path / tag
        result = run('train', '--wav-dir', str(wav_dir), '--out-dir', str(out_dir), '--steps', '2', '--preset', 'toy')
        assert result.exit_code == 0, result.output
        assert (out_dir / 'train_log.jsonl').exists()
        vocoder, _, _ = load_vocoder(out_dir / 'checkpoint.sfgn')
        states.append((vocoder.generator.state_dict(), (out_dir / 'train_log.jsonl').read_text()))
    (first, first_log), (second, second_log) = states
    assert first_log == second_log
    for name, value in first.items():
        np.testing.assert_array_equal(second[name], value)


if __name__ == "__main__":
    pytest.main([__file__])
