# app/utils/metrics.py
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from matplotlib import image as mpimg
from scipy.fft import dct
from tqdm import tqdm

from app.errors import ShapeError
from app.models.features import AudioBuffer, F0Track, MelSpectrogram
from app.models.report import EvalReport, UtteranceResult
from app.utils.audio_io import list_wav_files, read_wav
from app.utils.features import FeatureExtractor

logger = logging.getLogger(__name__)

SNR_CAP_DB = 99.0
MCD_CONSTANT = 10.0 * np.sqrt(2.0) / np.log(10.0)


def _samples(audio):
    if isinstance(audio, AudioBuffer):
        return audio.samples.astype(np.float64)
    return np.asarray(audio, dtype=np.float64).reshape(-1)


def _check_lengths(reference, generated):
    if reference.size != generated.size:
        raise ShapeError(f"Length mismatch: reference has {reference.size} samples, generated has {generated.size}")


def snr(reference, generated):
    """10 log10 of signal over error energy in dB, capped at 99 dB"""
    x, y = _samples(reference), _samples(generated)
    _check_lengths(x, y)
    signal = np.sum(x * x)
    if signal == 0:
        raise ValueError("SNR is undefined for a silent reference")
    noise = np.sum((x - y) ** 2)
    if noise == 0:
        return SNR_CAP_DB
    return float(min(10.0 * np.log10(signal / noise), SNR_CAP_DB))


def las_rmse(reference, generated, extractor=None):
    """RMSE in dB between 20 log10 amplitude spectra over every (frame, bin) cell"""
    extractor = extractor or FeatureExtractor()
    x, y = _samples(reference), _samples(generated)
    _check_lengths(x, y)
    floor = extractor.cfg.log_floor
    ref_db = 20.0 * np.log10(np.maximum(extractor.magnitude(x), floor))
    gen_db = 20.0 * np.log10(np.maximum(extractor.magnitude(y), floor))
    return float(np.sqrt(np.mean((ref_db - gen_db) ** 2)))


def mel_cepstrum(log_mel, num_coefficients=13):
    """c1..cN of the orthonormal DCT-II along the mel axis (c0 dropped)"""
    cepstrum = dct(np.asarray(log_mel, dtype=np.float64), type=2, norm='ortho', axis=-1)
    return cepstrum[:, 1:num_coefficients + 1]


def mcd(reference, generated, extractor=None, num_coefficients=13):
    """Mel-cepstral distortion in dB, averaged over frames"""
    extractor = extractor or FeatureExtractor()
    x, y = _samples(reference), _samples(generated)
    _check_lengths(x, y)
    diff = mel_cepstrum(extractor.log_mel(x), num_coefficients) - mel_cepstrum(extractor.log_mel(y), num_coefficients)
    return float(MCD_CONSTANT * np.mean(np.sqrt(np.sum(diff ** 2, axis=1))))


def _f0_array(track):
    return track.f0 if isinstance(track, F0Track) else np.asarray(track, dtype=np.float64).reshape(-1)


def f0_rmse_cents(reference, generated):
    """RMSE of 1200 log2(f_gen / f_ref) over frames voiced in both; None if there are none"""
    ref, gen = _f0_array(reference), _f0_array(generated)
    if ref.size != gen.size:
        raise ShapeError(f"F0 tracks differ in length: {ref.size} vs {gen.size}")
    both = (ref > 0) & (gen > 0)
    if not np.any(both):
        return None
    cents = 1200.0 * np.log2(gen[both] / ref[both])
    return float(np.sqrt(np.mean(cents ** 2)))


def vuv_error(reference, generated):
    """Percentage of frames whose voicing decision differs"""
    ref, gen = _f0_array(reference) > 0, _f0_array(generated) > 0
    if ref.size != gen.size:
        raise ShapeError(f"F0 tracks differ in length: {ref.size} vs {gen.size}")
    if ref.size == 0:
        raise ShapeError("V/UV error needs at least one frame")
    return float(np.count_nonzero(ref != gen) / ref.size * 100.0)


def mel_diff_map(mel_a, mel_b):
    """|a - b| over the frames both spectrograms have"""
    a = mel_a.frames if isinstance(mel_a, MelSpectrogram) else np.asarray(mel_a)
    b = mel_b.frames if isinstance(mel_b, MelSpectrogram) else np.asarray(mel_b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"Mel band counts differ: {a.shape} vs {b.shape}")
    frames = min(a.shape[0], b.shape[0])
    if a.shape[0] != b.shape[0]:
        logger.info("Cropping mel difference to %d common frames (%d vs %d)", frames, a.shape[0], b.shape[0])
    return np.abs(a[:frames].astype(np.float64) - b[:frames].astype(np.float64))


def export_mel_diff(diff, prefix):
    """Write ``<prefix>.txt`` (frames x bands) and ``<prefix>.png`` (grayscale, low bands at the bottom)"""
    prefix = Path(prefix)
    os.makedirs(prefix.parent, exist_ok=True)
    text_path = prefix.with_name(prefix.name + '.txt')
    image_path = prefix.with_name(prefix.name + '.png')
    np.savetxt(text_path, diff, fmt='%.6f')
    vmax = float(diff.max()) if diff.size and diff.max() > 0 else 1.0
    mpimg.imsave(image_path, diff.T, cmap='gray', vmin=0.0, vmax=vmax, origin='lower')
    return text_path, image_path


def align_reference(reference, generated, extractor):
    """Zero-pad the reference to the hop grid when the generated audio is the padded length"""
    x, y = _samples(reference), _samples(generated)
    if x.size != y.size:
        padded = extractor.pad_to_hop(x)
        if padded.size == y.size:
            return padded, y
    return x, y


def evaluate_pair(reference, generated, name='', extractor=None):
    """All five metrics for one reference/generated pair"""
    extractor = extractor or FeatureExtractor()
    x, y = align_reference(reference, generated, extractor)
    _check_lengths(x, y)

    snr_db = snr(x, y)
    ref_f0 = extractor.extract_f0(x)
    gen_f0 = extractor.extract_f0(y)
    num_f0_frames = int(np.count_nonzero(ref_f0.vuv & gen_f0.vuv))
    return UtteranceResult(
        name=name,
        snr_db=snr_db,
        saturated=snr_db >= SNR_CAP_DB,
        las_rmse_db=las_rmse(x, y, extractor),
        mcd_db=mcd(x, y, extractor),
        f0_rmse_cent=f0_rmse_cents(ref_f0, gen_f0),
        vuv_error_pct=vuv_error(ref_f0, gen_f0),
        num_frames=len(ref_f0),
        num_f0_frames=num_f0_frames,
    )


def pair_directories(ref_dir, gen_dir):
    """Basenames present in both directories, sorted; unpaired files are logged and skipped"""
    refs = {p.name: p for p in list_wav_files(ref_dir)}
    gens = {p.name: p for p in list_wav_files(gen_dir)}
    for name in sorted(set(refs) - set(gens)):
        logger.warning("No generated file for reference %s; skipping", name)
    for name in sorted(set(gens) - set(refs)):
        logger.warning("No reference file for generated %s; skipping", name)
    return [(name, refs[name], gens[name]) for name in sorted(set(refs) & set(gens))]


def evaluate_directories(ref_dir, gen_dir, jobs=1, extractor=None, progress=False):
    """EvalReport over files paired by basename, records in sorted name order.

    Pairs that cannot be scored are logged and listed in ``report.skipped``.
    """
    extractor = extractor or FeatureExtractor()
    pairs = pair_directories(ref_dir, gen_dir)
    if not pairs:
        raise ValueError(f"No paired WAV files between {ref_dir} and {gen_dir}")

    def evaluate_one(item):
        name, ref_path, gen_path = item
        stem = Path(name).stem
        try:
            return evaluate_pair(read_wav(ref_path), read_wav(gen_path), name=stem, extractor=extractor)
        except ValueError as e:
            logger.warning("Skipping %s: %s", name, e)
            return stem, f"{type(e).__name__}: {e}"

    report = EvalReport()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for result in tqdm(pool.map(evaluate_one, pairs), total=len(pairs), desc='evaluate', disable=not progress):
            if isinstance(result, UtteranceResult):
                report.add(result)
            else:
                report.skip(*result)
    logger.info("Evaluated %d pairs, skipped %d", len(report), len(report.skipped))
    return report
