# app/utils/f0_trainer.py
import logging

import numpy as np
from tqdm import tqdm

from app.config import F0PredictorConfig
from app.models import tensor as T
from app.models.f0_predictor import F0Predictor
from app.models.features import F0Track
from app.models.optim import AdamW
from app.models.tensor import Tensor, backward
from app.utils.metrics import f0_rmse_cents, vuv_error

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7


def _targets(features, cfg):
    mel = features.mel.frames[:, :cfg.n_bands].T[None, :, :]
    f0 = features.f0_track.f0
    voiced = features.f0_track.vuv.astype(np.float64)
    return Tensor(mel), f0 / cfg.f0_scale, voiced


def predictor_loss(predictor, features):
    """Masked MSE on voiced-frame F0 (in f0_scale units) plus BCE on the voicing flag"""
    cfg = predictor.cfg
    mel, f0_target, voiced = _targets(features, cfg)
    f0_pred, prob = predictor(mel)
    shape = f0_pred.shape
    mask = Tensor(voiced.reshape(shape))

    loss = _bce(prob, mask)
    num_voiced = float(voiced.sum())
    if num_voiced > 0:
        err = T.square(f0_pred - Tensor(f0_target.reshape(shape)))
        loss = loss + T.sum_all(T.mul(err, mask)) * (1.0 / num_voiced)
    return loss


def _bce(prob, target):
    ones = Tensor(np.ones(prob.shape))
    log_p = T.log(T.clamp_min(prob, BCE_EPS))
    log_q = T.log(T.clamp_min(ones - prob, BCE_EPS))
    return -T.mean(T.mul(target, log_p) + T.mul(ones - target, log_q))


def split_dataset(dataset, val_fraction, rng):
    """Random hold-out; with nothing held out, selection runs on the training set"""
    count = int(len(dataset) * val_fraction)
    if count == 0:
        return list(dataset), list(dataset)
    order = rng.permutation(len(dataset))
    val = [dataset[i] for i in sorted(order[:count])]
    train = [dataset[i] for i in sorted(order[count:])]
    return train, val


def train_f0_predictor(dataset, cfg=None, steps=None, lr=None, seed=1234, progress=False):
    """Fit an F0Predictor on FeatureSets that carry F0 tracks.

    One utterance per step, drawn at random. Validation loss is measured every
    ``eval_interval`` steps and at the end; the best state seen is returned.

    Args:
        dataset: list of FeatureSet with f0 tracks
        cfg: F0PredictorConfig
        steps: number of updates (default cfg.steps)
        lr: learning rate (default cfg.learning_rate)
        seed: seeds initialisation, the split and the utterance order

    Returns:
        (F0Predictor holding the best-validation weights, history list)
    """
    cfg = cfg or F0PredictorConfig()
    dataset = [fs for fs in dataset if fs.has_f0]
    if not dataset:
        raise ValueError("F0 predictor training needs at least one utterance with an F0 track")
    steps = cfg.steps if steps is None else steps
    rng = np.random.default_rng(seed)
    predictor = F0Predictor(cfg, rng)
    optimizer = AdamW(predictor.parameters(), lr=lr or cfg.learning_rate, betas=(0.9, 0.999), weight_decay=0.0)
    train_set, val_set = split_dataset(dataset, cfg.val_fraction, rng)

    def validation_loss():
        return float(np.mean([predictor_loss(predictor, fs).item() for fs in val_set]))

    best_loss = validation_loss()
    best_state = predictor.state_dict()
    history = [{'step': 0, 'val_loss': best_loss, 'best_loss': best_loss}]

    for step in tqdm(range(1, steps + 1), desc='train-f0', disable=not progress):
        features = train_set[int(rng.integers(len(train_set)))]
        optimizer.zero_grad()
        loss = predictor_loss(predictor, features)
        backward(loss)
        optimizer.step()

        if step % cfg.eval_interval == 0 or step == steps:
            val_loss = validation_loss()
            if val_loss < best_loss:
                best_loss = val_loss
                best_state = predictor.state_dict()
            history.append({'step': step, 'train_loss': loss.item(), 'val_loss': val_loss, 'best_loss': best_loss})
            logger.debug("f0 step %d: train %.4f val %.4f best %.4f", step, loss.item(), val_loss, best_loss)

    predictor.load_state_dict(best_state)
    logger.info("F0 predictor trained for %d steps, best validation loss %.4f", steps, best_loss)
    return predictor, history


def evaluate_f0_predictor(dataset, predictor):
    """F0-RMSE (cents) and V/UV error (%) over all frames of the dataset"""
    dataset = [fs for fs in dataset if fs.has_f0]
    if not dataset:
        raise ValueError("Evaluation needs at least one utterance with an F0 track")
    ref = np.concatenate([fs.f0_track.f0 for fs in dataset])
    pred = np.concatenate([predictor.predict(fs.mel).f0 for fs in dataset])
    ref_track, pred_track = F0Track(ref), F0Track(pred)
    error = vuv_error(ref_track, pred_track)
    return {
        'f0_rmse_cent': f0_rmse_cents(ref_track, pred_track),
        'vuv_error_pct': error,
        'vuv_accuracy_pct': 100.0 - error,
        'num_frames': int(ref.size),
    }
