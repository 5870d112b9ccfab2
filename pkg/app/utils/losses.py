# app/utils/losses.py
"""Least-squares adversarial, feature-matching and mel losses"""
import numpy as np

from app.errors import NonFiniteError, ShapeError
from app.models import tensor as T


def _check_finite(name, loss):
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"{name} loss is not finite ({loss.item()})")
    return loss


def _total(terms):
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def discriminator_loss(real_outputs, fake_outputs):
    """Sum over sub-discriminators of mean((D(real) - 1)^2) + mean(D(fake)^2)"""
    terms = []
    for (real_score, _), (fake_score, _) in zip(real_outputs, fake_outputs):
        terms.append(T.mean(T.square(real_score - 1.0)) + T.mean(T.square(fake_score)))
    return _check_finite('Discriminator', _total(terms))


def generator_adversarial_loss(fake_outputs):
    """Sum over sub-discriminators of mean((D(fake) - 1)^2)"""
    terms = [T.mean(T.square(fake_score - 1.0)) for fake_score, _ in fake_outputs]
    return _check_finite('Adversarial', _total(terms))


def feature_matching_loss(real_outputs, fake_outputs):
    """Sum over every feature map of the mean absolute difference"""
    terms = []
    for (_, real_features), (_, fake_features) in zip(real_outputs, fake_outputs):
        for real_map, fake_map in zip(real_features, fake_features):
            terms.append(T.mean(T.abs(real_map.detach() - fake_map)))
    return _check_finite('Feature matching', _total(terms))


def mel_loss(mel_real, mel_fake):
    if mel_real.shape != mel_fake.shape:
        raise ShapeError(f"Mel shapes differ: {mel_real.shape} vs {mel_fake.shape}")
    return _check_finite('Mel', T.mean(T.abs(mel_real.detach() - mel_fake)))


def gan_losses(real_outputs, fake_outputs, mel_real, mel_fake, lambda_fm=2.0, lambda_mel=45.0):
    """All training losses for one batch; returns a dict of scalar tensors.

    ``total = adv + lambda_fm * fm + lambda_mel * mel`` is the generator objective.
    ``disc`` is the LSGAN discriminator loss on the same outputs; the trainer
    minimises it separately through ``discriminator_loss`` on detached fakes.
    """
    adv = generator_adversarial_loss(fake_outputs)
    fm = feature_matching_loss(real_outputs, fake_outputs)
    mel = mel_loss(mel_real, mel_fake)
    total = adv + fm * lambda_fm + mel * lambda_mel
    disc = discriminator_loss(real_outputs, fake_outputs)
    return {'adv': adv, 'fm': fm, 'mel': mel, 'total': _check_finite('Generator', total), 'disc': disc}
