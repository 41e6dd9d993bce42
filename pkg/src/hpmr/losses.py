"""Adversarial and cyclic-consistency losses.

Generator objective::

    total = adv_g + alpha * fre + beta * img

where ``fre`` compares the measured k-space with the masked spectrum of the
reconstruction and ``img`` is the image-domain MAE against ground truth.
All losses are means over every entry, so they do not scale with batch size.
"""

from dataclasses import dataclass, asdict, astuple, fields
import math

import numpy as np
import torch
import torch.nn.functional as F

from . import kspace
from .errors import ShapeError

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "mae",
    "adv_loss_d",
    "adv_loss_g",
    "cyclic_freq",
    "cyclic_img",
    "total_g_loss",
    "PROB_FLOOR",
]

# sigmoid outputs are kept inside [PROB_FLOOR, 1 - PROB_FLOOR] before the log
PROB_FLOOR = 1e-12
_MAX_NLL = -math.log(PROB_FLOOR)
_MIN_NLL = -math.log1p(-PROB_FLOOR)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 10.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


@dataclass
class LossBreakdown:
    adv_g: float
    adv_d: float
    fre: float
    img: float
    total: float

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def as_row(self):
        return astuple(self)

    def to_dict(self):
        return asdict(self)


def mae(a, b):
    """Mean absolute error; complex inputs use the complex modulus."""
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor):
        return (torch.as_tensor(a) - torch.as_tensor(b)).abs().mean()
    return float(np.mean(np.abs(np.asarray(a) - np.asarray(b))))


def _as_logits(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def _nll_sigmoid(x):
    """-log(sigmoid(x)), stable, with the probability floor applied."""
    return F.softplus(-x).clamp(_MIN_NLL, _MAX_NLL)


def adv_loss_d(logit_real, logit_fake):
    """Discriminator BCE: ``-log s(real) - log(1 - s(fake))``, batch-averaged."""
    logit_real, logit_fake = _as_logits(logit_real), _as_logits(logit_fake)
    return _nll_sigmoid(logit_real).mean() + _nll_sigmoid(-logit_fake).mean()


def adv_loss_g(logit_fake):
    """Non-saturating generator loss ``-log s(fake)``, batch-averaged."""
    return _nll_sigmoid(_as_logits(logit_fake)).mean()


def cyclic_freq(ks_lr, hr_re, mask):
    """MAE between measured k-space and the reconstruction's spectrum on the mask support."""
    ks_re = kspace.apply_mask(kspace.fft2(hr_re, check=False), mask)
    return mae(ks_lr, ks_re)


def cyclic_img(hr_gt, hr_re):
    return mae(hr_gt, hr_re)


def total_g_loss(adv_g, fre, img, weights=LossWeights()):
    return adv_g + weights.alpha * fre + weights.beta * img
