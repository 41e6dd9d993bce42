"""Image quality metrics for images on a [0, 1] intensity scale.

``vif`` is the pixel-domain Visual Information Fidelity of Sheikh and Bovik
(four scales, Gaussian windows). It is reported under the "VIF" column of
the evaluation tables; it is *not* the regression variance inflation factor,
which is not defined for a pair of images.
"""

from dataclasses import dataclass, asdict
import math

import numpy as np
from scipy import signal

from .errors import InvalidInputError, ShapeError

__all__ = [
    "MetricsReport",
    "HistStats",
    "mse",
    "psnr",
    "rmse",
    "ssim",
    "ssim_map",
    "vif",
    "histogram",
    "kl_from_probs",
    "kl_divergence",
    "hist_stats",
    "evaluate_pair",
    "gaussian_window",
]

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 11
SSIM_SIGMA = 1.5
VIF_NOISE_VAR = 2.0      # sigma_n^2 on the 0..255 scale
HIST_BINS = 256
KL_EPS = 1e-10


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def mse(x, ref):
    x, ref = _pair(x, ref)
    return float(np.mean((x - ref) ** 2))


def psnr(x, ref, data_range=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    err = mse(x, ref)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(data_range ** 2 / err))


def rmse(x, ref):
    return math.sqrt(mse(x, ref))


def gaussian_window(size, sigma):
    """Normalised 2-D Gaussian window (MATLAB ``fspecial('gaussian')``)."""
    r = (size - 1) / 2.0
    t = np.arange(size) - r
    g = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, win):
    return signal.correlate(img, win, mode="valid", method="direct")


def ssim_map(x, ref, data_range=1.0):
    x, ref = _pair(x, ref)
    if x.ndim != 2 or min(x.shape) < SSIM_WIN:
        raise ShapeError(f"SSIM needs a 2-D image of at least {SSIM_WIN}x{SSIM_WIN}, got {x.shape}")
    win = gaussian_window(SSIM_WIN, SSIM_SIGMA)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(ref, win)
    sxx = _filter_valid(x * x, win) - mu_x ** 2
    syy = _filter_valid(ref * ref, win) - mu_y ** 2
    sxy = _filter_valid(x * ref, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, ref, data_range=1.0):
    """Mean SSIM over all fully-covered 11x11 Gaussian windows (sigma 1.5)."""
    return float(np.mean(ssim_map(x, ref, data_range)))


def vif(x, ref, data_range=1.0):
    """Pixel-domain visual information fidelity of ``x`` against ``ref``."""
    x, ref = _pair(x, ref)
    if x.ndim != 2:
        raise ShapeError("VIF expects a 2-D image")
    scale = 255.0 / data_range
    dist = x * scale
    img = ref * scale
    num = 0.0
    den = 0.0
    for level in range(1, 5):
        n = 2 ** (4 - level + 1) + 1
        win = gaussian_window(n, n / 5.0)
        if level > 1:
            img = _filter_valid(img, win)[::2, ::2]
            dist = _filter_valid(dist, win)[::2, ::2]
        if min(img.shape) < n:
            raise ShapeError(f"image of shape {x.shape} is too small for 4-scale VIF")
        mu1 = _filter_valid(img, win)
        mu2 = _filter_valid(dist, win)
        s1 = np.maximum(_filter_valid(img * img, win) - mu1 * mu1, 0.0)
        s2 = np.maximum(_filter_valid(dist * dist, win) - mu2 * mu2, 0.0)
        s12 = _filter_valid(img * dist, win) - mu1 * mu2

        g = s12 / (s1 + 1e-10)
        sv = s2 - g * s12
        flat1 = s1 < 1e-10
        g[flat1] = 0.0
        sv[flat1] = s2[flat1]
        s1[flat1] = 0.0
        flat2 = s2 < 1e-10
        g[flat2] = 0.0
        sv[flat2] = 0.0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0.0
        sv = np.maximum(sv, 1e-10)

        num += np.sum(np.log10(1.0 + g * g * s1 / (sv + VIF_NOISE_VAR)))
        den += np.sum(np.log10(1.0 + s1 / VIF_NOISE_VAR))
    if den == 0.0:
        if np.array_equal(x, ref):
            return 1.0
        raise InvalidInputError("VIF is undefined for a reference without variance")
    return float(num / den)


def histogram(img, bins=HIST_BINS):
    """Normalised histogram over [0, 1] with ``bins`` equal-width bins."""
    v = np.clip(np.asarray(img, dtype=np.float64).ravel(), 0.0, 1.0)
    counts, _ = np.histogram(v, bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


def kl_from_probs(p, q, eps=KL_EPS):
    """``sum p ln(p/q)`` after adding ``eps`` to every bin and renormalising."""
    p = np.asarray(p, dtype=np.float64) + eps
    q = np.asarray(q, dtype=np.float64) + eps
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def kl_divergence(p_img, q_img, bins=HIST_BINS, eps=KL_EPS):
    """KL divergence (nats) between the intensity histograms of two images."""
    return max(kl_from_probs(histogram(p_img, bins), histogram(q_img, bins), eps), 0.0)


@dataclass
class HistStats:
    kurtosis: float
    skewness: float
    mean: float
    std: float

    def render(self):
        return (f"kurt {self.kurtosis:.2f}, skew {self.skewness:.2f}, "
                f"mean {self.mean:.2f}, std {self.std:.2f}")


def hist_stats(x):
    """Mean, population std, skewness and Pearson (non-excess) kurtosis.

    Skewness and kurtosis are ``nan`` for a constant image.
    """
    v = np.asarray(x, dtype=np.float64).ravel()
    mean = float(v.mean())
    d = v - mean
    var = float(np.mean(d ** 2))
    std = math.sqrt(var)
    if var == 0.0:
        return HistStats(math.nan, math.nan, mean, 0.0)
    skew = float(np.mean(d ** 3) / var ** 1.5)
    kurt = float(np.mean(d ** 4) / var ** 2)
    return HistStats(kurt, skew, mean, std)


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    rmse: float
    vif: float
    kl: float
    hist: HistStats

    def to_dict(self):
        return asdict(self)

    def row(self):
        """Flat dict with RMSE in units of 1e-2, as in the summary tables."""
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "rmse_e2": self.rmse * 100.0,
            "vif": self.vif,
            "kl": self.kl,
            "kurtosis": self.hist.kurtosis,
            "skewness": self.hist.skewness,
            "mean": self.hist.mean,
            "std": self.hist.std,
        }


def evaluate_pair(recon, gt):
    """All metrics of ``recon`` against ``gt``; KL is ``KL(hist(gt) || hist(recon))``.

    ``hist`` describes the reconstruction.
    """
    recon, gt = _pair(recon, gt)
    return MetricsReport(
        psnr=psnr(recon, gt),
        ssim=ssim(recon, gt),
        rmse=rmse(recon, gt),
        vif=vif(recon, gt),
        kl=kl_divergence(gt, recon),
        hist=hist_stats(recon),
    )
