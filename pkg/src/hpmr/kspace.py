"""Centered, unitary 2-D Fourier transforms and horizontal k-space truncation.

The low-resolution input of the network is simulated by keeping a centered
band of k-space columns and transforming back to the image domain::

    lr = |IFFT(FFT(hr) * mask)|

Every function accepts either a numpy array or a torch tensor; the last two
axes are the image axes, so batched (..., H, W) stacks work too. Torch inputs
stay differentiable.

Conventions:
  * DC sits at index ``(H // 2, W // 2)`` after the shift.
  * ``norm="ortho"`` in both directions, so Parseval holds exactly.
  * the inverse returns the magnitude ``|z|``.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch

from .errors import ConfigError, InvalidInputError, ShapeError

__all__ = [
    "LrMask",
    "fft2",
    "ifft2",
    "ifft2_complex",
    "make_mask",
    "apply_mask",
    "degrade",
    "degrade_with_kspace",
    "kept_band",
]


def _is_torch(x):
    return isinstance(x, torch.Tensor)


def _check_finite(x, what):
    if _is_torch(x):
        ok = bool(torch.isfinite(x).all())
    else:
        ok = bool(np.all(np.isfinite(x)))
    if not ok:
        raise InvalidInputError(f"{what} contains non-finite values")


def fft2(img, check=True):
    """DC-centered orthonormal 2-D DFT over the last two axes."""
    if img.shape[-1] < 2 or img.shape[-2] < 2:
        raise ShapeError(f"image must be at least 2x2, got {tuple(img.shape[-2:])}")
    if check:
        _check_finite(img, "image")
    if _is_torch(img):
        k = torch.fft.fft2(img, norm="ortho")
        return torch.fft.fftshift(k, dim=(-2, -1))
    k = np.fft.fft2(np.asarray(img), norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2_complex(ks, check=True):
    """Inverse of :func:`fft2`, keeping the complex result."""
    if check:
        _check_finite(ks, "k-space")
    if _is_torch(ks):
        return torch.fft.ifft2(torch.fft.ifftshift(ks, dim=(-2, -1)), norm="ortho")
    return np.fft.ifft2(np.fft.ifftshift(ks, axes=(-2, -1)), norm="ortho")


def ifft2(ks, check=True):
    """Magnitude image of the inverse transform of DC-centered k-space."""
    z = ifft2_complex(ks, check=check)
    return z.abs() if _is_torch(z) else np.abs(z)


def kept_band(width, rate):
    """Return ``(start, stop)`` column indices (stop exclusive) of the kept band.

    ``k = round(rate * width)`` columns are kept, spanning
    ``[W//2 - k//2, W//2 + ceil(k/2) - 1]``.
    """
    if not (0.0 < rate <= 1.0) or not math.isfinite(rate):
        raise ConfigError(f"sampling rate must lie in (0, 1], got {rate!r}")
    if width < 2:
        raise ConfigError(f"width must be >= 2, got {width}")
    k = max(1, int(math.floor(rate * width + 0.5)))
    center = width // 2
    start = center - k // 2
    return start, start + k


@dataclass(frozen=True)
class LrMask:
    """Binary column mask selecting a centered band of k-space columns."""

    height: int
    width: int
    rate: float

    def __post_init__(self):
        if self.height < 1:
            raise ConfigError(f"height must be positive, got {self.height}")
        kept_band(self.width, self.rate)

    @property
    def band(self):
        return kept_band(self.width, self.rate)

    @property
    def columns(self):
        start, stop = self.band
        return np.arange(start, stop)

    @property
    def kept(self):
        """Boolean (H, W) grid, constant along each column."""
        start, stop = self.band
        row = np.zeros(self.width, dtype=bool)
        row[start:stop] = True
        return np.broadcast_to(row, (self.height, self.width)).copy()

    def as_tensor(self, dtype=torch.float32, device=None):
        return torch.as_tensor(self.kept, dtype=dtype, device=device)

    def to_dict(self):
        start, stop = self.band
        return {
            "height": self.height,
            "width": self.width,
            "rate": self.rate,
            "kept_columns": [start, stop - 1],
            "n_kept": stop - start,
        }


def make_mask(height, width, rate):
    return LrMask(int(height), int(width), float(rate))


def _mask_like(mask, ref):
    if isinstance(mask, LrMask):
        m = mask.kept
    else:
        m = mask
    if tuple(m.shape[-2:]) != tuple(ref.shape[-2:]):
        raise ShapeError(
            f"mask shape {tuple(m.shape[-2:])} does not match data shape {tuple(ref.shape[-2:])}"
        )
    if _is_torch(ref):
        if not _is_torch(m):
            m = torch.as_tensor(np.asarray(m), device=ref.device)
        return m.to(ref.real.dtype)
    return np.asarray(m, dtype=np.float64)


def apply_mask(ks, mask):
    """Zero every k-space coefficient outside the mask."""
    return ks * _mask_like(mask, ks)


def degrade_with_kspace(img, mask):
    """Return ``(lr, ks_lr)``: the zero-filled image and its masked spectrum."""
    ks_lr = apply_mask(fft2(img), mask)
    return ifft2(ks_lr, check=False), ks_lr


def degrade(img, mask):
    """Zero-filled low-resolution image, same size as ``img``.

    No renormalisation is applied; the raw magnitude is returned.
    """
    return degrade_with_kspace(img, mask)[0]
