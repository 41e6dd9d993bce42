"""Synthetic phantoms, PNG I/O, dataset manifests and the bicubic baseline.

A manifest is a line-oriented text file, one item per line::

    train<TAB>phantom:17
    test<TAB>/data/slices/patient03_042.png

Sources are either ``phantom:<seed>`` or a path to a grayscale PNG. Lines
starting with ``#`` are comments; ``# size=<n>`` and ``# normalization=<text>``
header comments are read back into the manifest record.
"""

from dataclasses import dataclass, field
import math
import os
import warnings

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError, InvalidInputError, ShapeError

__all__ = [
    "Phantom",
    "Ellipse",
    "DatasetManifest",
    "gen_phantom",
    "phantom_corpus",
    "load_image",
    "save_image",
    "split",
    "phantom_manifest",
    "read_manifest",
    "write_manifest",
    "load_split",
    "resize",
    "cubic_interp",
    "bicubic_baseline",
    "BICUBIC_RATES",
]

BICUBIC_RATES = (0.5, 0.25)


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle: float
    intensity: float
    ramp_x: float
    ramp_y: float
    softness: float


@dataclass
class Phantom:
    image: np.ndarray
    seed: int
    ellipses: list
    texture_scale: float


def _band_limited_noise(rng, size, cutoff):
    white = rng.standard_normal((size, size))
    f = np.fft.fftfreq(size)
    r2 = f[:, None] ** 2 + f[None, :] ** 2
    spec = np.fft.fft2(white) * np.exp(-r2 / (2.0 * cutoff ** 2))
    tex = np.real(np.fft.ifft2(spec))
    return tex / (tex.std() + 1e-12)


def gen_phantom(seed, size=64):
    """Soft-edged ellipse phantom with intensity ramps and smooth texture.

    A large body ellipse is drawn first and 4-11 inner structures are added on
    top. The result is clamped to [0, 1] and is a pure function of ``seed``.
    """
    if size < 2:
        raise ConfigError(f"phantom size must be >= 2, got {size}")
    rng = np.random.default_rng(seed)
    t = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(t, t, indexing="ij")

    n = int(rng.integers(5, 13))
    ellipses = []
    img = np.zeros((size, size))
    for i in range(n):
        if i == 0:
            e = Ellipse(
                cx=rng.uniform(-0.05, 0.05), cy=rng.uniform(-0.05, 0.05),
                a=rng.uniform(0.7, 0.9), b=rng.uniform(0.55, 0.8),
                angle=rng.uniform(-0.3, 0.3), intensity=rng.uniform(0.25, 0.4),
                ramp_x=rng.uniform(-0.3, 0.3), ramp_y=rng.uniform(-0.3, 0.3),
                softness=rng.uniform(0.01, 0.03),
            )
        else:
            e = Ellipse(
                cx=rng.uniform(-0.5, 0.5), cy=rng.uniform(-0.5, 0.5),
                a=rng.uniform(0.05, 0.35), b=rng.uniform(0.05, 0.35),
                angle=rng.uniform(0.0, np.pi), intensity=rng.uniform(-0.2, 0.45),
                ramp_x=rng.uniform(-0.5, 0.5), ramp_y=rng.uniform(-0.5, 0.5),
                softness=rng.uniform(0.005, 0.04),
            )
        ellipses.append(e)
        c, s = math.cos(e.angle), math.sin(e.angle)
        u = (c * (xx - e.cx) + s * (yy - e.cy)) / e.a
        v = (-s * (xx - e.cx) + c * (yy - e.cy)) / e.b
        r = np.sqrt(u * u + v * v)
        inside = 0.5 * (1.0 + np.tanh((1.0 - r) / e.softness))
        ramp = 1.0 + e.ramp_x * (xx - e.cx) + e.ramp_y * (yy - e.cy)
        img += e.intensity * ramp * inside

    texture_scale = float(rng.uniform(0.02, 0.05))
    body = 0.5 * (1.0 + np.tanh((img - 0.05) / 0.02))
    img += texture_scale * body * _band_limited_noise(rng, size, cutoff=rng.uniform(0.08, 0.2))
    return Phantom(np.clip(img, 0.0, 1.0), int(seed), ellipses, texture_scale)


def phantom_corpus(seeds, size=64):
    return np.stack([gen_phantom(s, size).image for s in seeds])


def load_image(path):
    """Read an 8- or 16-bit grayscale PNG and map it linearly onto [0, 1]."""
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read image {path}: {exc}") from exc
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode == "1":
        return arr.astype(np.float64)
    if mode.startswith("I;16") or mode == "I":
        return arr.astype(np.float64) / 65535.0
    raise InvalidInputError(f"{path}: expected a single-channel grayscale image, got mode {mode!r}")


def save_image(img, path, bits=8):
    """Write ``img`` (clipped to [0, 1]) as an 8- or 16-bit grayscale PNG."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        out = PILImage.fromarray(np.round(img * 255.0).astype(np.uint8), mode="L")
    elif bits == 16:
        out = PILImage.fromarray(np.round(img * 65535.0).astype(np.uint16))
    else:
        raise ConfigError(f"bits must be 8 or 16, got {bits}")
    out.save(path, format="PNG")


@dataclass
class DatasetManifest:
    entries: list                   # (split, source) pairs, in order
    size: int = 64
    normalization: str = "linear [0,1] from PNG bit depth; phantoms native"
    meta: dict = field(default_factory=dict)

    def sources(self, which):
        return [src for sp, src in self.entries if sp == which]

    @property
    def train(self):
        return self.sources("train")

    @property
    def test(self):
        return self.sources("test")


def split(sources, ratio=0.8, seed=0, size=64):
    """Shuffle ``sources`` deterministically and assign the first ``round(ratio*N)`` to train."""
    if not (0.0 < ratio <= 1.0):
        raise ConfigError(f"split ratio must lie in (0, 1], got {ratio}")
    sources = list(sources)
    order = np.random.default_rng(seed).permutation(len(sources))
    n_train = int(math.floor(ratio * len(sources) + 0.5))
    if n_train == len(sources):
        warnings.warn("split ratio leaves the test set empty", stacklevel=2)
    entries = [("train" if i < n_train else "test", sources[j]) for i, j in enumerate(order)]
    return DatasetManifest(entries, size=size, meta={"seed": seed, "ratio": ratio})


def phantom_manifest(n, ratio=0.8, seed=0, size=64, first_seed=0):
    return split([f"phantom:{first_seed + i}" for i in range(n)], ratio, seed, size)


def write_manifest(manifest, path):
    lines = [f"# size={manifest.size}", f"# normalization={manifest.normalization}"]
    lines += [f"{sp}\t{src}" for sp, src in manifest.entries]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    entries = []
    size = 64
    norm = DatasetManifest.__dataclass_fields__["normalization"].default
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("size="):
                    size = int(body[5:])
                elif body.startswith("normalization="):
                    norm = body[len("normalization="):]
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[0] not in ("train", "test"):
                raise ConfigError(f"{path}:{lineno}: expected 'train|test<TAB>source'")
            src = parts[1]
            if not src.startswith("phantom:") and not os.path.isabs(src):
                src = os.path.join(os.path.dirname(os.path.abspath(path)), src)
            entries.append((parts[0], src))
    return DatasetManifest(entries, size=size, normalization=norm)


def load_source(source, size):
    if source.startswith("phantom:"):
        return gen_phantom(int(source.split(":", 1)[1]), size).image
    img = load_image(source)
    if img.shape != (size, size):
        img = resize(img, size)
    return img


def load_split(manifest, which):
    """Stack the images of one split into an (N, size, size) float array."""
    srcs = manifest.sources(which)
    if not srcs:
        return np.zeros((0, manifest.size, manifest.size))
    return np.stack([load_source(s, manifest.size) for s in srcs])


def _keys_weights(t, a=-0.5):
    """Cubic convolution weights for the 4 taps around fractional offset ``t``."""
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    ad = np.abs(d)
    w = np.where(
        ad <= 1,
        (a + 2) * ad ** 3 - (a + 3) * ad ** 2 + 1,
        np.where(ad < 2, a * ad ** 3 - 5 * a * ad ** 2 + 8 * a * ad - 4 * a, 0.0),
    )
    return w


def cubic_interp(samples, positions, axis=-1):
    """Cubic-convolution interpolation of ``samples`` at fractional ``positions``.

    Positions are in sample-index units along ``axis``; taps past the ends are
    clamped to the edge sample.
    """
    samples = np.moveaxis(np.asarray(samples, dtype=np.float64), axis, -1)
    n = samples.shape[-1]
    positions = np.asarray(positions, dtype=np.float64)
    base = np.floor(positions).astype(int)
    w = _keys_weights(positions - base)
    out = np.zeros(samples.shape[:-1] + (len(positions),))
    for k, off in enumerate((-1, 0, 1, 2)):
        idx = np.clip(base + off, 0, n - 1)
        out += samples[..., idx] * w[:, k]
    return np.moveaxis(out, -1, axis)


def resize(img, size):
    """Square resize: block-average when shrinking by an integer factor, cubic otherwise."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("resize expects a 2-D image")
    h, w = img.shape
    if h % size == 0 and w % size == 0 and h >= size and w >= size:
        fy, fx = h // size, w // size
        return img.reshape(size, fy, size, fx).mean(axis=(1, 3))
    out = img
    for axis, n in ((0, h), (1, w)):
        pos = (np.arange(size) + 0.5) * (n / size) - 0.5
        out = cubic_interp(out, pos, axis=axis)
    return np.clip(out, 0.0, 1.0)


def bicubic_baseline(lr, rate):
    """Keep every ``1/rate``-th column of ``lr`` and cubic-interpolate back to full width."""
    lr = np.asarray(lr, dtype=np.float64)
    if rate == 1.0:
        return lr.copy()
    if rate not in BICUBIC_RATES:
        raise ConfigError(f"bicubic baseline supports rates {BICUBIC_RATES}, got {rate}")
    step = int(round(1.0 / rate))
    width = lr.shape[-1]
    kept = lr[..., ::step]
    return cubic_interp(kept, np.arange(width) / step, axis=-1)
