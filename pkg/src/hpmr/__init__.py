"""GAN-based super-resolution of k-space-truncated MR images.

Modules: ``kspace`` (centred FFT, column masks, zero-filled degradation),
``attention`` (spatial/channel gates), ``network`` (generator and
discriminator), ``losses``, ``training``, ``metrics``, ``data`` (phantoms,
PNG I/O, manifests, bicubic baseline), ``report`` and ``cli``.
"""

from .errors import (CheckpointError, ConfigError, HPMRError, InvalidInputError, ShapeError,
                     TrainingError)
from .kspace import degrade, fft2, ifft2, make_mask
from .metrics import evaluate_pair
from .network import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "HPMRError", "InvalidInputError", "ShapeError",
    "TrainingError", "degrade", "fft2", "ifft2", "make_mask", "evaluate_pair",
    "Discriminator", "DiscriminatorConfig", "Generator", "GeneratorConfig",
    "TrainConfig", "fit", "load_checkpoint", "save_checkpoint",
]
