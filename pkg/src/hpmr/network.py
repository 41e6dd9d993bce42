"""Generator (two cascaded residual U-nets) and discriminator.

Tensors are NCHW throughout. Every convolution is followed by a Leaky ReLU
(slope 0.2) except the final output convolutions, which are linear.

SR-block (three layers)::

    conv_in   3x3, stride 2 when downsampling
    residual  conv0 (w) -> conv1 (w/ratio) -> conv2 (w) -> full attention, + skip
    conv_out  3x3; transposed stride 2 when upsampling

An encoder block is SR(down) followed by SR(none); a decoder block is SR(none)
followed by SR(up) and a full-attention stage. Encoder outputs are
concatenated into the matching decoder input, and the U-net input is added
to its output.

Convolutions use He initialisation for the Leaky ReLU slope with zero bias,
and the last convolution of every residual branch is scaled down by 10. The
framework default shrinks the variance by about 1/3 per layer, which leaves
the discriminator's logit independent of its input; plain He init lets the
generator's activations grow about 1000x through the skips and attention.
Zeroing the branch instead would starve everything upstream of it of
gradient for the first steps.
"""

from dataclasses import dataclass, field, asdict

import torch
from torch import nn
import torch.nn.functional as F

from .attention import FullAttention, MAX_SPATIAL_POSITIONS
from .errors import ConfigError, ShapeError

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "SRBlock",
    "ResidualUNet",
    "Generator",
    "Discriminator",
    "LEAKY_SLOPE",
    "zero_convolutions",
    "init_weights",
]

LEAKY_SLOPE = 0.2


@dataclass
class GeneratorConfig:
    depth: int = 2
    base_widths: list = field(default_factory=lambda: [32, 64])
    bottleneck_ratio: int = 2
    use_spatial_attention: bool = True
    use_channel_attention: bool = True
    attention_residual: bool = True
    input_size: int = 64
    n_unets: int = 2

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if len(self.base_widths) != self.depth:
            raise ConfigError(
                f"base_widths needs {self.depth} entries, got {list(self.base_widths)}"
            )
        if any(int(w) < 1 for w in self.base_widths):
            raise ConfigError("channel widths must be positive")
        if self.bottleneck_ratio < 1 or any(w % self.bottleneck_ratio for w in self.base_widths):
            raise ConfigError("bottleneck_ratio must divide every width")
        if self.input_size % (2 ** self.depth):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2**depth={2 ** self.depth}"
            )
        return self

    @classmethod
    def full_size(cls):
        """Full-size variant: four levels, 64..512 channels, 512x512 input."""
        return cls(depth=4, base_widths=[64, 128, 256, 512], input_size=512)

    def to_dict(self):
        return asdict(self)


@dataclass
class DiscriminatorConfig:
    first_width: int = 64
    widths: list = field(default_factory=lambda: [32, 64, 64, 64])
    bottleneck_ratio: int = 2
    use_attention: bool = True
    input_size: int = 64

    def validate(self):
        if len(self.widths) != 4:
            raise ConfigError("the discriminator has exactly four encoder blocks")
        if self.input_size % 32:
            raise ConfigError(f"discriminator input_size must be divisible by 32, got {self.input_size}")
        if any(w % self.bottleneck_ratio for w in self.widths):
            raise ConfigError("bottleneck_ratio must divide every width")
        return self

    def to_dict(self):
        return asdict(self)


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def _act(x):
    return F.leaky_relu(x, LEAKY_SLOPE)


def _attention(channels, size, spatial, channel, residual):
    spatial = spatial and size * size <= MAX_SPATIAL_POSITIONS
    if not (spatial or channel):
        return None
    return FullAttention(channels, size, size, spatial=spatial, channel=channel, residual=residual)


class SRBlock(nn.Module):
    """Resampling conv, bottleneck residual block with attention, adjusting conv.

    ``size`` is the spatial size of the block input.
    """

    def __init__(self, in_ch, width, size, resample="none", ratio=2,
                 spatial=True, channel=True, residual=True, out_ch=None):
        super().__init__()
        if resample not in ("down", "up", "none"):
            raise ConfigError(f"unknown resample mode {resample!r}")
        out_ch = width if out_ch is None else out_ch
        self.resample = resample
        self.conv_in = _conv(in_ch, width, stride=2 if resample == "down" else 1)
        inner = size // 2 if resample == "down" else size
        self.conv0 = _conv(width, width)
        self.conv1 = _conv(width, width // ratio)
        self.conv2 = _conv(width // ratio, width)
        self.attention = _attention(width, inner, spatial, channel, residual)
        if resample == "up":
            self.conv_out = nn.ConvTranspose2d(width, out_ch, 3, stride=2, padding=1, output_padding=1)
        else:
            self.conv_out = _conv(width, out_ch)
        self.in_size, self.inner_size = size, inner

    def forward(self, x):
        if x.shape[-1] != self.in_size or x.shape[-2] != self.in_size:
            raise ShapeError(f"SR-block built for {self.in_size}px input, got {tuple(x.shape[-2:])}")
        h = _act(self.conv_in(x))
        r = _act(self.conv0(h))
        r = _act(self.conv1(r))
        r = _act(self.conv2(r))
        if self.attention is not None:
            r = self.attention(r)
        h = h + r
        return _act(self.conv_out(h))


class EncoderBlock(nn.Sequential):
    def __init__(self, in_ch, width, size, ratio, spatial, channel, residual):
        super().__init__(
            SRBlock(in_ch, width, size, "down", ratio, spatial, channel, residual),
            SRBlock(width, width, size // 2, "none", ratio, spatial, channel, residual),
        )


class DecoderBlock(nn.Module):
    def __init__(self, in_ch, width, out_ch, size, ratio, spatial, channel, residual):
        super().__init__()
        self.sr0 = SRBlock(in_ch, width, size, "none", ratio, spatial, channel, residual)
        self.sr1 = SRBlock(width, width, size, "up", ratio, spatial, channel, residual,
                           out_ch=out_ch)
        self.attention = _attention(out_ch, 2 * size, spatial, channel, residual)

    def forward(self, x):
        x = self.sr1(self.sr0(x))
        if self.attention is not None:
            x = self.attention(x)
        return x


class ResidualUNet(nn.Module):
    """One residual U-net mapping (B, 1, S, S) to (B, 1, S, S)."""

    def __init__(self, cfg, in_ch=1):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        widths = [int(w) for w in cfg.base_widths]
        opts = dict(ratio=cfg.bottleneck_ratio, spatial=cfg.use_spatial_attention,
                    channel=cfg.use_channel_attention, residual=cfg.attention_residual)
        size = cfg.input_size
        self.encoders = nn.ModuleList()
        ch = in_ch
        for w in widths:
            self.encoders.append(EncoderBlock(ch, w, size, **opts))
            ch, size = w, size // 2
        # decoders[l] mirrors encoders[l]; it works at the size of encoder l's output
        self.decoders = nn.ModuleList()
        for level, w in enumerate(widths):
            size_l = cfg.input_size // 2 ** (level + 1)
            in_l = w if level == cfg.depth - 1 else 2 * w
            out_l = widths[level - 1] if level > 0 else widths[0]
            self.decoders.append(DecoderBlock(in_l, w, out_l, size_l, **opts))
        self.out_conv = _conv(widths[0], in_ch)

    def forward(self, x):
        s = self.cfg.input_size
        if x.shape[-2:] != (s, s):
            raise ShapeError(f"U-net built for {s}x{s} input, got {tuple(x.shape[-2:])}")
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
        h = self.decoders[-1](skips[-1])
        for level in range(self.cfg.depth - 2, -1, -1):
            h = self.decoders[level](torch.cat([h, skips[level]], dim=1))
        return x + self.out_conv(h)


class Generator(nn.Module):
    """Cascade of residual U-nets: ``unet2(unet1(lr))``."""

    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = (cfg or GeneratorConfig()).validate()
        self.unets = nn.ModuleList(ResidualUNet(self.cfg) for _ in range(self.cfg.n_unets))
        init_weights(self)
        for u in self.unets:
            # each U-net starts as the identity map through its global skip
            nn.init.zeros_(u.out_conv.weight)
            nn.init.zeros_(u.out_conv.bias)

    def forward(self, lr):
        squeeze = lr.dim() == 2
        x = lr[None, None] if squeeze else lr
        if x.dim() == 3:
            x = x[:, None]
        for u in self.unets:
            x = u(x)
        return x[0, 0] if squeeze else x


class Discriminator(nn.Module):
    """Seven-stage discriminator returning ``(logit, sixth_stage_features)``.

    Stages: 4x4/2 conv (``first_width`` maps), Leaky ReLU, four encoder blocks,
    3x3/1 conv to one map followed by global averaging.
    """

    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = (cfg or DiscriminatorConfig()).validate()
        c = self.cfg
        self.conv1 = nn.Conv2d(1, c.first_width, 4, stride=2, padding=1)
        size = c.input_size // 2
        blocks = []
        ch = c.first_width
        for w in c.widths:
            blocks.append(EncoderBlock(ch, w, size, c.bottleneck_ratio,
                                       c.use_attention, c.use_attention, True))
            ch, size = w, size // 2
        self.blocks = nn.ModuleList(blocks)
        self.conv7 = _conv(ch, 1)
        init_weights(self)

    def forward(self, img):
        x = img
        if x.dim() == 2:
            x = x[None, None]
        elif x.dim() == 3:
            x = x[:, None]
        s = self.cfg.input_size
        if x.shape[-2:] != (s, s):
            raise ShapeError(f"discriminator built for {s}x{s} input, got {tuple(x.shape[-2:])}")
        h = _act(self.conv1(x))
        for blk in self.blocks:
            h = blk(h)
        features = h
        logit = self.conv7(h).mean(dim=(1, 2, 3))
        return logit, features


def init_weights(module):
    """He-normal convolutions with zero bias; residual-branch output convs scaled by 0.1."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, a=LEAKY_SLOPE, nonlinearity="leaky_relu")
                if m.bias is not None:
                    m.bias.zero_()
        for m in module.modules():
            if isinstance(m, SRBlock):
                m.conv2.weight.mul_(0.1)
    return module


def zero_convolutions(module):
    """Zero every convolution weight and bias in ``module`` (in place)."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.zero_()
                if m.bias is not None:
                    m.bias.zero_()
    return module
