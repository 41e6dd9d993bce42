"""Spatial and channel gating ("full attention") for NCHW feature maps.

Both gates are sigmoid masks computed from a pooled summary of the input and
multiplied back onto it, followed by a residual add::

    spatial:  g_s = sigmoid(W_s @ flatten(mean_c(x)) + b_s)     (H*W values)
    channel:  g_c = sigmoid(W_c @ mean_hw(x) + b_c)             (C values)
    out       = x + g * x

``W_s`` is a dense (H*W, H*W) matrix, so a spatial gate is bound to one
feature-map size.
"""

import math

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ShapeError

__all__ = [
    "spatial_gate",
    "channel_gate",
    "full_attention",
    "SpatialGate",
    "ChannelGate",
    "FullAttention",
    "MAX_SPATIAL_POSITIONS",
]

# Dense spatial weights grow as (H*W)^2; 64x64 maps are the largest allowed.
MAX_SPATIAL_POSITIONS = 4096


def spatial_gate(f_in, weight, bias, residual=True):
    """Apply the spatial gate to ``f_in`` of shape (B, C, H, W)."""
    b, _, h, w = f_in.shape
    n = h * w
    if weight.shape != (n, n) or bias.shape != (n,):
        raise ShapeError(
            f"spatial gate params {tuple(weight.shape)}/{tuple(bias.shape)} "
            f"do not match {h}x{w} feature map"
        )
    f_s = f_in.mean(dim=1).reshape(b, n)
    g = torch.sigmoid(F.linear(f_s, weight, bias)).reshape(b, 1, h, w)
    out = g * f_in
    return f_in + out if residual else out


def channel_gate(f_pro, weight, bias, residual=True):
    """Apply the channel gate to ``f_pro`` of shape (B, C, H, W)."""
    c = f_pro.shape[1]
    if weight.shape != (c, c) or bias.shape != (c,):
        raise ShapeError(
            f"channel gate params {tuple(weight.shape)}/{tuple(bias.shape)} "
            f"do not match {c} channels"
        )
    f_c = f_pro.mean(dim=(2, 3))
    g = torch.sigmoid(F.linear(f_c, weight, bias))[:, :, None, None]
    out = g * f_pro
    return f_pro + out if residual else out


def full_attention(f_in, spatial, channel, residual=True):
    """Spatial gate followed by channel gate; ``spatial``/``channel`` are (weight, bias)."""
    f_pro = spatial_gate(f_in, *spatial, residual=residual)
    return channel_gate(f_pro, *channel, residual=residual)


def _init_linear(weight, bias):
    bound = 1.0 / math.sqrt(weight.shape[1])
    nn.init.uniform_(weight, -bound, bound)
    nn.init.zeros_(bias)


class SpatialGate(nn.Module):
    def __init__(self, height, width, residual=True):
        super().__init__()
        n = height * width
        if n > MAX_SPATIAL_POSITIONS:
            raise ShapeError(
                f"spatial gate on {height}x{width} exceeds {MAX_SPATIAL_POSITIONS} positions"
            )
        self.height, self.width = height, width
        self.residual = residual
        self.weight = nn.Parameter(torch.empty(n, n))
        self.bias = nn.Parameter(torch.empty(n))
        _init_linear(self.weight, self.bias)

    def forward(self, x):
        return spatial_gate(x, self.weight, self.bias, self.residual)

    def extra_repr(self):
        return f"{self.height}x{self.width}, residual={self.residual}"


class ChannelGate(nn.Module):
    def __init__(self, channels, residual=True):
        super().__init__()
        self.channels = channels
        self.residual = residual
        self.weight = nn.Parameter(torch.empty(channels, channels))
        self.bias = nn.Parameter(torch.empty(channels))
        _init_linear(self.weight, self.bias)

    def forward(self, x):
        return channel_gate(x, self.weight, self.bias, self.residual)

    def extra_repr(self):
        return f"{self.channels}, residual={self.residual}"


class FullAttention(nn.Module):
    """Spatial then channel gating. Either stage can be switched off.

    A disabled stage is the identity map and owns no parameters.
    """

    def __init__(self, channels, height, width, spatial=True, channel=True, residual=True):
        super().__init__()
        self.spatial = SpatialGate(height, width, residual) if spatial else None
        self.channel = ChannelGate(channels, residual) if channel else None

    def forward(self, x):
        if self.spatial is not None:
            x = self.spatial(x)
        if self.channel is not None:
            x = self.channel(x)
        return x
