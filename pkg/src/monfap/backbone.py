"""Small four-scale convolutional encoder.

Stand-in for the large pretrained backbones: a stride-4 stem followed by
three stride-2 stages, producing feature maps at strides (4, 8, 16, 32)
with widths (C, 2C, 4C, 8C).
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

STRIDES = (4, 8, 16, 32)


def _group_count(channels):
    for groups in (4, 2, 1):
        if channels % groups == 0:
            return groups
    return 1


def fan_in_init_(conv):
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    nn.init.normal_(conv.weight, 0.0, math.sqrt(2.0 / fan_in))
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)


class PreActBlock(nn.Module):
    """Residual 3x3 block with normalization applied before the activation."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.GroupNorm(_group_count(channels), channels)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        fan_in_init_(self.conv)

    def forward(self, x):
        return x + self.conv(F.gelu(self.norm(x)))


class PyramidBackbone(nn.Module):
    """Encoder returning ``[f0, f1, f2, f3]``.

    Parameters
    ----------
    base_channels : int
        Width ``C`` of the stride-4 level; level ``i`` has ``C * 2**i`` channels.
    blocks_per_stage : int
        Number of residual blocks after each downsampling step.
    """

    def __init__(self, base_channels=16, blocks_per_stage=2):
        super().__init__()
        if base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {base_channels}")
        self.base_channels = base_channels
        widths = [base_channels * 2**i for i in range(4)]
        self.stem = nn.Conv2d(3, widths[0], kernel_size=4, stride=4)
        fan_in_init_(self.stem)
        self.downsamples = nn.ModuleList()
        self.stages = nn.ModuleList()
        for i, width in enumerate(widths):
            if i > 0:
                down = nn.Conv2d(widths[i - 1], width, kernel_size=2, stride=2)
                fan_in_init_(down)
                self.downsamples.append(down)
            self.stages.append(
                nn.Sequential(*[PreActBlock(width) for _ in range(blocks_per_stage)])
            )

    @property
    def channels(self):
        return tuple(self.base_channels * 2**i for i in range(4))

    def forward(self, image):
        if image.dim() != 4 or image.shape[1] != 3:
            raise ValueError(f"expected a (B, 3, H, W) batch, got {tuple(image.shape)}")
        height, width = image.shape[-2:]
        if height % 32 or width % 32:
            raise ValueError(
                f"image height and width must be divisible by 32, got {height}x{width}"
            )
        levels = []
        x = self.stem(image)
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.downsamples[i - 1](x)
            x = stage(x)
            levels.append(x)
        return levels
