"""Token-learning predictor over the multi-scale pyramid."""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fat import ForgeryAwareTransformer, default_heads


@dataclass
class PredictorOutput:
    """``Y`` (B, 2) image logits, ``M`` (B, 2, H/4, W/4) mask logits."""

    Y: torch.Tensor
    M: torch.Tensor
    aux_logits: list
    mone_loss: torch.Tensor
    masks: list = field(default_factory=list)
    strides: list = field(default_factory=list)


def init_tokens(base_channels, generator=None, dtype=None):
    """Initial (real, fake) token pair of width ``8 * base_channels``."""
    if base_channels < 1:
        raise ValueError(f"base_channels must be >= 1, got {base_channels}")
    width = 8 * base_channels
    tokens = torch.randn(2, width, generator=generator, dtype=torch.float64) / width**0.5
    return tokens.to(dtype or torch.get_default_dtype())


def mask_logits(tokens, features):
    """Per-token dot product with every spatial feature vector: (B, 2, D) x (B, D, h, w) -> (B, 2, h, w)."""
    return torch.einsum("bcd,bdhw->bchw", tokens, features)


class AuxLocalizer(nn.Module):
    """1x1 conv to a single logit map plus its binarized attention mask."""

    def __init__(self, channels, threshold=0.5):
        super().__init__()
        self.threshold = threshold
        self.proj = nn.Conv2d(channels, 1, 1)

    def forward(self, features):
        logits = self.proj(features)
        with torch.no_grad():
            mask = torch.sigmoid(logits[:, 0]) >= self.threshold
        return logits, mask


class Upsampler(nn.Module):
    """2x bilinear upsampling followed by a 1x1 conv halving the channels."""

    def __init__(self, channels):
        super().__init__()
        self.proj = nn.Conv2d(channels, channels // 2, 1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.proj(x)


class ForgeryAwareUnifiedPredictor(nn.Module):
    """Four FAT stages at strides 32, 16, 8, 4 with noise enhancement.

    Stage ``i`` runs at width ``8C / 2**i``. The final tokens give the image
    logits through an MLP on their mean, and their dot products with the
    final features give the two-channel mask logits.
    """

    def __init__(self, base_channels=16, mask_threshold=0.5, heads=None, positional=False,
                 generator=None):
        super().__init__()
        self.base_channels = base_channels
        widths = [8 * base_channels // 2**i for i in range(4)]
        self.widths = widths
        self.tokens = nn.Parameter(init_tokens(base_channels, generator))
        self.stages = nn.ModuleList(
            [
                ForgeryAwareTransformer(w, heads=heads or default_heads(w), positional=positional)
                for w in widths
            ]
        )
        self.aux = nn.ModuleList([AuxLocalizer(w, mask_threshold) for w in widths])
        self.token_mlps = nn.ModuleList([nn.Linear(widths[i], widths[i + 1]) for i in range(3)])
        self.upsamplers = nn.ModuleList([Upsampler(widths[i]) for i in range(3)])
        final = widths[-1]
        self.head = nn.Sequential(nn.Linear(final, final), nn.GELU(), nn.Linear(final, 2))

    @property
    def mask_threshold(self):
        return self.aux[0].threshold

    @mask_threshold.setter
    def mask_threshold(self, value):
        for aux in self.aux:
            aux.threshold = value

    def forward(self, pyramid, noise_levels, mone_loss=None):
        f3 = pyramid[3]
        batch = f3.shape[0]
        tokens = self.tokens.unsqueeze(0).expand(batch, -1, -1)
        feats = f3 + noise_levels[3]
        aux_logits, masks, strides = [], [], []
        image_height = f3.shape[-2] * 32
        for i, stage in enumerate(self.stages):
            if i > 0:
                tokens = self.token_mlps[i - 1](tokens)
                feats = self.upsamplers[i - 1](feats) + noise_levels[3 - i]
            logits, mask = self.aux[i](feats)
            aux_logits.append(logits)
            masks.append(mask)
            strides.append(image_height // feats.shape[-2])
            tokens, feats = stage(tokens, feats, mask)
            if not (torch.isfinite(tokens).all() and torch.isfinite(feats).all()):
                raise FloatingPointError(
                    f"non-finite activations after stage {i} (width {self.widths[i]}, "
                    f"features {tuple(feats.shape)})"
                )
        y = self.head(tokens.mean(dim=1))
        m = mask_logits(tokens, feats)
        if mone_loss is None:
            mone_loss = y.new_zeros(())
        return PredictorOutput(y, m, aux_logits, mone_loss, masks, strides)
