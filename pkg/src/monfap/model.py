"""Full detector: backbone, mixture-of-noises module and unified predictor."""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .backbone import PyramidBackbone
from .fup import ForgeryAwareUnifiedPredictor
from .mone import MixtureOfNoises


@dataclass
class ModelConfig:
    base_channels: int = 16
    blocks_per_stage: int = 2
    top_k: int = 4
    w_im: float = 0.1
    theta: float = 0.7
    mask_threshold: float = 0.5
    heads: int = 0
    positional: bool = False
    use_noise: bool = True

    def validate(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.blocks_per_stage < 0:
            raise ValueError(f"blocks_per_stage must be >= 0, got {self.blocks_per_stage}")
        if not 1 <= self.top_k <= 4:
            raise ValueError(f"top_k must lie in [1, 4], got {self.top_k}")
        if self.w_im < 0:
            raise ValueError(f"w_im must be >= 0, got {self.w_im}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise ValueError(f"mask_threshold must lie in [0, 1], got {self.mask_threshold}")
        if self.heads < 0:
            raise ValueError(f"heads must be >= 0, got {self.heads}")
        return self


class MoNFAP(nn.Module):
    """``forward(images (B, 3, H, W)) -> PredictorOutput``.

    With ``use_noise=False`` the noise pyramid is replaced by zeros and the
    importance loss is 0, which is the predictor-only ablation.
    """

    def __init__(self, config=None, generator=None, **overrides):
        super().__init__()
        config = config or ModelConfig()
        if overrides:
            config = ModelConfig(**{**asdict(config), **overrides})
        self.config = config.validate()
        self.backbone = PyramidBackbone(config.base_channels, config.blocks_per_stage)
        self.mnm = MixtureOfNoises(
            self.backbone.channels, k=config.top_k, theta=config.theta, w_im=config.w_im
        )
        self.predictor = ForgeryAwareUnifiedPredictor(
            config.base_channels,
            mask_threshold=config.mask_threshold,
            heads=config.heads or None,
            positional=config.positional,
            generator=generator,
        )

    def forward(self, images, generator=None):
        pyramid = self.backbone(images)
        if self.config.use_noise:
            noise = self.mnm(pyramid, generator=generator)
            levels, mone_loss = noise.levels, noise.mone_loss
        else:
            levels = [torch.zeros_like(f) for f in pyramid]
            mone_loss = images.new_zeros(())
        return self.predictor(pyramid, levels, mone_loss)

    def project(self):
        """Re-impose the expert kernel constraints; returns the degenerate-kernel reset count."""
        return self.mnm.project()
