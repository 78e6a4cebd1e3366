"""Multi-face forgery detection and localization with noise-expert mixtures."""

from .estimator import MoNFAPDetector
from .model import ModelConfig, MoNFAP

__all__ = ["MoNFAP", "MoNFAPDetector", "ModelConfig"]
__version__ = "0.1.0"
