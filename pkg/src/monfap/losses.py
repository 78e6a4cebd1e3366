"""Multi-task training objective."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

GENUINE, MANIPULATED = 0, 1


@dataclass
class LossBundle:
    image: torch.Tensor
    pixel: torch.Tensor
    aux: torch.Tensor
    mone: torch.Tensor
    total: torch.Tensor
    lam: float

    def as_dict(self):
        return {
            "loss": self.total.item(),
            "loss_img": self.image.item(),
            "loss_pix": self.pixel.item(),
            "loss_aux": self.aux.item(),
            "loss_mone": float(self.mone.item() if torch.is_tensor(self.mone) else self.mone),
        }


def image_loss(logits, labels):
    return F.cross_entropy(logits, labels.long())


def downsample_masks(masks, size):
    """Nearest-neighbour resize of (B, H, W) binary masks to ``size``."""
    masks = masks.float().unsqueeze(1)
    return F.interpolate(masks, size=size, mode="nearest")[:, 0]


def per_sample_pixel_ce(logits, target):
    """Mean per-pixel cross-entropy for each sample.

    ``logits`` is (B, 2, h, w) class logits or (B, 1, h, w) binary logits;
    ``target`` is (B, h, w) in {0, 1}.
    """
    if logits.shape[1] == 1:
        ce = F.binary_cross_entropy_with_logits(
            logits[:, 0], target.to(logits.dtype), reduction="none"
        )
    else:
        ce = F.cross_entropy(logits, target.long(), reduction="none")
    return ce.flatten(1).mean(dim=1)


def weighted_pixel_loss(logits, gt_masks, labels, lam=10.0):
    """``CE_genuine + lam * CE_manipulated`` with sample-level group means.

    ``gt_masks`` may be at full resolution; they are resized to the logits'
    grid by nearest neighbour. An empty group contributes 0.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if gt_masks.shape[-2:] != logits.shape[-2:]:
        gt_masks = downsample_masks(gt_masks, logits.shape[-2:])
    ce = per_sample_pixel_ce(logits, gt_masks)
    labels = labels.long()
    fake = labels == MANIPULATED
    real = ~fake
    zero = ce.sum() * 0.0
    ce_real = ce[real].mean() if real.any() else zero
    ce_fake = ce[fake].mean() if fake.any() else zero
    return ce_real + lam * ce_fake


def total_loss(output, gt_masks, labels, lam=10.0):
    """Assemble the four-term objective from a ``PredictorOutput``."""
    l_img = image_loss(output.Y, labels)
    l_pix = weighted_pixel_loss(output.M, gt_masks, labels, lam)
    aux_terms = [weighted_pixel_loss(a, gt_masks, labels, lam) for a in output.aux_logits]
    l_aux = sum(aux_terms) / len(aux_terms)
    l_mone = output.mone_loss
    return LossBundle(l_img, l_pix, l_aux, l_mone, l_img + l_pix + l_aux + l_mone, lam)
