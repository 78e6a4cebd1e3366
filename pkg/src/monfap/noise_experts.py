"""Noise-residual convolutions used as experts.

All four operate on ``(B, Ch, h, w)`` feature maps and preserve the shape:

* ``HFConv``    trainable 3x3 high-pass, every 2-D kernel slice zero-sum.
* ``SRMConv``   fixed depthwise 5x5 rich-model residual filters.
* ``BayarConv`` 5x5 constrained convolution (center -1, others sum to 1).
* ``CDConv``    3x3 central-difference convolution.

The constrained kernels are maintained by projection after each optimizer
step (``project()``), not by reparameterization.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

EXPERT_KINDS = ("HF", "SRM", "BAYAR", "CD")

SRM_KERNELS = (
    torch.tensor(
        [
            [0, 0, 0, 0, 0],
            [0, -1, 2, -1, 0],
            [0, 2, -4, 2, 0],
            [0, -1, 2, -1, 0],
            [0, 0, 0, 0, 0],
        ],
        dtype=torch.float64,
    )
    / 4.0,
    torch.tensor(
        [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [2, -6, 8, -6, 2],
            [-1, 2, -2, 2, -1],
        ],
        dtype=torch.float64,
    )
    / 12.0,
    torch.tensor(
        [
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
            [0, 1, -2, 1, 0],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
        ],
        dtype=torch.float64,
    )
    / 2.0,
)

# Projections leave a kernel untouched when it already satisfies the
# constraint to within this many ulps per weight, which makes them exactly
# idempotent in floating point.
_ULP_SLACK = 8


def _check_channels(module, x):
    if x.dim() != 4 or x.shape[1] != module.channels:
        raise ValueError(
            f"{type(module).__name__} expects (B, {module.channels}, h, w), got {tuple(x.shape)}"
        )


def _fan_in_normal(weight):
    fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
    nn.init.normal_(weight, 0.0, 1.0 / math.sqrt(fan_in))


def srm_weight(channels, dtype=torch.float64):
    """Depthwise SRM bank with the three canonical kernels tiled over channels.

    Kept in float64 so each kernel sums to zero well below float32 resolution;
    ``SRMConv`` casts to the input dtype at call time.
    """
    return torch.stack([SRM_KERNELS[c % 3] for c in range(channels)]).unsqueeze(1).to(dtype)


def bayar_project_(weight):
    """Project every 2-D slice in place: center -1, non-center weights sum to 1.

    Slices whose non-center sum is zero cannot be rescaled; they are reset to
    the uniform kernel. Returns the number of such resets.
    """
    k = weight.shape[-1]
    center = k // 2
    with torch.no_grad():
        flat = weight.view(-1, k * k)
        mask = torch.ones(k * k, dtype=torch.bool, device=weight.device)
        mask[center * k + center] = False
        others = flat[:, mask]
        total = others.sum(dim=1, keepdim=True)
        tol = _ULP_SLACK * torch.finfo(weight.dtype).eps * others.abs().sum(dim=1, keepdim=True)
        done = ((total - 1).abs() <= tol).squeeze(1) & (flat[:, center * k + center] == -1)
        degenerate = total.squeeze(1) == 0
        scaled = others / torch.where(total == 0, torch.ones_like(total), total)
        scaled[degenerate] = 1.0 / (k * k - 1)
        others = torch.where(done.unsqueeze(1), others, scaled)
        flat[:, mask] = others
        flat[:, center * k + center] = -1.0
    return int(degenerate.sum())


def zero_sum_project_(weight):
    """Subtract its mean from every 2-D kernel slice in place."""
    k2 = weight.shape[-1] * weight.shape[-2]
    with torch.no_grad():
        flat = weight.view(-1, k2)
        mean = flat.mean(dim=1, keepdim=True)
        scale = flat.abs().amax(dim=1, keepdim=True)
        tol = _ULP_SLACK * torch.finfo(weight.dtype).eps * scale
        flat.sub_(torch.where(mean.abs() <= tol, torch.zeros_like(mean), mean))


class SRMConv(nn.Module):
    trainable = False

    def __init__(self, channels):
        super().__init__()
        self.channels = channels
        self.register_buffer("weight", srm_weight(channels))

    def forward(self, x):
        _check_channels(self, x)
        return F.conv2d(x, self.weight.to(x.dtype), padding=2, groups=self.channels)

    def project(self):
        return 0


class BayarConv(nn.Module):
    trainable = True

    def __init__(self, channels, kernel_size=5):
        super().__init__()
        self.channels = channels
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size, kernel_size))
        # positive init keeps the non-center sums well away from zero
        nn.init.uniform_(self.weight, 0.0, 1.0)
        self.project()

    def forward(self, x):
        _check_channels(self, x)
        return F.conv2d(x, self.weight, padding=self.weight.shape[-1] // 2)

    def project(self):
        return bayar_project_(self.weight)


class HFConv(nn.Module):
    trainable = True

    def __init__(self, channels, kernel_size=3):
        super().__init__()
        self.channels = channels
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size, kernel_size))
        _fan_in_normal(self.weight)
        self.project()

    def forward(self, x):
        _check_channels(self, x)
        return F.conv2d(x, self.weight, padding=self.weight.shape[-1] // 2)

    def project(self):
        zero_sum_project_(self.weight)
        return 0


class CDConv(nn.Module):
    """Central-difference convolution.

    ``y(p) = sum_w k(w) x(p + w) - theta * x(p) * sum_w k(w)``; ``theta = 0``
    recovers the plain convolution.
    """

    trainable = True

    def __init__(self, channels, kernel_size=3, theta=0.7):
        super().__init__()
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {theta}")
        self.channels = channels
        self.theta = theta
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size, kernel_size))
        _fan_in_normal(self.weight)

    def forward(self, x):
        _check_channels(self, x)
        out = F.conv2d(x, self.weight, padding=self.weight.shape[-1] // 2)
        if self.theta == 0:
            return out
        kernel_sum = self.weight.sum(dim=(2, 3), keepdim=True)
        return out - self.theta * F.conv2d(x, kernel_sum)

    def project(self):
        return 0


def build_experts(channels, theta=0.7):
    """The four experts in routing order (HF, SRM, BAYAR, CD)."""
    return nn.ModuleList(
        [HFConv(channels), SRMConv(channels), BayarConv(channels), CDConv(channels, theta=theta)]
    )
