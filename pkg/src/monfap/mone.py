"""Mixture of noise extractors with noisy top-k gating."""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .noise_experts import build_experts

N_EXPERTS = 4


@dataclass
class GateDecision:
    """Per-sample routing: ``weights`` and ``logits`` and ``noise`` are (B, 4)."""

    weights: torch.Tensor
    logits: torch.Tensor
    noise: torch.Tensor


@dataclass
class NoisePyramid:
    levels: list
    importance_losses: list
    decisions: list = field(default_factory=list)

    @property
    def mone_loss(self):
        return sum(self.importance_losses)


def top_k_softmax(logits, k):
    """Softmax over the ``k`` largest entries per row; the rest get exactly 0."""
    n = logits.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if k == n:
        return torch.softmax(logits, dim=-1)
    _, index = logits.topk(k, dim=-1)
    keep = torch.zeros_like(logits, dtype=torch.bool).scatter(-1, index, True)
    masked = logits.masked_fill(~keep, float("-inf"))
    return torch.softmax(masked, dim=-1)


class NoisyTopKGate(nn.Module):
    """Gate driven by globally pooled features.

    ``H = F_g(avg x) + SN() * softplus(F_noise(avg x))`` while training, and
    ``H = F_g(avg x)`` at evaluation; weights are ``softmax(topk(H, k))``.
    """

    def __init__(self, channels, k=N_EXPERTS, n_experts=N_EXPERTS):
        super().__init__()
        if not 1 <= k <= n_experts:
            raise ValueError(f"k must lie in [1, {n_experts}], got {k}")
        self.k = k
        self.w_gate = nn.Linear(channels, n_experts)
        self.w_noise = nn.Linear(channels, n_experts)
        nn.init.normal_(self.w_gate.weight, 0.0, 0.02)
        nn.init.zeros_(self.w_gate.bias)
        nn.init.zeros_(self.w_noise.weight)
        nn.init.zeros_(self.w_noise.bias)

    def forward(self, x, generator=None, noise=None):
        pooled = x.mean(dim=(2, 3))
        clean = self.w_gate(pooled)
        if self.training:
            if noise is None:
                noise = torch.randn(
                    clean.shape, generator=generator, dtype=clean.dtype, device=clean.device
                )
            logits = clean + noise * F.softplus(self.w_noise(pooled))
        else:
            noise = torch.zeros_like(clean)
            logits = clean
        return GateDecision(top_k_softmax(logits, self.k), logits, noise)


def importance_loss(weights, w_im):
    """Squared coefficient of variation of per-expert summed gate weights, times ``w_im``.

    ``weights`` is (B, n_experts). Uses the population standard deviation;
    returns 0 when the summed importance is all zero.
    """
    importance = weights.sum(dim=0)
    mean = importance.mean()
    if mean == 0:
        return importance.sum() * 0.0
    std = importance.std(unbiased=False)
    return w_im * (std / mean) ** 2


class MoNE(nn.Module):
    """``y = sum_n G_n(x) NE_n(x) + SE(x)`` for one pyramid level."""

    def __init__(self, channels, k=N_EXPERTS, theta=0.7):
        super().__init__()
        self.channels = channels
        self.experts = build_experts(channels, theta=theta)
        self.shared = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.normal_(self.shared.weight, 0.0, (channels * 9) ** -0.5)
        nn.init.zeros_(self.shared.bias)
        self.gate = NoisyTopKGate(channels, k=k)

    def forward(self, x, generator=None, noise=None, decision=None):
        if decision is None:
            decision = self.gate(x, generator=generator, noise=noise)
        gates = decision.weights
        y = self.shared(x)
        for n, expert in enumerate(self.experts):
            g = gates[:, n]
            # zero-weight experts contribute nothing; skip evaluating them
            if not torch.any(g != 0):
                continue
            y = y + g[:, None, None, None] * expert(x)
        return y, decision

    def project(self):
        return sum(expert.project() for expert in self.experts)


class MixtureOfNoises(nn.Module):
    """One independent MoNE per pyramid level, producing the noise pyramid."""

    def __init__(self, channels, k=N_EXPERTS, theta=0.7, w_im=0.1):
        super().__init__()
        if w_im < 0:
            raise ValueError(f"w_im must be non-negative, got {w_im}")
        self.w_im = w_im
        self.levels = nn.ModuleList([MoNE(ch, k=k, theta=theta) for ch in channels])

    def forward(self, pyramid, generator=None):
        if len(pyramid) != len(self.levels):
            raise ValueError(f"expected {len(self.levels)} levels, got {len(pyramid)}")
        outputs, losses, decisions = [], [], []
        for fmap, mone in zip(pyramid, self.levels):
            r, decision = mone(fmap, generator=generator)
            outputs.append(r)
            losses.append(importance_loss(decision.weights, self.w_im))
            decisions.append(decision)
        return NoisePyramid(outputs, losses, decisions)

    def project(self):
        return sum(mone.project() for mone in self.levels)
