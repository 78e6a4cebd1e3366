"""Forgery-aware transformer layer.

Two learnable queries (index 0 = real, index 1 = fake) interact with a
flattened feature map. Token-to-image cross-attention is masked so the fake
token only sees pixels the auxiliary localizer marks as forged and the real
token only sees the rest.
"""

import logging
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)

REAL, FAKE = 0, 1


def default_heads(width):
    heads = 8 if width >= 64 else max(1, width // 8)
    while width % heads:
        heads -= 1
    return heads


def build_attention_bias(mask, role):
    """Additive bias (B, h*w) for one token from a binary (B, h, w) mask.

    Admissible positions get 0 and the rest ``-inf``; a token whose
    admissible region is empty falls back to an all-zero bias.
    """
    grid = mask.flatten(1).bool()
    allowed = grid if role == FAKE else ~grid
    bias = torch.zeros(grid.shape, dtype=torch.get_default_dtype(), device=mask.device)
    bias = bias.masked_fill(~allowed, float("-inf"))
    empty = ~allowed.any(dim=1)
    if empty.any():
        logger.debug("empty attention region for %d sample(s), role %d", int(empty.sum()), role)
        bias[empty] = 0.0
    return bias


def token_attention_bias(mask, dtype=None):
    """Stacked (B, 2, h*w) bias for the (real, fake) token pair."""
    bias = torch.stack([build_attention_bias(mask, REAL), build_attention_bias(mask, FAKE)], 1)
    return bias if dtype is None else bias.to(dtype)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with an optional additive bias.

    ``bias`` broadcasts against (B, Nq, Nk). Returns the projected output and
    the (B, heads, Nq, Nk) attention weights.
    """

    def __init__(self, width, heads=None):
        super().__init__()
        self.width = width
        self.heads = heads or default_heads(width)
        if width % self.heads:
            raise ValueError(f"width {width} not divisible by {self.heads} heads")
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, query, key, value, bias=None):
        b, nq, d = query.shape
        nk = key.shape[1]
        hd = d // self.heads
        q = self.q_proj(query).view(b, nq, self.heads, hd).transpose(1, 2)
        k = self.k_proj(key).view(b, nk, self.heads, hd).transpose(1, 2)
        v = self.v_proj(value).view(b, nk, self.heads, hd).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(hd)
        if bias is not None:
            scores = scores + bias.unsqueeze(1)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, nq, d)
        return self.out_proj(out), attn


def masked_attention(attention, tokens, features, bias):
    """Tokens (B, 2, D) attend over flattened features (B, L, D) under ``bias`` (B, 2, L)."""
    return attention(tokens, features, features, bias)


class FeedForward(nn.Sequential):
    def __init__(self, width, expansion=4):
        super().__init__(
            nn.Linear(width, width * expansion), nn.GELU(), nn.Linear(width * expansion, width)
        )


def sine_positions(h, w, width, dtype=None, device=None):
    """2-D sinusoidal encoding, (h*w, width)."""
    quarter = max(1, width // 4)
    freq = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys = torch.arange(h, dtype=torch.float64)[:, None] * freq
    xs = torch.arange(w, dtype=torch.float64)[:, None] * freq
    grid = torch.cat(
        [
            ys.sin()[:, None, :].expand(h, w, quarter),
            ys.cos()[:, None, :].expand(h, w, quarter),
            xs.sin()[None, :, :].expand(h, w, quarter),
            xs.cos()[None, :, :].expand(h, w, quarter),
        ],
        dim=-1,
    ).reshape(h * w, -1)
    out = torch.zeros(h * w, width, dtype=torch.float64)
    n = min(width, grid.shape[1])
    out[:, :n] = grid[:, :n]
    return out.to(dtype=dtype or torch.get_default_dtype(), device=device)


class FATBlock(nn.Module):
    """One repeat: self-attn, masked cross-attn, token FFN, image-to-token attn, feature FFN."""

    def __init__(self, width, heads=None):
        super().__init__()
        self.norm_self = nn.LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, heads)
        self.norm_cross_t = nn.LayerNorm(width)
        self.norm_cross_f = nn.LayerNorm(width)
        self.cross_attn = MultiHeadAttention(width, heads)
        self.norm_ffn_t = nn.LayerNorm(width)
        self.ffn_t = FeedForward(width)
        self.norm_img_f = nn.LayerNorm(width)
        self.norm_img_t = nn.LayerNorm(width)
        self.img_attn = MultiHeadAttention(width, heads)
        self.norm_ffn_f = nn.LayerNorm(width)
        self.ffn_f = FeedForward(width)

    def forward(self, tokens, feats, bias, pos=None):
        t = self.norm_self(tokens)
        tokens = tokens + self.self_attn(t, t, t)[0]
        f = self.norm_cross_f(feats)
        tokens = tokens + self.cross_attn(
            self.norm_cross_t(tokens), f if pos is None else f + pos, f, bias
        )[0]
        tokens = tokens + self.ffn_t(self.norm_ffn_t(tokens))
        f = self.norm_img_f(feats)
        t = self.norm_img_t(tokens)
        feats = feats + self.img_attn(f if pos is None else f + pos, t, t)[0]
        feats = feats + self.ffn_f(self.norm_ffn_f(feats))
        return tokens, feats


class ForgeryAwareTransformer(nn.Module):
    """Two ``FATBlock`` repeats followed by a final masked cross-attention.

    ``forward(tokens (B, 2, D), features (B, D, h, w), mask (B, h, w))``
    returns updated ``(tokens, features)`` with the same shapes.
    """

    def __init__(self, width, heads=None, repeats=2, positional=False):
        super().__init__()
        self.width = width
        self.positional = positional
        self.blocks = nn.ModuleList([FATBlock(width, heads) for _ in range(repeats)])
        self.norm_final_t = nn.LayerNorm(width)
        self.norm_final_f = nn.LayerNorm(width)
        self.final_attn = MultiHeadAttention(width, heads)

    def forward(self, tokens, features, mask):
        b, d, h, w = features.shape
        if tokens.shape != (b, 2, d):
            raise ValueError(
                f"tokens {tuple(tokens.shape)} do not match features {tuple(features.shape)}"
            )
        if mask.shape != (b, h, w):
            raise ValueError(f"mask {tuple(mask.shape)} does not match features {(b, h, w)}")
        feats = features.flatten(2).transpose(1, 2)
        bias = token_attention_bias(mask, dtype=feats.dtype)
        pos = None
        if self.positional:
            pos = sine_positions(h, w, d, dtype=feats.dtype, device=feats.device)
        for block in self.blocks:
            tokens, feats = block(tokens, feats, bias, pos)
        f = self.norm_final_f(feats)
        tokens = tokens + self.final_attn(
            self.norm_final_t(tokens), f if pos is None else f + pos, f, bias
        )[0]
        return tokens, feats.transpose(1, 2).reshape(b, d, h, w)
