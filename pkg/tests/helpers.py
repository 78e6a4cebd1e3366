"""Independent oracles: central differences and scalar-loop reference computations."""

import math

import numpy as np
import torch


def central_difference(fn, tensor, eps=1e-6):
    """Full numerical gradient of scalar ``fn()`` w.r.t. ``tensor`` (perturbed in place)."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = float(fn())
            flat[i] = orig - eps
            minus = float(fn())
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(a, b):
    a = torch.as_tensor(a, dtype=torch.float64).flatten()
    b = torch.as_tensor(b, dtype=torch.float64).flatten()
    scale = max(b.norm().item(), 1e-12)
    return (a - b).norm().item() / scale


def check_full_gradient(fn, tensors, rtol=1e-4, eps=1e-6):
    """Compare autograd against central differences for every element of ``tensors``.

    Returns the worst relative error (vector-norm relative per tensor).
    """
    for t in tensors:
        t.grad = None
    out = fn()
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    worst = 0.0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g
        numeric = central_difference(fn, t, eps)
        err = relative_error(g, numeric)
        worst = max(worst, err)
        assert err <= rtol, f"gradient mismatch {err:.3e} > {rtol:.1e} for tensor {tuple(t.shape)}"
    return worst


def check_directional_gradient(fn, tensors, n_dirs=4, rtol=1e-3, eps=1e-6, seed=0):
    """Compare autograd directional derivatives with central differences along random directions."""
    gen = torch.Generator().manual_seed(seed)
    out = fn()
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        analytic = sum((g * d).sum().item() for g, d in zip(grads, dirs))
        with torch.no_grad():
            for t, d in zip(tensors, dirs):
                t.add_(eps * d)
            plus = float(fn())
            for t, d in zip(tensors, dirs):
                t.sub_(2 * eps * d)
            minus = float(fn())
            for t, d in zip(tensors, dirs):
                t.add_(eps * d)
        numeric = (plus - minus) / (2 * eps)
        err = abs(analytic - numeric) / max(abs(numeric), 1e-12)
        worst = max(worst, err)
        assert err <= rtol, f"directional derivative mismatch {err:.3e} > {rtol:.1e}"
    return worst


def conv2d_loop(x, k, padding):
    """Cross-correlation of (Ci, h, w) with (Co, Ci, kh, kw), zero padding, stride 1."""
    ci, h, w = x.shape
    co, _, kh, kw = k.shape
    xp = np.zeros((ci, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    oh, ow = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    out = np.zeros((co, oh, ow))
    for o in range(co):
        for i in range(oh):
            for j in range(ow):
                s = 0.0
                for c in range(ci):
                    for a in range(kh):
                        for b in range(kw):
                            s += k[o, c, a, b] * xp[c, i + a, j + b]
                out[o, i, j] = s
    return out


def cd_conv_loop(x, k, theta):
    """Central-difference convolution, y(p) = sum k x(p+w) - theta x(p) sum k, by loops."""
    pad = k.shape[-1] // 2
    out = conv2d_loop(x, k, pad)
    co, ci = k.shape[:2]
    for o in range(co):
        for c in range(ci):
            ksum = k[o, c].sum()
            out[o] -= theta * ksum * x[c]
    return out


def topk_softmax_scalar(logits, k):
    """Gate weights from a plain Python list of logits."""
    order = sorted(range(len(logits)), key=lambda n: -logits[n])[:k]
    top = max(logits[n] for n in order)
    exps = {n: math.exp(logits[n] - top) for n in order}
    total = sum(exps.values())
    return [exps[n] / total if n in exps else 0.0 for n in range(len(logits))]


def attention_loop(query, key, value, wq, bq, wk, bk, wv, bv, wo, bo, bias):
    """Single-head attention with projections, by scalar loops.

    ``query`` (nq, d), ``key``/``value`` (nk, d), weights (d, d) acting as
    ``x @ w.T + b``, ``bias`` (nq, nk) possibly containing ``-inf``.
    """
    nq, d = len(query), len(query[0])
    nk = len(key)

    def lin(x, w, b):
        return [[sum(w[o][i] * x[r][i] for i in range(d)) + b[o] for o in range(d)] for r in range(len(x))]

    q, k, v = lin(query, wq, bq), lin(key, wk, bk), lin(value, wv, bv)
    out = []
    weights = []
    for a in range(nq):
        scores = []
        for b in range(nk):
            s = sum(q[a][i] * k[b][i] for i in range(d)) / math.sqrt(d)
            scores.append(s + bias[a][b])
        top = max(scores)
        exps = [math.exp(s - top) if s != -math.inf else 0.0 for s in scores]
        total = sum(exps)
        row = [e / total for e in exps]
        weights.append(row)
        out.append([sum(row[b] * v[b][i] for b in range(nk)) for i in range(d)])
    return np.array(lin(out, wo, bo)), np.array(weights)


def auc_pairwise(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))
