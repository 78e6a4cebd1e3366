import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from monfap.fup import PredictorOutput
from monfap.losses import downsample_masks, image_loss, total_loss, weighted_pixel_loss

from helpers import check_full_gradient


class TestImageLoss:
    @pytest.mark.parametrize("label", [0, 1])
    def test_uniform_logits(self, label):
        loss = image_loss(torch.zeros(1, 2), torch.tensor([label]))
        assert loss.item() == pytest.approx(math.log(2))

    def test_saturated(self):
        assert image_loss(torch.tensor([[20.0, -20.0]]), torch.tensor([0])).item() < 1e-15

    def test_matches_scalar_recomputation(self):
        logits = torch.randn(5, 2, dtype=torch.float64)
        labels = torch.tensor([0, 1, 1, 0, 1])
        expected = 0.0
        for row, y in zip(logits.tolist(), labels.tolist()):
            top = max(row)
            lse = top + math.log(sum(math.exp(v - top) for v in row))
            expected += lse - row[y]
        assert image_loss(logits, labels).item() == pytest.approx(expected / 5, rel=1e-12)

    def test_gradient(self):
        logits = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([0, 1, 1])
        check_full_gradient(lambda: image_loss(logits, labels), [logits])


def _ce_map(logits, target):
    """Per-sample mean pixel CE by scalar loops, for (2, h, w) or (1, h, w) logits."""
    c, h, w = logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            t = int(target[i, j])
            if c == 1:
                z = float(logits[0, i, j])
                p = 1 / (1 + math.exp(-z))
                total -= math.log(p) if t else math.log(1 - p)
            else:
                a, b = float(logits[0, i, j]), float(logits[1, i, j])
                m = max(a, b)
                lse = m + math.log(math.exp(a - m) + math.exp(b - m))
                total += lse - (b if t else a)
    return total / (h * w)


class TestPixelLoss:
    def test_matches_grouped_recomputation(self):
        logits = torch.randn(4, 2, 3, 3, dtype=torch.float64)
        gt = torch.zeros(4, 3, 3)
        gt[1, 0, :] = 1
        gt[3, 1:, 1:] = 1
        labels = torch.tensor([0, 1, 0, 1])
        ce = [_ce_map(logits[b], gt[b]) for b in range(4)]
        expected = (ce[0] + ce[2]) / 2 + 10 * (ce[1] + ce[3]) / 2
        assert weighted_pixel_loss(logits, gt, labels, 10.0).item() == pytest.approx(expected, rel=1e-12)

    def test_binary_variant(self):
        logits = torch.randn(2, 1, 3, 3, dtype=torch.float64)
        gt = torch.zeros(2, 3, 3)
        gt[1, 1, 1] = 1
        labels = torch.tensor([0, 1])
        expected = _ce_map(logits[0], gt[0]) + 5 * _ce_map(logits[1], gt[1])
        assert weighted_pixel_loss(logits, gt, labels, 5.0).item() == pytest.approx(expected, rel=1e-12)

    def test_only_genuine(self):
        logits = torch.randn(3, 2, 4, 4, dtype=torch.float64)
        gt = torch.zeros(3, 4, 4)
        labels = torch.zeros(3, dtype=torch.long)
        expected = sum(_ce_map(logits[b], gt[b]) for b in range(3)) / 3
        assert weighted_pixel_loss(logits, gt, labels, 10.0).item() == pytest.approx(expected, rel=1e-12)

    def test_perfect_predictions(self):
        gt = torch.zeros(2, 4, 4)
        gt[1, :2] = 1
        logits = torch.stack([(1 - gt) * 30 - gt * 30, gt * 30 - (1 - gt) * 30], dim=1).double()
        assert weighted_pixel_loss(logits, gt, torch.tensor([0, 1])).item() < 1e-10

    def test_downsamples_ground_truth_by_nearest(self):
        gt = torch.zeros(1, 8, 8)
        gt[0, 4:, 4:] = 1
        small = downsample_masks(gt, (2, 2))
        assert small.tolist() == [[[0.0, 0.0], [0.0, 1.0]]]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 1000), lam=st.floats(0.5, 50))
    def test_monotone_in_lambda(self, seed, lam):
        gen = torch.Generator().manual_seed(seed)
        logits = torch.randn(3, 2, 4, 4, generator=gen, dtype=torch.float64)
        gt = torch.zeros(3, 4, 4)
        gt[2, :2, :2] = 1
        labels = torch.tensor([0, 0, 1])
        low = weighted_pixel_loss(logits, gt, labels, lam).item()
        high = weighted_pixel_loss(logits, gt, labels, lam * 1.5).item()
        assert high > low

    def test_gradient(self):
        logits = torch.randn(2, 2, 3, 3, dtype=torch.float64, requires_grad=True)
        aux = torch.randn(2, 1, 3, 3, dtype=torch.float64, requires_grad=True)
        gt = torch.zeros(2, 3, 3)
        gt[1, 1:, :2] = 1
        labels = torch.tensor([0, 1])
        check_full_gradient(lambda: weighted_pixel_loss(logits, gt, labels), [logits])
        check_full_gradient(lambda: weighted_pixel_loss(aux, gt, labels), [aux])


def _output(y, m, aux, mone):
    return PredictorOutput(y, m, aux, mone)


class TestTotalLoss:
    def _zeroish(self):
        return _output(
            torch.tensor([[30.0, -30.0]], dtype=torch.float64),
            torch.tensor([30.0, -30.0], dtype=torch.float64).view(1, 2, 1, 1).expand(1, 2, 2, 2),
            [torch.full((1, 1, 1, 1), -60.0, dtype=torch.float64)] * 4,
            torch.tensor(0.0, dtype=torch.float64),
        )

    def test_zero_components(self):
        bundle = total_loss(self._zeroish(), torch.zeros(1, 8, 8), torch.tensor([0]))
        assert bundle.total.item() == pytest.approx(0.0, abs=1e-12)

    def test_mone_only(self):
        out = self._zeroish()
        out.mone_loss = torch.tensor(0.3, dtype=torch.float64)
        bundle = total_loss(out, torch.zeros(1, 8, 8), torch.tensor([0]))
        assert bundle.total.item() == pytest.approx(0.3, abs=1e-12)

    def test_sum_identity_exact(self):
        gen = torch.Generator().manual_seed(1)
        out = _output(
            torch.randn(3, 2, generator=gen, dtype=torch.float64),
            torch.randn(3, 2, 4, 4, generator=gen, dtype=torch.float64),
            [torch.randn(3, 1, s, s, generator=gen, dtype=torch.float64) for s in (1, 2, 4, 4)],
            torch.tensor(0.07, dtype=torch.float64),
        )
        gt = torch.zeros(3, 16, 16)
        gt[1, 2:9, 3:7] = 1
        labels = torch.tensor([0, 1, 0])
        b = total_loss(out, gt, labels, 10.0)
        assert b.total.item() == b.image.item() + b.pixel.item() + b.aux.item() + b.mone.item()
        aux = sum(weighted_pixel_loss(a, gt, labels, 10.0).item() for a in out.aux_logits) / 4
        assert b.aux.item() == pytest.approx(aux, rel=1e-12)
        assert b.pixel.item() == pytest.approx(weighted_pixel_loss(out.M, gt, labels).item(), rel=1e-12)
