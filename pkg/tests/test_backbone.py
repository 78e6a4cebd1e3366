import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from monfap.backbone import PyramidBackbone

from helpers import check_directional_gradient


@pytest.mark.parametrize(
    "size, c, expected",
    [
        (512, 16, [(16, 128, 128), (32, 64, 64), (64, 32, 32), (128, 16, 16)]),
        (64, 8, [(8, 16, 16), (16, 8, 8), (32, 4, 4), (64, 2, 2)]),
    ],
)
def test_pyramid_shapes(size, c, expected):
    net = PyramidBackbone(c).eval()
    with torch.no_grad():
        levels = net(torch.rand(1, 3, size, size))
    assert [tuple(f.shape[1:]) for f in levels] == expected


@settings(max_examples=15, deadline=None)
@given(h=st.integers(1, 4), w=st.integers(1, 4), c=st.integers(1, 6))
def test_shape_contract_property(h, w, c):
    net = PyramidBackbone(c, blocks_per_stage=1)
    x = torch.rand(2, 3, 32 * h, 32 * w)
    levels = net(x)
    for i, (f, stride) in enumerate(zip(levels, (4, 8, 16, 32))):
        assert f.shape == (2, c * 2**i, 32 * h // stride, 32 * w // stride)


def test_zero_image_with_zero_bias_gives_zero_pyramid():
    net = PyramidBackbone(8)
    for f in net(torch.zeros(1, 3, 64, 64)):
        assert torch.count_nonzero(f) == 0


def test_rejects_sizes_not_divisible_by_32():
    with pytest.raises(ValueError, match="divisible by 32"):
        PyramidBackbone(4)(torch.rand(1, 3, 48, 64))


def test_deterministic_forward():
    net = PyramidBackbone(4)
    x = torch.rand(1, 3, 32, 32)
    a = net(x)
    b = net(x)
    assert all(torch.equal(u, v) for u, v in zip(a, b))


@pytest.mark.parametrize("level", [0, 3])
def test_gradient_matches_finite_differences(level):
    net = PyramidBackbone(2, blocks_per_stage=1).double()
    x = torch.rand(1, 3, 32, 32, dtype=torch.float64)
    params = [p for p in net.parameters()]

    def loss():
        return (net(x)[level] ** 2).sum()

    check_directional_gradient(loss, params + [x.requires_grad_()], n_dirs=6, rtol=1e-4)
