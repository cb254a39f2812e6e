import math

import pytest
import torch

from conftest import randomize_zero_heads
from flows.coupling import (
    CouplingLayer,
    Squeeze,
    channel_mask,
    checkerboard_mask,
    coupling_forward,
    coupling_inverse,
    squeeze,
    unsqueeze
)
from numerics.tensor_ops import DTYPE, make_generator
from utils.errors import ContractViolation


def _layer(channels, spatial, kind, phase="A-first", seed=0):
    layer = CouplingLayer(channels, spatial, mask_kind=kind, mask_phase=phase)
    return randomize_zero_heads(layer, seed=seed, scale=0.1)


def test_checkerboard_mask_phases_partition_the_grid():
    a = checkerboard_mask(4, 4, "A-first")
    b = checkerboard_mask(4, 4, "B-first")
    assert a.shape == (1, 1, 4, 4)
    assert torch.equal(a + b, torch.ones_like(a))
    assert a[0, 0, 0, 0] == 1 and a[0, 0, 0, 1] == 0


def test_channel_mask_splits_at_half():
    mask = channel_mask(4, "A-first").flatten().tolist()
    assert mask == [1.0, 1.0, 0.0, 0.0]
    assert channel_mask(4, "B-first").flatten().tolist() == [0.0, 0.0, 1.0, 1.0]


def test_channel_mask_needs_two_channels():
    with pytest.raises(ContractViolation):
        channel_mask(1)


def test_squeeze_block_ordering():
    x = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=DTYPE).view(1, 1, 2, 2)
    assert squeeze(x).flatten().tolist() == [1.0, 2.0, 3.0, 4.0]


def test_squeeze_round_trip_and_odd_extent():
    x = torch.randn(2, 3, 6, 4, dtype=DTYPE, generator=make_generator(0))
    assert squeeze(x).shape == (2, 12, 3, 2)
    assert torch.equal(unsqueeze(squeeze(x)), x)
    with pytest.raises(ContractViolation):
        squeeze(torch.zeros(1, 1, 3, 4, dtype=DTYPE))


def test_squeeze_module_is_volume_preserving():
    y, logdet = Squeeze()(torch.zeros(3, 1, 4, 4, dtype=DTYPE))
    assert y.shape == (3, 4, 2, 2)
    assert torch.count_nonzero(logdet) == 0


def test_fresh_coupling_layer_is_identity():
    layer = CouplingLayer(1, (4, 4))
    z = torch.randn(2, 1, 4, 4, dtype=DTYPE, generator=make_generator(1))
    y, logdet = layer(z)
    assert torch.allclose(y, z)
    assert torch.count_nonzero(logdet) == 0


def test_coupling_keeps_partition_a():
    layer = _layer(1, (4, 4), "checkerboard")
    z = torch.randn(2, 1, 4, 4, dtype=DTYPE, generator=make_generator(2))
    y, _ = coupling_forward(z, layer)
    assert torch.equal(y * layer.mask, z * layer.mask)
    assert layer.transformed_count == 8


@pytest.mark.parametrize("kind,channels,spatial,phase", [
    ("checkerboard", 1, (4, 4), "A-first"),
    ("checkerboard", 1, (4, 4), "B-first"),
    ("channel", 4, (2, 2), "A-first"),
    ("channel", 4, (2, 2), "B-first"),
])
def test_coupling_inverse_round_trip(kind, channels, spatial, phase):
    layer = _layer(channels, spatial, kind, phase, seed=3)
    z = torch.randn(5, channels, *spatial, dtype=DTYPE, generator=make_generator(4))
    y, _ = layer(z)
    assert torch.max(torch.abs(coupling_inverse(y, layer) - z)).item() < 1e-10


@pytest.mark.parametrize("kind,channels,spatial", [
    ("checkerboard", 1, (4, 4)),
    ("channel", 4, (2, 2)),
])
def test_coupling_logdet_matches_numerical_jacobian(kind, channels, spatial):
    layer = _layer(channels, spatial, kind, seed=5)
    z = torch.randn(1, channels, *spatial, dtype=DTYPE, generator=make_generator(6))

    def transform(flat):
        return layer(flat.view(1, channels, *spatial))[0].flatten()

    jacobian = torch.autograd.functional.jacobian(transform, z.flatten())
    _, numerical = torch.linalg.slogdet(jacobian)
    _, analytic = layer(z)
    assert abs(numerical.item() - analytic.item()) < 1e-6


def test_coupling_rejects_wrong_shape():
    layer = CouplingLayer(1, (4, 4))
    with pytest.raises(ContractViolation):
        layer(torch.zeros(1, 1, 8, 8, dtype=DTYPE))


def test_context_coupling_requires_context():
    layer = CouplingLayer(1, (4, 4), context_channels=1)
    with pytest.raises(ContractViolation):
        layer(torch.zeros(1, 1, 4, 4, dtype=DTYPE))


def test_constant_log_scale_sums_over_transformed_elements():
    layer = CouplingLayer(1, (4, 4))
    with torch.no_grad():
        layer.subnet.head.bias[0] = math.atanh(0.3)
    z = torch.randn(2, 1, 4, 4, dtype=DTYPE, generator=make_generator(8))
    y, logdet = layer(z)

    assert layer.transformed_count == 8
    assert torch.allclose(logdet, torch.full((2,), 2.4, dtype=DTYPE), atol=1e-12)
    b = layer.mask == 0
    assert torch.allclose(y[b.expand_as(y)], z[b.expand_as(z)] * math.exp(0.3))
    assert torch.equal(y[~b.expand_as(y)], z[~b.expand_as(z)])
