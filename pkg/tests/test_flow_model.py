import math

import pytest
import torch

from conftest import randomize_zero_heads
from flows.dequantization import inverse_logit_transform, logit_transform
from flows.flow_model import FlowModel, bpd, bpd_from_log_prob, log_prob, mean_bpd, sample
from numerics.gradcheck import grad_check
from numerics.layers import seeded_init
from numerics.tensor_ops import DTYPE, make_generator, to_batch
from utils.checkpoint_archive import decode_archive, encode_archive, load_module_state, module_tensors, split_meta
from utils.errors import ContractViolation


def _flow(spatial=(8, 8), depth=12, seed=0, scale=0.05, **kwargs):
    with seeded_init(seed):
        model = FlowModel(spatial, depth=depth, **kwargs)
    return randomize_zero_heads(model, seed=seed + 100, scale=scale)


def test_depth_must_be_multiple_of_three():
    with pytest.raises(ContractViolation):
        FlowModel((8, 8), depth=4)


def test_layout_of_twelve_layer_flow():
    model = FlowModel((8, 8), depth=12)
    couplings = model.coupling_layers()
    assert len(couplings) == 12
    assert [layer.mask_kind for layer in couplings] == ["checkerboard"] * 4 + ["channel"] * 8
    assert model.latent_shape == (16, 2, 2)


def test_full_flow_round_trip():
    model = _flow()
    y = torch.randn(100, 1, 8, 8, dtype=DTYPE, generator=make_generator(1))
    with torch.no_grad():
        z, _ = model(y)
        restored = model.inverse(z)
    assert torch.max(torch.abs(restored - y)).item() < 1e-7


def test_flow_logdet_matches_numerical_jacobian():
    model = _flow(spatial=(4, 4), depth=3, scale=0.2)
    y = torch.randn(1, 1, 4, 4, dtype=DTYPE, generator=make_generator(2))

    def transform(flat):
        return model(flat.view(1, 1, 4, 4))[0].flatten()

    _, numerical = torch.linalg.slogdet(torch.autograd.functional.jacobian(transform, y.flatten()))
    _, analytic = model(y)
    assert abs(numerical.item() - analytic.item()) < 1e-6


def test_logit_transform_inverse_and_logdet():
    v = torch.tensor([[0.1, 0.5, 0.9]], dtype=DTYPE)
    y, logdet = logit_transform(v)
    assert torch.allclose(inverse_logit_transform(y), v)
    derivative = torch.autograd.functional.jacobian(lambda t: logit_transform(t)[0], v).reshape(3, 3)
    assert logdet.item() == pytest.approx(torch.log(torch.diagonal(derivative)).sum().item(), abs=1e-10)


def test_single_pixel_density_sums_to_one():
    model = FlowModel((1, 1), depth=0)
    levels = torch.arange(256, dtype=DTYPE).view(256, 1, 1, 1)
    draws = 64
    probabilities = torch.zeros(256, dtype=DTYPE)
    for k in range(draws):
        noise = torch.full_like(levels, (k + 0.5) / draws)
        probabilities += torch.exp(model.log_prob(levels, noise=noise)) / draws
    assert probabilities.sum().item() == pytest.approx(1.0, abs=0.02)


def test_bpd_is_nll_over_elements():
    model = _flow(spatial=(4, 4), depth=3)
    x = torch.randint(0, 256, (3, 1, 4, 4), generator=make_generator(3)).to(DTYPE)
    lp = log_prob(x, model, noise_seed=9)
    bits = bpd(x, model, noise_seed=9)
    assert torch.allclose(bits, -lp / (math.log(2.0) * 16))
    assert torch.allclose(bpd_from_log_prob(lp, 16), bits)


def test_same_noise_seed_same_estimate():
    model = _flow(spatial=(4, 4), depth=3)
    x = torch.randint(0, 256, (2, 1, 4, 4), generator=make_generator(4)).to(DTYPE)
    assert torch.equal(log_prob(x, model, noise_seed=1), log_prob(x, model, noise_seed=1))
    assert not torch.equal(log_prob(x, model, noise_seed=1), log_prob(x, model, noise_seed=2))


def test_discrete_log_prob_rejects_invalid_images():
    model = FlowModel((4, 4), depth=3)
    with pytest.raises(ContractViolation):
        model.log_prob(torch.full((1, 1, 4, 4), 0.5, dtype=DTYPE))
    with pytest.raises(ContractViolation):
        model.log_prob(torch.full((1, 1, 4, 4), 300.0, dtype=DTYPE))
    with pytest.raises(ContractViolation):
        model.log_prob(torch.zeros(1, 1, 8, 8, dtype=DTYPE))


def test_continuous_log_prob_accepts_harmonizer_outputs():
    model = FlowModel((4, 4), depth=3)
    x = torch.full((1, 1, 4, 4), 100.25, dtype=DTYPE)
    assert torch.isfinite(model.log_prob(x, generator=make_generator(0), discrete=False)).all()


def test_variational_dequantization():
    model = _flow(spatial=(4, 4), depth=3, dequant_mode="variational", dequant_layers=2)
    x = torch.randint(0, 256, (2, 1, 4, 4), generator=make_generator(5)).to(DTYPE)
    values = model.log_prob(x, generator=make_generator(0))
    assert torch.isfinite(values).all()
    with pytest.raises(ContractViolation):
        model.log_prob(x, noise=torch.zeros_like(x))


def test_samples_are_discrete_images():
    model = _flow()
    images = sample(model, 3, seed=11)
    assert images.shape == (3, 1, 8, 8)
    assert torch.equal(images, torch.round(images))
    assert images.min() >= 0 and images.max() <= 255
    assert torch.equal(images, sample(model, 3, seed=11))


def test_checkpoint_round_trip_preserves_density():
    model = _flow(spatial=(4, 4), depth=3)
    state, meta = split_meta(decode_archive(encode_archive(module_tensors(model, model.architecture()))))
    restored = load_module_state(FlowModel.from_architecture(meta), state)
    x = torch.randint(0, 256, (2, 1, 4, 4), generator=make_generator(6)).to(DTYPE)
    assert torch.equal(log_prob(x, model, noise_seed=3), log_prob(x, restored, noise_seed=3))


def test_mean_bpd_is_deterministic(tiny_images):
    model = FlowModel((16, 16), depth=3)
    batch = to_batch(tiny_images)
    assert mean_bpd(model, batch, seed=0, batch_size=3) == mean_bpd(model, batch, seed=0, batch_size=3)


def test_full_flow_nll_gradient():
    model = _flow(spatial=(16, 16), depth=12)
    x = torch.randint(0, 256, (1, 1, 16, 16), generator=make_generator(7)).to(DTYPE)
    noise = torch.rand(x.shape, generator=make_generator(8), dtype=DTYPE)
    report = grad_check(lambda: -model.log_prob(x, noise=noise).sum(), dict(model.named_parameters()),
                        tolerance=1e-3, floor=1e-4)
    assert report.passed, report


def test_single_layer_nll_gradient():
    model = _flow(spatial=(16, 16), depth=3)
    layer = model.coupling_layers()[0]
    y = torch.randn(2, 1, 16, 16, dtype=DTYPE, generator=make_generator(9))

    def closure():
        out, logdet = layer(y)
        return (0.5 * out ** 2).sum() - logdet.sum()

    report = grad_check(closure, dict(layer.named_parameters()), tolerance=1e-3, floor=1e-6)
    assert report.passed, report
