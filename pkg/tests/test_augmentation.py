import numpy as np
import pytest

from augmentation.augmentation_presets import AugmentationPresets
from augmentation.intensity_maps import (
    AugmentationSpec,
    MonotoneMap,
    apply,
    apply_ood,
    augment_batch,
    mse,
    sample_lut
)
from utils.errors import OODAugmentationError


def test_monotone_map_validation():
    with pytest.raises(ValueError):
        MonotoneMap(np.array([0.0, 100.0, 50.0, 255.0]), np.array([0.0, 10.0, 20.0, 255.0]))
    with pytest.raises(ValueError):
        MonotoneMap(np.array([0.0, 255.0]), np.array([200.0, 100.0]))
    with pytest.raises(ValueError):
        MonotoneMap(np.array([0.0, 255.0]), np.array([0.0, 300.0]))


def test_monotone_map_interpolates_between_knots():
    mapping = MonotoneMap(np.array([0.0, 100.0, 255.0]), np.array([0.0, 200.0, 255.0]))
    assert mapping(np.array([50.0]))[0] == pytest.approx(100.0)
    assert np.array_equal(MonotoneMap.identity().lut(), np.arange(256, dtype=np.float64))


def test_random_maps_are_monotone():
    rng = np.random.default_rng(0)
    for _ in range(50):
        lut = MonotoneMap.random(rng, n_knots=6, jitter=40.0, jitter_endpoints=True).lut()
        assert np.all(np.diff(lut) >= 0)
        assert lut.min() >= 0 and lut.max() <= 255


def test_sampled_luts_are_non_decreasing_uint8():
    spec = AugmentationSpec()
    rng = np.random.default_rng(1)
    for _ in range(100):
        lut = sample_lut(spec, rng)
        assert lut.dtype == np.uint8 and lut.shape == (256,)
        assert np.all(np.diff(lut.astype(int)) >= 0)


def test_apply_is_deterministic_per_seed(tiny_images):
    spec = AugmentationSpec()
    image = tiny_images[0]
    assert np.array_equal(apply(spec, image, seed=5), apply(spec, image, seed=5))
    outputs = {apply(spec, image, seed=s).tobytes() for s in range(10)}
    assert len(outputs) > 1


def test_apply_preserves_intensity_order(tiny_images):
    image = tiny_images[0]
    out = apply(AugmentationSpec(), image, seed=2).astype(int)
    order = np.argsort(image.flatten(), kind="stable")
    assert np.all(np.diff(out.flatten()[order]) >= 0)


def test_apply_rejects_out_of_range_intensities():
    with pytest.raises(ValueError):
        apply(AugmentationSpec(), np.full((4, 4), 300), seed=0)


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentationSpec(kinds=("solarize",))
    with pytest.raises(ValueError):
        AugmentationSpec(gamma_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        AugmentationSpec(composition_range=(1, 4))


def test_ood_threshold_zero_accepts_first_draw(tiny_images):
    spec = AugmentationPresets.get_preset("identity")
    image = tiny_images[0]
    assert np.array_equal(apply_ood(spec, image, seed=0, threshold=0), image)


def test_ood_negative_threshold_rejected(tiny_images):
    with pytest.raises(ValueError):
        apply_ood(AugmentationSpec(), tiny_images[0], seed=0, threshold=-1.0)


def test_ood_draw_clears_threshold(tiny_images):
    spec = AugmentationSpec()
    image = tiny_images[1]
    out = apply_ood(spec, image, seed=3, threshold=100.0)
    assert mse(image, out) > 100.0


def test_ood_exhaustion_raises():
    spec = AugmentationPresets.get_preset("identity")
    with pytest.raises(OODAugmentationError):
        apply_ood(spec, np.full((4, 4), 128, dtype=np.uint8), seed=0, threshold=1.0, max_attempts=4)


def test_augment_batch_uses_per_image_seeds(tiny_images):
    spec = AugmentationSpec()
    batch = augment_batch(spec, tiny_images, seed=9)
    assert batch.shape == tiny_images.shape and batch.dtype == np.uint8
    assert np.array_equal(batch, augment_batch(spec, tiny_images, seed=9))
    shifted = augment_batch(spec, tiny_images[1:], seed=9, offset=1)
    assert np.array_equal(batch[1:], shifted)


def test_presets():
    assert "ood-guidance" in AugmentationPresets.list_presets()
    assert AugmentationPresets.get_preset("brightness-only", seed=4).seed == 4
    assert not AugmentationPresets.preset_exists("solarize")
    with pytest.raises(ValueError):
        AugmentationPresets.get_preset("solarize")


@pytest.mark.parametrize("shift", [10.0, -10.0])
def test_brightness_shift_clears_threshold_only_above_its_square(shift):
    spec = AugmentationPresets.get_preset("brightness-only", brightness_range=(shift, shift))
    image = np.arange(64, 128, dtype=np.uint8).reshape(8, 8)

    augmented = apply_ood(spec, image, seed=0, threshold=shift ** 2 - 1.0)
    assert np.array_equal(augmented.astype(np.int64), image.astype(np.int64) + int(shift))
    assert mse(image, augmented) == pytest.approx(shift ** 2)

    with pytest.raises(OODAugmentationError):
        apply_ood(spec, image, seed=0, threshold=shift ** 2, max_attempts=4)
