import numpy as np
import pytest

from analysis.phantoms import PhantomSpec, SiteTransform, generate, render_subject, split_counts
from analysis.site_presets import SitePresets


@pytest.mark.parametrize("n,expected", [(64, (38, 10, 16)), (8, (5, 1, 2)), (16, (10, 2, 4))])
def test_split_counts(n, expected):
    assert split_counts(n) == expected


def test_generation_is_deterministic(phantoms):
    again = generate(phantoms.spec, [SitePresets.get_site("site-a"), SitePresets.get_site("site-b")],
                     n_per_site=16, seed=0)
    for name in phantoms.site_names:
        assert np.array_equal(phantoms.sites[name].images, again.sites[name].images)
        assert np.array_equal(phantoms.sites[name].masks, again.sites[name].masks)


def test_splits_partition_each_site(phantoms):
    for data in phantoms.sites.values():
        joined = np.concatenate([data.splits["train"], data.splits["val"], data.splits["test"]])
        assert np.array_equal(np.sort(joined), np.arange(16))
    images, masks = phantoms.split("site-b", "test")
    assert images.shape == (4, 16, 16) and masks.shape == (4, 16, 16)
    with pytest.raises(KeyError):
        phantoms.split("site-z", "test")


def test_subjects_are_not_shared_between_sites(phantoms):
    a = set(phantoms.sites["site-a"].subject_ids.tolist())
    b = set(phantoms.sites["site-b"].subject_ids.tolist())
    assert not a & b


def test_anatomy_is_site_independent():
    spec = PhantomSpec(image_size=32)
    _, mask_a = render_subject(spec, SitePresets.get_site("site-a"), seed=1, subject_index=3)
    _, mask_c = render_subject(spec, SitePresets.get_site("site-c"), seed=1, subject_index=3)
    assert np.array_equal(mask_a, mask_c)


def test_labels_and_intensities(phantoms):
    data = phantoms.sites["site-a"]
    assert data.images.dtype == np.uint8
    assert set(np.unique(data.masks)) <= set(range(5))
    means = [data.images[data.masks == label].mean() for label in range(4)]
    assert means == sorted(means)


def test_gamma_site_brightens_tissues():
    spec = PhantomSpec(image_size=32, noise_sigma=0.0)
    reference = SiteTransform("flat")
    bright = SiteTransform("bright", intensity_map=SitePresets.get_site("site-b").intensity_map)
    image_ref, mask = render_subject(spec, reference, seed=2, subject_index=0)
    image_bright, _ = render_subject(spec, bright, seed=2, subject_index=0)
    ring = mask == 1
    expected = 255.0 * (image_ref[ring].astype(float) / 255.0) ** 0.6
    assert image_bright[ring].mean() > image_ref[ring].mean()
    assert np.abs(image_bright[ring] - expected).max() <= 2.0


def test_merged_class_counts():
    spec = PhantomSpec(image_size=16, class_count=2)
    _, mask = render_subject(spec, SiteTransform("flat"), seed=0, subject_index=0)
    assert set(np.unique(mask)) <= {0, 1}


def test_invalid_specs():
    with pytest.raises(ValueError, match="overlap"):
        PhantomSpec(class_count=2, bands=((0, 100), (90, 200)))
    with pytest.raises(ValueError):
        PhantomSpec(image_size=24)
    with pytest.raises(ValueError):
        PhantomSpec(class_count=7)
    with pytest.raises(ValueError):
        SiteTransform("bad", bias_amplitude=1.0)


def test_invalid_generation_requests():
    spec = PhantomSpec(image_size=16)
    with pytest.raises(ValueError):
        generate(spec, [SiteTransform("a")], n_per_site=4, seed=0)
    with pytest.raises(ValueError):
        generate(spec, [SiteTransform("a"), SiteTransform("a")], n_per_site=8, seed=0)


def test_site_presets():
    assert SitePresets.list_sites() == ["site-a", "site-b", "site-c", "site-d"]
    assert SitePresets.site_exists("site-d")
    with pytest.raises(ValueError):
        SitePresets.get_site("site-z")
    lut = SitePresets.get_site("site-c").lut()
    assert np.all(np.diff(lut) >= 0)
