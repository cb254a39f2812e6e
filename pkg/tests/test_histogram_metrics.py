import numpy as np
import ot
import pytest

from analysis.histogram_metrics import hist_match, matching_lut, normalized_histogram, wasserstein_hist


def _delta(level, size=256):
    h = np.zeros(size)
    h[level] = 1.0
    return h


def test_histogram_sums_to_one(tiny_images):
    h = normalized_histogram(tiny_images)
    assert h.shape == (256,)
    assert h.sum() == pytest.approx(1.0, abs=1e-12)


def test_histogram_rejects_bad_inputs():
    with pytest.raises(ValueError):
        normalized_histogram(np.array([], dtype=np.uint8))
    with pytest.raises(ValueError):
        normalized_histogram(np.array([300]))


def test_wasserstein_between_deltas():
    assert wasserstein_hist(_delta(0), _delta(10)) == pytest.approx(10.0)


def test_wasserstein_matches_transport_solver():
    rng = np.random.default_rng(3)
    levels = np.arange(16, dtype=np.float64)
    cost = np.abs(levels[:, None] - levels[None, :])
    for _ in range(200):
        a = rng.random(16) * (rng.random(16) > 0.3)
        b = rng.random(16) * (rng.random(16) > 0.3)
        a[rng.integers(16)] += 0.1
        b[rng.integers(16)] += 0.1
        a /= a.sum()
        b /= b.sum()
        assert wasserstein_hist(a, b) == pytest.approx(ot.emd2(a, b, cost), abs=1e-9)


def test_wasserstein_metric_properties():
    rng = np.random.default_rng(4)
    h = [x / x.sum() for x in rng.random((3, 32))]
    assert wasserstein_hist(h[0], h[0]) == 0.0
    assert wasserstein_hist(h[0], h[1]) == pytest.approx(wasserstein_hist(h[1], h[0]))
    assert wasserstein_hist(h[0], h[2]) <= wasserstein_hist(h[0], h[1]) + wasserstein_hist(h[1], h[2]) + 1e-12


def test_wasserstein_rejects_unnormalized():
    with pytest.raises(ValueError):
        wasserstein_hist(np.ones(4), _delta(0, 4))
    with pytest.raises(ValueError):
        wasserstein_hist(_delta(0, 4), _delta(0, 8))


def test_matching_own_histogram_is_identity(tiny_images):
    image = tiny_images[0]
    assert np.array_equal(hist_match(image, normalized_histogram(image)), image)


def test_constant_image_maps_to_reference_median(rng):
    reference = rng.integers(50, 200, size=(16, 16))
    h = normalized_histogram(reference)
    median_level = int(np.searchsorted(np.cumsum(h), 0.5, side="left"))
    matched = hist_match(np.full((8, 8), 30, dtype=np.uint8), h)
    assert np.all(matched == median_level)


def test_matching_reduces_distance_and_lut_is_monotone(rng):
    image = rng.integers(0, 100, size=(32, 32)).astype(np.uint8)
    reference = normalized_histogram(rng.integers(100, 220, size=(32, 32)))
    matched = hist_match(image, reference)
    assert wasserstein_hist(normalized_histogram(matched), reference) < wasserstein_hist(
        normalized_histogram(image), reference)
    lut = matching_lut(normalized_histogram(image), reference).astype(int)
    assert np.all(np.diff(lut) >= 0)
