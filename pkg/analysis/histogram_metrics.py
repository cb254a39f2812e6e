"""
Histogram Metrics
Normalized intensity histograms, 1-D Wasserstein distance between them and
the histogram-matching baseline.
"""

import numpy as np

LEVELS = 256


def normalized_histogram(images: np.ndarray) -> np.ndarray:
    """256-bin histogram of all pixels, summing to 1"""
    values = np.asarray(images).astype(np.int64).ravel()
    if values.size == 0:
        raise ValueError("Cannot build a histogram of an empty image set")
    if values.min() < 0 or values.max() > LEVELS - 1:
        raise ValueError("Histogram inputs must lie in [0, 255]")
    counts = np.bincount(values, minlength=LEVELS).astype(np.float64)
    return counts / counts.sum()


def _check_histogram(h: np.ndarray, name: str) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be non-negative and sum to 1 (sum {h.sum():.12f})")
    return h


def wasserstein_hist(h1: np.ndarray, h2: np.ndarray) -> float:
    """W1 between two normalized histograms on a shared grid, in bin units"""
    h1 = _check_histogram(h1, "h1")
    h2 = _check_histogram(h2, "h2")
    if h1.shape != h2.shape:
        raise ValueError(f"Histogram sizes differ: {h1.shape} vs {h2.shape}")
    return float(np.sum(np.abs(np.cumsum(h1) - np.cumsum(h2))))


def matching_lut(source_hist: np.ndarray, reference_hist: np.ndarray) -> np.ndarray:
    """
    Monotone LUT sending each level's mid-CDF position in the source to the
    first reference level whose CDF reaches it
    """
    source_hist = _check_histogram(source_hist, "source histogram")
    reference_cdf = np.cumsum(_check_histogram(reference_hist, "reference histogram"))
    mid_cdf = np.cumsum(source_hist) - source_hist / 2.0
    lut = np.searchsorted(reference_cdf, mid_cdf, side="left")
    return np.clip(lut, 0, LEVELS - 1).astype(np.uint8)


def hist_match(image: np.ndarray, reference_hist: np.ndarray) -> np.ndarray:
    """Histogram-match one uint8 image to a reference histogram"""
    image = np.asarray(image)
    lut = matching_lut(normalized_histogram(image), reference_hist)
    return lut[image.astype(np.int64)]
