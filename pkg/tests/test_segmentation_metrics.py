import numpy as np
import pytest

from analysis.segmentation_metrics import boundary, dice, hd95, mean_hd95, prediction_entropy
from utils.errors import EmptyMaskError


def _brute_boundary(mask):
    height, width = mask.shape
    points = []
    for i in range(height):
        for j in range(width):
            if not mask[i, j]:
                continue
            neighbours = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            inside = all(0 <= a < height and 0 <= b < width and mask[a, b] for a, b in neighbours)
            if not inside:
                points.append((i, j))
    return np.array(points, dtype=np.float64)


def _brute_hd95(pred, true, label):
    a = _brute_boundary(pred == label)
    b = _brute_boundary(true == label)
    distances = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return float(np.percentile(np.concatenate([distances.min(axis=1), distances.min(axis=0)]), 95))


def test_dice_of_shifted_square():
    pred = np.zeros((6, 6), dtype=np.uint8)
    true = np.zeros((6, 6), dtype=np.uint8)
    pred[1:4, 1:4] = 1
    true[1:4, 2:5] = 1
    scores, mean = dice(pred, true, class_count=2)
    assert mean == pytest.approx(2 / 3)
    assert scores[1] == pytest.approx(0.6667, abs=1e-4)


def test_dice_absent_class_scores_one():
    mask = np.zeros((4, 4), dtype=np.uint8)
    scores, mean = dice(mask, mask, class_count=3)
    assert np.array_equal(scores, np.ones(3))
    assert mean == 1.0


def test_dice_rejects_bad_inputs():
    with pytest.raises(ValueError):
        dice(np.zeros((4, 4)), np.zeros((5, 5)), class_count=2)
    with pytest.raises(ValueError):
        dice(np.full((4, 4), 3), np.zeros((4, 4)), class_count=2)


def test_boundary_matches_four_neighbour_definition(rng):
    mask = rng.random((10, 10)) > 0.4
    assert np.array_equal(np.argwhere(boundary(mask)).astype(np.float64), _brute_boundary(mask))


def test_hd95_single_pixels():
    pred = np.zeros((10, 10), dtype=np.uint8)
    true = np.zeros((10, 10), dtype=np.uint8)
    pred[2, 2] = 1
    true[2, 7] = 1
    assert hd95(pred, true, 1) == 5.0


def test_hd95_identical_masks_is_zero():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:6, 2:6] = 1
    assert hd95(mask, mask, 1) == 0.0


def test_hd95_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 200:
        size = int(rng.integers(4, 17))
        pred = (rng.random((size, size)) < rng.uniform(0.1, 0.7)).astype(np.uint8)
        true = (rng.random((size, size)) < rng.uniform(0.1, 0.7)).astype(np.uint8)
        if not pred.any() or not true.any():
            continue
        assert hd95(pred, true, 1) == pytest.approx(_brute_hd95(pred, true, 1), abs=1e-12)
        checked += 1


def test_hd95_empty_mask():
    empty = np.zeros((4, 4), dtype=np.uint8)
    full = np.ones((4, 4), dtype=np.uint8)
    with pytest.raises(EmptyMaskError, match="prediction"):
        hd95(empty, full, 1)
    with pytest.raises(EmptyMaskError, match="reference"):
        hd95(full, empty, 1)


def test_mean_hd95_reports_missing_classes():
    pred = np.zeros((8, 8), dtype=np.uint8)
    pred[1:3, 1:3] = 1
    value, missing = mean_hd95(pred, pred.copy(), class_count=3)
    assert value == 0.0
    assert missing == [2]


def test_entropy_extremes():
    uniform = np.full((1, 4, 2, 2), 0.25)
    certain = np.zeros((1, 4, 2, 2))
    certain[:, 0] = 1.0
    assert prediction_entropy(uniform)[0] == pytest.approx(np.log(4))
    assert prediction_entropy(certain)[0] == 0.0
