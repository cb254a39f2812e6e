"""
Segmentation Metrics
Dice similarity coefficient, 95th-percentile Hausdorff distance and the
Shannon entropy of class probabilities.
"""

from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from utils.errors import EmptyMaskError


def _check_labels(mask: np.ndarray, class_count: int, name: str):
    if mask.size and (mask.min() < 0 or mask.max() >= class_count):
        raise ValueError(
            f"{name} holds labels outside [0, {class_count - 1}]: range [{mask.min()}, {mask.max()}]"
        )


def dice(
    pred: np.ndarray,
    true: np.ndarray,
    class_count: int,
    classes: Optional[Iterable[int]] = None
) -> Tuple[np.ndarray, float]:
    """
    Per-class Dice 2|A n B| / (|A| + |B|)

    A class absent from both masks scores 1.

    Args:
        pred: Predicted label mask
        true: Reference label mask
        class_count: Number of labels, background included
        classes: Foreground classes averaged into the mean (default 1..K-1)

    Returns:
        (Dice per class 0..K-1, mean over the foreground classes)
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"Mask shapes differ: {pred.shape} vs {true.shape}")
    _check_labels(pred, class_count, "Prediction")
    _check_labels(true, class_count, "Reference")
    scores = np.empty(class_count, dtype=np.float64)
    for label in range(class_count):
        a = pred == label
        b = true == label
        total = a.sum() + b.sum()
        scores[label] = 1.0 if total == 0 else 2.0 * np.logical_and(a, b).sum() / total
    foreground = list(classes) if classes is not None else list(range(1, class_count))
    mean = float(np.mean(scores[foreground])) if foreground else float("nan")
    return scores, mean


def boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels of a binary mask that touch its complement (4-connectivity)"""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask)


def hd95(pred: np.ndarray, true: np.ndarray, label: int) -> float:
    """
    95th percentile of boundary-to-boundary nearest distances, both
    directions pooled, in pixels

    Raises:
        EmptyMaskError: The class is missing from either mask
    """
    a = np.asarray(pred) == label
    b = np.asarray(true) == label
    if not a.any() or not b.any():
        raise EmptyMaskError(f"Class {label} is empty in the {'prediction' if not a.any() else 'reference'}")
    points_a = np.argwhere(boundary(a)).astype(np.float64)
    points_b = np.argwhere(boundary(b)).astype(np.float64)
    forward, _ = cKDTree(points_b).query(points_a)
    backward, _ = cKDTree(points_a).query(points_b)
    return float(np.percentile(np.concatenate([forward, backward]), 95))


def mean_hd95(pred: np.ndarray, true: np.ndarray, class_count: int) -> Tuple[float, list]:
    """Mean HD95 over foreground classes present in both masks, plus the missing classes"""
    values, missing = [], []
    for label in range(1, class_count):
        try:
            values.append(hd95(pred, true, label))
        except EmptyMaskError:
            missing.append(label)
    return (float(np.mean(values)) if values else float("nan")), missing


def prediction_entropy(probabilities: np.ndarray, axis: int = 1) -> np.ndarray:
    """
    Mean per-pixel Shannon entropy (natural log) of class probabilities

    Args:
        probabilities: Array with classes on `axis`, e.g. (N, K, H, W)

    Returns:
        Entropy per leading item (per image for (N, K, H, W))
    """
    p = np.asarray(probabilities, dtype=np.float64)
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    pixel_entropy = terms.sum(axis=axis)
    if pixel_entropy.ndim <= 1:
        return pixel_entropy
    return pixel_entropy.reshape(pixel_entropy.shape[0], -1).mean(axis=1)
