"""
Intensity Maps
Random monotone intensity transforms (gamma, brightness, scale, piecewise-linear
maps) materialized as 256-entry lookup tables.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from numerics.tensor_ops import derive_seed
from utils.errors import OODAugmentationError

LEVELS = 256
MAX_OOD_ATTEMPTS = 64

AUGMENTATION_KINDS = ("gamma-contrast", "brightness-shift", "multiplicative-scale", "random-monotone-map")


@dataclass
class MonotoneMap:
    """
    Piecewise-linear non-decreasing map on [0, 255]

    Attributes:
        knots_in: Strictly increasing input knots, first 0 and last 255
        knots_out: Non-decreasing output knots within [0, 255]
    """

    knots_in: np.ndarray
    knots_out: np.ndarray

    def __post_init__(self):
        self.knots_in = np.asarray(self.knots_in, dtype=np.float64)
        self.knots_out = np.asarray(self.knots_out, dtype=np.float64)
        if self.knots_in.shape != self.knots_out.shape or self.knots_in.size < 2:
            raise ValueError("MonotoneMap needs at least two matching knot pairs")
        if np.any(np.diff(self.knots_in) <= 0):
            raise ValueError("MonotoneMap input knots must be strictly increasing")
        if np.any(np.diff(self.knots_out) < 0):
            raise ValueError("MonotoneMap output knots must be non-decreasing")
        if self.knots_out.min() < 0 or self.knots_out.max() > LEVELS - 1:
            raise ValueError("MonotoneMap output knots must lie in [0, 255]")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(values, dtype=np.float64), self.knots_in, self.knots_out)

    def lut(self) -> np.ndarray:
        """Float lookup table over the 256 intensity levels"""
        return self(np.arange(LEVELS, dtype=np.float64))

    @classmethod
    def identity(cls) -> "MonotoneMap":
        return cls(np.array([0.0, 255.0]), np.array([0.0, 255.0]))

    @classmethod
    def from_function(cls, function: Callable[[np.ndarray], np.ndarray], n_knots: int = 17) -> "MonotoneMap":
        """Sample a monotone function at evenly spaced knots"""
        knots_in = np.linspace(0.0, LEVELS - 1, n_knots)
        knots_out = np.clip(function(knots_in), 0.0, LEVELS - 1)
        return cls(knots_in, np.maximum.accumulate(knots_out))

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        n_knots: int,
        jitter: float,
        jitter_endpoints: bool = False
    ) -> "MonotoneMap":
        """
        Draw a random map: interior knots at distinct random levels, outputs
        jittered around the diagonal, sorted and clipped.
        """
        n_knots = max(int(n_knots), 2)
        interior = np.sort(rng.choice(np.arange(1, LEVELS - 1), size=n_knots - 2, replace=False))
        knots_in = np.concatenate([[0.0], interior.astype(np.float64), [LEVELS - 1.0]])
        knots_out = knots_in + rng.uniform(-jitter, jitter, size=n_knots)
        if jitter_endpoints:
            knots_out[0] = rng.uniform(0.0, jitter)
            knots_out[-1] = rng.uniform(LEVELS - 1.0 - jitter, LEVELS - 1.0)
        else:
            knots_out[0], knots_out[-1] = 0.0, LEVELS - 1.0
        knots_out = np.sort(np.clip(knots_out, 0.0, LEVELS - 1.0))
        return cls(knots_in, knots_out)


@dataclass
class AugmentationSpec:
    """Parameterized family of random monotone intensity transforms"""

    kinds: Tuple[str, ...] = AUGMENTATION_KINDS
    gamma_range: Tuple[float, float] = (0.4, 2.5)
    brightness_range: Tuple[float, float] = (-60.0, 60.0)
    scale_range: Tuple[float, float] = (0.6, 1.5)
    knots_range: Tuple[int, int] = (4, 8)
    knot_jitter: float = 40.0
    composition_range: Tuple[int, int] = (1, 3)
    jitter_endpoints: bool = False
    seed: int = 0

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        if not self.kinds:
            raise ValueError("AugmentationSpec needs at least one kind")
        unknown = [k for k in self.kinds if k not in AUGMENTATION_KINDS]
        if unknown:
            raise ValueError(f"Unknown augmentation kinds: {unknown}. Available: {', '.join(AUGMENTATION_KINDS)}")
        for name in ("gamma_range", "brightness_range", "scale_range", "knots_range", "composition_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} must satisfy low <= high, got ({low}, {high})")
        if self.gamma_range[0] <= 0 or self.scale_range[0] <= 0:
            raise ValueError("gamma and scale ranges must be positive")
        if not 1 <= self.composition_range[0] <= self.composition_range[1] <= 3:
            raise ValueError(f"composition_range must lie within [1, 3], got {self.composition_range}")
        if self.knots_range[0] < 2:
            raise ValueError("A monotone map needs at least 2 knots")

    def to_config_items(self) -> Dict[str, str]:
        """Flat `augment.*` keys as written in run config files"""
        return {
            "augment.kinds": ",".join(self.kinds),
            "augment.gamma-range": f"{self.gamma_range[0]},{self.gamma_range[1]}",
            "augment.brightness-range": f"{self.brightness_range[0]},{self.brightness_range[1]}",
            "augment.scale-range": f"{self.scale_range[0]},{self.scale_range[1]}",
            "augment.knots-range": f"{self.knots_range[0]},{self.knots_range[1]}",
            "augment.knot-jitter": str(self.knot_jitter),
            "augment.composition-range": f"{self.composition_range[0]},{self.composition_range[1]}",
        }

    @classmethod
    def from_run_config(cls, config) -> "AugmentationSpec":
        return cls(
            kinds=tuple(config.augment_kinds),
            gamma_range=config.augment_gamma_range,
            brightness_range=config.augment_brightness_range,
            scale_range=config.augment_scale_range,
            knots_range=config.augment_knots_range,
            knot_jitter=config.augment_knot_jitter,
            composition_range=config.augment_composition_range,
            seed=config.seed
        )


def _apply_kind(kind: str, values: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    if kind == "gamma-contrast":
        gamma = rng.uniform(*spec.gamma_range)
        return (LEVELS - 1) * np.power(values / (LEVELS - 1), gamma)
    if kind == "brightness-shift":
        return values + rng.uniform(*spec.brightness_range)
    if kind == "multiplicative-scale":
        return values * rng.uniform(*spec.scale_range)
    n_knots = int(rng.integers(spec.knots_range[0], spec.knots_range[1] + 1))
    return MonotoneMap.random(rng, n_knots, spec.knot_jitter, spec.jitter_endpoints)(values)


def sample_lut(spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Draw one composed transform and return it as a uint8 lookup table

    Each op is applied on the float LUT and clamped to [0, 255]; rounding
    happens once at the end, so the table is non-decreasing.
    """
    low, high = spec.composition_range
    n_ops = int(rng.integers(low, high + 1))
    values = np.arange(LEVELS, dtype=np.float64)
    for _ in range(n_ops):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        values = np.clip(_apply_kind(kind, values, spec, rng), 0.0, LEVELS - 1)
    return np.round(values).astype(np.uint8)


def _check_image(x: np.ndarray) -> np.ndarray:
    array = np.asarray(x)
    if array.size and (array.min() < 0 or array.max() > LEVELS - 1):
        raise ValueError(f"Image intensities must lie in [0, 255], got [{array.min()}, {array.max()}]")
    return array.astype(np.int64)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Per-pixel mean squared distance on the 0-255 scale"""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff ** 2))


def apply(spec: AugmentationSpec, x: np.ndarray, seed: int) -> np.ndarray:
    """
    Apply one random composed transform to an image

    Args:
        spec: Augmentation family
        x: Image with integer intensities in [0, 255]
        seed: Draw seed (same seed, same transform)

    Returns:
        uint8 image of the same shape
    """
    indices = _check_image(x)
    rng = np.random.default_rng(seed)
    return sample_lut(spec, rng)[indices]


def apply_ood(
    spec: AugmentationSpec,
    x: np.ndarray,
    seed: int,
    threshold: float,
    max_attempts: int = MAX_OOD_ATTEMPTS
) -> np.ndarray:
    """
    Redraw transforms until the result is farther than `threshold` (MSE) from x

    A threshold of 0 accepts the first draw.

    Raises:
        ValueError: Negative threshold
        OODAugmentationError: No draw within max_attempts cleared the threshold
    """
    if threshold < 0:
        raise ValueError(f"OOD threshold must be >= 0, got {threshold}")
    indices = _check_image(x)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(max_attempts):
        augmented = sample_lut(spec, rng)[indices]
        if threshold == 0:
            return augmented
        distance = mse(indices, augmented)
        if distance > threshold:
            return augmented
        best = max(best, distance)
    raise OODAugmentationError(
        f"No augmentation in {max_attempts} attempts exceeded MSE threshold {threshold} "
        f"(best {best:.2f}); widen the augmentation parameter ranges"
    )


def augment_batch(
    spec: AugmentationSpec,
    images: np.ndarray,
    seed: int,
    threshold: Optional[float] = None,
    offset: int = 0
) -> np.ndarray:
    """
    Augment every image with its own seed derived from (seed, offset + index)

    Args:
        threshold: If given, use apply_ood with this threshold
    """
    images = np.asarray(images)
    out = np.empty(images.shape, dtype=np.uint8)
    for index in range(images.shape[0]):
        sample_seed = derive_seed(seed, offset + index)
        if threshold is None:
            out[index] = apply(spec, images[index], sample_seed)
        else:
            out[index] = apply_ood(spec, images[index], sample_seed, threshold)
    return out
