"""
Phantom Generator
Synthetic multi-site phantom images with exact tissue masks. Anatomy is sampled
once per subject; each subject is rendered only through its own site's
intensity transform (no traveling subjects).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from augmentation.intensity_maps import LEVELS, MonotoneMap
from numerics.tensor_ops import derive_seed

# background, outer ring, interior body A, interior body B, small structure
DEFAULT_BANDS: Tuple[Tuple[float, float], ...] = ((0, 8), (60, 80), (110, 130), (160, 180), (215, 235))
CLASS_NAMES = ("background", "ring", "body-a", "body-b", "small")

# fine structure -> label for each supported class count
CLASS_MERGES: Dict[int, Tuple[int, ...]] = {
    2: (0, 1, 1, 1, 1),
    3: (0, 1, 2, 2, 2),
    4: (0, 1, 2, 3, 3),
    5: (0, 1, 2, 3, 4),
}

SPLIT_FRACTIONS = (0.60, 0.15, 0.25)
SPLIT_NAMES = ("train", "val", "test")


def default_bands(class_count: int) -> Tuple[Tuple[float, float], ...]:
    """Bands of each merged class (the band of its first fine structure)"""
    merge = CLASS_MERGES[class_count]
    return tuple(DEFAULT_BANDS[merge.index(label)] for label in range(class_count))


@dataclass
class PhantomSpec:
    """
    Attributes:
        image_size: Side length, a multiple of 16
        class_count: Tissue classes including background (2-5)
        bands: Per-class base intensity range; ordered and non-overlapping
        smoothing_sigma: Partial-volume blur of the base rendering
        noise_sigma: Acquisition noise added before the site transform
    """

    image_size: int = 64
    class_count: int = 5
    bands: Optional[Tuple[Tuple[float, float], ...]] = None
    smoothing_sigma: float = 0.6
    noise_sigma: float = 1.5

    def __post_init__(self):
        if self.image_size < 16 or self.image_size % 16 != 0:
            raise ValueError(f"Phantom image size must be a positive multiple of 16, got {self.image_size}")
        if self.class_count not in CLASS_MERGES:
            raise ValueError(f"Phantom class count must be one of {sorted(CLASS_MERGES)}, got {self.class_count}")
        if self.bands is None:
            self.bands = default_bands(self.class_count)
        self.bands = tuple((float(lo), float(hi)) for lo, hi in self.bands)
        if len(self.bands) != self.class_count:
            raise ValueError(f"Expected {self.class_count} intensity bands, got {len(self.bands)}")
        for lo, hi in self.bands:
            if lo > hi or lo < 0 or hi > LEVELS - 1:
                raise ValueError(f"Invalid intensity band ({lo}, {hi})")
        for (lo_a, hi_a), (lo_b, hi_b) in zip(self.bands, self.bands[1:]):
            if hi_a >= lo_b:
                raise ValueError(
                    f"Intensity bands ({lo_a}, {hi_a}) and ({lo_b}, {hi_b}) overlap or are out of order"
                )


@dataclass
class SiteTransform:
    """
    Appearance of one imaging site

    Attributes:
        name: Site identifier
        intensity_map: Monotone intensity mapping
        noise_sigma: Additive noise after the mapping
        bias_amplitude: Strength of the smooth multiplicative bias field, in [0, 1)
    """

    name: str
    intensity_map: MonotoneMap = field(default_factory=MonotoneMap.identity)
    noise_sigma: float = 0.0
    bias_amplitude: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.bias_amplitude < 1.0:
            raise ValueError(f"Bias amplitude must lie in [0, 1), got {self.bias_amplitude}")
        if self.noise_sigma < 0:
            raise ValueError(f"Noise sigma must be >= 0, got {self.noise_sigma}")

    def lut(self) -> np.ndarray:
        """Integer LUT of the intensity mapping (for manifests)"""
        return np.round(self.intensity_map.lut()).astype(np.int64)


@dataclass
class Anatomy:
    labels: np.ndarray
    class_means: np.ndarray


def _smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    """Zero-mean smooth random field scaled to max |value| = 1"""
    raw = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="wrap")
    raw = raw - raw.mean()
    peak = np.abs(raw).max()
    return raw / peak if peak > 0 else raw


def sample_anatomy(spec: PhantomSpec, seed: int, subject_index: int) -> Anatomy:
    """
    Nested structures: a perturbed ellipse with an outer ring, an interior split
    into two bodies by a smooth field, and one small disk.
    """
    rng = np.random.default_rng(derive_seed(seed, 1, subject_index))
    size = spec.image_size
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = (size - 1) / 2 + rng.uniform(-0.05, 0.05) * size
    cx = (size - 1) / 2 + rng.uniform(-0.05, 0.05) * size
    ry = rng.uniform(0.36, 0.44) * size
    rx = rng.uniform(0.36, 0.44) * size
    radius = np.sqrt(((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2)
    radius = radius + 0.08 * _smooth_field(rng, size, size / 8)

    fine = np.zeros((size, size), dtype=np.int64)
    inside = radius <= 1.0
    interior = radius <= rng.uniform(0.72, 0.8)
    fine[inside] = 1
    angle = rng.uniform(0, 2 * math.pi)
    split = (rows - cy) * math.sin(angle) + (cols - cx) * math.cos(angle)
    split = split / size + 0.1 * _smooth_field(rng, size, size / 6)
    fine[interior & (split >= 0)] = 2
    fine[interior & (split < 0)] = 3

    small_radius = max(1.5, 0.08 * size)
    candidates = np.argwhere(radius <= 0.45)
    centre = candidates[rng.integers(len(candidates))]
    small = (rows - centre[0]) ** 2 + (cols - centre[1]) ** 2 <= small_radius ** 2
    fine[small & interior] = 4

    labels = np.asarray(CLASS_MERGES[spec.class_count], dtype=np.uint8)[fine]
    class_means = np.array([rng.uniform(lo, hi) for lo, hi in spec.bands])
    return Anatomy(labels=labels, class_means=class_means)


def base_rendering(spec: PhantomSpec, anatomy: Anatomy) -> np.ndarray:
    """Noise-free, site-independent float image"""
    base = anatomy.class_means[anatomy.labels]
    if spec.smoothing_sigma > 0:
        base = ndimage.gaussian_filter(base, sigma=spec.smoothing_sigma, mode="nearest")
    return base


def bias_field(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    """Strictly positive low-frequency field 1 + amplitude * f, |f| <= 1"""
    if amplitude == 0:
        return np.ones((size, size))
    return 1.0 + amplitude * _smooth_field(rng, size, size / 3)


def render(spec: PhantomSpec, anatomy: Anatomy, site: SiteTransform, rng: np.random.Generator) -> np.ndarray:
    """
    Render an anatomy through a site: map(base + noise) * bias + site noise

    Returns:
        uint8 image
    """
    size = spec.image_size
    values = base_rendering(spec, anatomy)
    if spec.noise_sigma > 0:
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
    values = site.intensity_map(np.clip(values, 0.0, LEVELS - 1))
    values = values * bias_field(rng, size, site.bias_amplitude)
    if site.noise_sigma > 0:
        values = values + rng.normal(0.0, site.noise_sigma, size=values.shape)
    return np.clip(np.round(values), 0, LEVELS - 1).astype(np.uint8)


def render_subject(spec: PhantomSpec, site: SiteTransform, seed: int, subject_index: int) -> Tuple[np.ndarray, np.ndarray]:
    """Image and mask of one subject scanned at one site"""
    anatomy = sample_anatomy(spec, seed, subject_index)
    rng = np.random.default_rng(derive_seed(seed, 2, subject_index))
    return render(spec, anatomy, site, rng), anatomy.labels.copy()


def split_counts(n: int) -> Tuple[int, int, int]:
    """Train / val / test sizes for n images (60 / 15 / 25, rounded half up)"""
    n_train = int(math.floor(n * SPLIT_FRACTIONS[0] + 0.5))
    n_val = int(math.floor(n * SPLIT_FRACTIONS[1] + 0.5))
    return n_train, n_val, n - n_train - n_val


@dataclass
class SiteData:
    transform: SiteTransform
    images: np.ndarray
    masks: np.ndarray
    subject_ids: np.ndarray
    splits: Dict[str, np.ndarray]


@dataclass
class PhantomDataset:
    spec: PhantomSpec
    seed: int
    sites: Dict[str, SiteData]

    @property
    def site_names(self) -> List[str]:
        return list(self.sites.keys())

    def split(self, site: str, name: str) -> Tuple[np.ndarray, np.ndarray]:
        """(images, masks) of one split of one site"""
        if site not in self.sites:
            raise KeyError(f"Unknown site '{site}'. Available: {', '.join(self.sites)}")
        if name not in SPLIT_NAMES:
            raise KeyError(f"Unknown split '{name}'. Available: {', '.join(SPLIT_NAMES)}")
        data = self.sites[site]
        indices = data.splits[name]
        return data.images[indices], data.masks[indices]


def generate(spec: PhantomSpec, sites: Sequence[SiteTransform], n_per_site: int, seed: int) -> PhantomDataset:
    """
    Generate a multi-site phantom dataset

    Args:
        spec: Anatomy and rendering settings
        sites: One SiteTransform per site, in order
        n_per_site: Subjects per site (>= 8)
        seed: Global seed

    Returns:
        PhantomDataset with train / val / test index splits per site
    """
    if n_per_site < 8:
        raise ValueError(f"n-per-site must be >= 8, got {n_per_site}")
    names = [site.name for site in sites]
    if len(set(names)) != len(names):
        raise ValueError(f"Site names must be unique, got {names}")
    data: Dict[str, SiteData] = {}
    n_train, n_val, _ = split_counts(n_per_site)
    for site_index, site in enumerate(sites):
        subject_ids = np.arange(site_index * n_per_site, (site_index + 1) * n_per_site)
        rendered = [render_subject(spec, site, seed, int(subject)) for subject in subject_ids]
        order = np.random.default_rng(derive_seed(seed, 3, site_index)).permutation(n_per_site)
        splits = {
            "train": np.sort(order[:n_train]),
            "val": np.sort(order[n_train:n_train + n_val]),
            "test": np.sort(order[n_train + n_val:]),
        }
        data[site.name] = SiteData(
            transform=site,
            images=np.stack([image for image, _ in rendered]),
            masks=np.stack([mask for _, mask in rendered]),
            subject_ids=subject_ids,
            splits=splits
        )
    return PhantomDataset(spec=spec, seed=seed, sites=data)
