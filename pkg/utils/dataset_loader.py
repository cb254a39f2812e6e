"""
Dataset Loader
Saves and loads phantom datasets as a directory tree of binary PGM files
with a flat key=value manifest
"""

import os
from pathlib import Path
from typing import Dict, List

import numpy as np
from dotenv import dotenv_values
from PIL import Image

from analysis.phantoms import SPLIT_NAMES, PhantomDataset, PhantomSpec, SiteData, SiteTransform
from augmentation.intensity_maps import MonotoneMap
from utils.errors import MissingArtifactError

MANIFEST_NAME = "manifest.txt"


def _join(values) -> str:
    return ",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(int(v)) for v in values)


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip()], dtype=np.float64)


def _ints(text: str) -> np.ndarray:
    return np.array([int(v) for v in text.split(",") if v.strip()], dtype=np.int64)


def write_pgm(path: Path, image: np.ndarray):
    """Write an 8-bit grayscale image as binary PGM (P5)"""
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PPM")


def read_pgm(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        return np.array(image.convert("L"), dtype=np.uint8)


class DatasetLoader:
    """Loads and stores phantom datasets"""

    def __init__(self, data_dir: str):
        """
        Initialize the loader

        Args:
            data_dir: Dataset root (contains manifest.txt and one folder per site)
        """
        self.data_dir = Path(data_dir)

    @property
    def manifest_path(self) -> Path:
        return self.data_dir / MANIFEST_NAME

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def manifest_items(self, dataset: PhantomDataset) -> Dict[str, str]:
        """Flat manifest: spec, seed, per-site transform LUTs and split assignments"""
        spec = dataset.spec
        items = {
            "seed": str(dataset.seed),
            "image-size": str(spec.image_size),
            "class-count": str(spec.class_count),
            "bands": ";".join(f"{lo!r}:{hi!r}" for lo, hi in spec.bands),
            "smoothing-sigma": repr(spec.smoothing_sigma),
            "noise-sigma": repr(spec.noise_sigma),
            "sites": ",".join(dataset.site_names),
        }
        for name, data in dataset.sites.items():
            transform = data.transform
            items[f"site.{name}.lut"] = _join(transform.lut())
            items[f"site.{name}.knots-in"] = _join(transform.intensity_map.knots_in)
            items[f"site.{name}.knots-out"] = _join(transform.intensity_map.knots_out)
            items[f"site.{name}.noise-sigma"] = repr(float(transform.noise_sigma))
            items[f"site.{name}.bias-amplitude"] = repr(float(transform.bias_amplitude))
            items[f"site.{name}.subjects"] = _join(data.subject_ids)
            for split in SPLIT_NAMES:
                items[f"site.{name}.{split}"] = _join(data.splits[split])
        return items

    def save(self, dataset: PhantomDataset) -> List[str]:
        """
        Write the dataset tree; rewriting the same dataset yields identical bytes

        Returns:
            Written file paths (manifest last)
        """
        written = []
        for name, data in dataset.sites.items():
            for kind, arrays in (("images", data.images), ("masks", data.masks)):
                folder = self.data_dir / name / kind
                folder.mkdir(parents=True, exist_ok=True)
                for index, array in enumerate(arrays):
                    path = folder / f"{index:04d}.pgm"
                    write_pgm(path, array)
                    written.append(str(path))
        lines = [f"{key}={value}\n" for key, value in self.manifest_items(dataset).items()]
        temporary = self.manifest_path.with_suffix(".tmp")
        temporary.write_text("".join(lines), encoding="utf-8")
        os.replace(temporary, self.manifest_path)
        written.append(str(self.manifest_path))
        return written

    def load(self) -> PhantomDataset:
        """Read a dataset tree written by save"""
        if not self.exists():
            raise MissingArtifactError(f"Dataset manifest not found: {self.manifest_path} (run gen-data first)")
        items = {k: v for k, v in dotenv_values(self.manifest_path).items() if v is not None}
        bands = tuple(tuple(float(x) for x in band.split(":")) for band in items["bands"].split(";"))
        spec = PhantomSpec(
            image_size=int(items["image-size"]),
            class_count=int(items["class-count"]),
            bands=bands,
            smoothing_sigma=float(items["smoothing-sigma"]),
            noise_sigma=float(items["noise-sigma"])
        )
        sites: Dict[str, SiteData] = {}
        for name in items["sites"].split(","):
            prefix = f"site.{name}"
            transform = SiteTransform(
                name=name,
                intensity_map=MonotoneMap(_floats(items[f"{prefix}.knots-in"]), _floats(items[f"{prefix}.knots-out"])),
                noise_sigma=float(items[f"{prefix}.noise-sigma"]),
                bias_amplitude=float(items[f"{prefix}.bias-amplitude"])
            )
            subject_ids = _ints(items[f"{prefix}.subjects"])
            images = np.stack([read_pgm(self.data_dir / name / "images" / f"{i:04d}.pgm")
                               for i in range(len(subject_ids))])
            masks = np.stack([read_pgm(self.data_dir / name / "masks" / f"{i:04d}.pgm")
                              for i in range(len(subject_ids))])
            splits = {split: _ints(items[f"{prefix}.{split}"]) for split in SPLIT_NAMES}
            sites[name] = SiteData(transform=transform, images=images, masks=masks,
                                   subject_ids=subject_ids, splits=splits)
        return PhantomDataset(spec=spec, seed=int(items["seed"]), sites=sites)
