"""
Artifact Store
Run directory layout, checkpoints, metric tables, the run manifest and the
single-writer lock
"""

import json
import os
import time
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional

import pandas as pd
import torch.nn as nn

from utils.checkpoint_archive import module_tensors, read_archive, split_meta, write_archive
from utils.errors import MissingArtifactError, RunLockedError

FLOAT_FORMAT = "%.17g"


class ArtifactStore:
    """Declared artifact paths of one run directory"""

    def __init__(self, run_dir: str):
        """
        Initialize the store

        Args:
            run_dir: Output directory of the run
        """
        self.run_dir = os.path.abspath(run_dir)
        self.data_dir = os.path.join(self.run_dir, "data")
        self.checkpoint_dir = os.path.join(self.run_dir, "checkpoints")
        self.metrics_dir = os.path.join(self.run_dir, "metrics")
        self.samples_dir = os.path.join(self.run_dir, "samples")
        self.manifest_path = os.path.join(self.run_dir, "manifest.json")
        self.lock_path = os.path.join(self.run_dir, "run.lock")

    def checkpoint_path(self, name: str) -> str:
        return os.path.join(self.checkpoint_dir, f"{name}.hflw")

    def metrics_path(self, name: str) -> str:
        return os.path.join(self.metrics_dir, f"{name}.csv")

    def save_checkpoint(self, name: str, module: nn.Module, meta: Optional[Dict[str, float]] = None) -> str:
        """
        Archive a module's state with optional metadata scalars

        Returns:
            Path of the checkpoint
        """
        return write_archive(self.checkpoint_path(name), module_tensors(module, meta))

    def load_checkpoint(self, name: str, required_by: str = ""):
        """
        Read a checkpoint

        Returns:
            (state tensors, metadata scalars)
        """
        path = self.checkpoint_path(name)
        if not os.path.exists(path):
            stage = f" (needed by {required_by})" if required_by else ""
            raise MissingArtifactError(f"Checkpoint not found: {path}{stage}")
        return split_meta(read_archive(path))

    def has_checkpoint(self, name: str) -> bool:
        return os.path.exists(self.checkpoint_path(name))

    def save_table(self, name: str, table: pd.DataFrame) -> str:
        """Write a metric table as CSV with 17 significant digits"""
        path = self.metrics_path(name)
        os.makedirs(self.metrics_dir, exist_ok=True)
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    def load_table(self, name: str) -> pd.DataFrame:
        path = self.metrics_path(name)
        if not os.path.exists(path):
            raise MissingArtifactError(f"Metric table not found: {path}")
        return pd.read_csv(path, keep_default_na=True)

    def write_resolved_config(self, text: str) -> str:
        os.makedirs(self.run_dir, exist_ok=True)
        path = os.path.join(self.run_dir, "resolved_config.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def read_manifest(self) -> Dict:
        if not os.path.exists(self.manifest_path):
            return {"stages": {}}
        with open(self.manifest_path, "r", encoding="utf-8") as f:
            return json.load(f)

    def record_stage(
        self,
        stage: str,
        config_hash: str,
        code_version: str,
        checkpoints: List[str],
        metrics: List[str],
        seconds: float,
        data: Optional[List[str]] = None
    ) -> Dict:
        """
        Add one stage's artifacts to manifest.json, written atomically

        Returns:
            The updated manifest
        """
        manifest = self.read_manifest()
        manifest["config_hash"] = config_hash
        manifest["code_version"] = code_version
        manifest.setdefault("stages", {})[stage] = {
            "checkpoints": [os.path.relpath(p, self.run_dir) for p in checkpoints],
            "metrics": [os.path.relpath(p, self.run_dir) for p in metrics],
            "data": [os.path.relpath(p, self.run_dir) for p in (data or [])],
            "wall_clock_seconds": round(seconds, 3),
        }
        os.makedirs(self.run_dir, exist_ok=True)
        temporary = f"{self.manifest_path}.tmp"
        with open(temporary, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        os.replace(temporary, self.manifest_path)
        return manifest

    @contextmanager
    def lock(self) -> Iterator[None]:
        """Hold run.lock for the duration of a stage"""
        os.makedirs(self.run_dir, exist_ok=True)
        try:
            descriptor = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(
                f"Output directory is locked by another run: {self.lock_path} (remove it if no run is active)"
            )
        try:
            os.write(descriptor, f"{os.getpid()} {time.time():.0f}\n".encode("ascii"))
            os.close(descriptor)
            yield
        finally:
            if os.path.exists(self.lock_path):
                os.remove(self.lock_path)


# Store instances per run directory
_artifact_stores: Dict[str, ArtifactStore] = {}


def get_artifact_store(run_dir: str) -> ArtifactStore:
    """Get or create the ArtifactStore of a run directory"""
    key = os.path.abspath(run_dir)
    if key not in _artifact_stores:
        _artifact_stores[key] = ArtifactStore(key)
    return _artifact_stores[key]
