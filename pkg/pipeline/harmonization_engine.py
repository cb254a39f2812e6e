"""
Harmonization Engine
Runs the pipeline stages (data generation, flow / harmonizer / segmenter
training, test-time adaptation, evaluation, sampling) over the declared
artifact paths of one run directory
"""

import hashlib
import os
import time
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from adaptation.adapter import AdaptConfig, adapt
from analysis.create_report_tables import build_metric_table, save_table, with_footer
from analysis.histogram_metrics import hist_match, normalized_histogram, wasserstein_hist
from analysis.phantoms import PhantomDataset, PhantomSpec, generate
from analysis.segmenter import ToySegmenter, evaluate_segmentation, summarize_segmentation, train_segmenter
from analysis.site_presets import SitePresets
from augmentation.intensity_maps import AugmentationSpec, apply_ood
from config.config import CODE_VERSION, RunConfig
from flows.flow_model import FlowModel, sample
from flows.guidance import GuidanceConfig, separation_gap
from flows.training import train_flow
from harmonizer.network import HarmonizerNet, build_harmonizer
from harmonizer.pretraining import pretrain
from numerics.layers import seeded_init
from numerics.tensor_ops import derive_seed, set_determinism, to_batch, to_images
from utils.artifact_store import ArtifactStore, get_artifact_store
from utils.checkpoint_archive import load_module_state
from utils.dataset_loader import DatasetLoader, write_pgm
from utils.errors import ConfigError, ContractViolation

ADAPT_SUMMARY_COLUMNS = ["target", "stopping", "stop_epoch", "reached", "reason"]


def _file_digest(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


class HarmonizationEngine:
    """Manages the stages of one harmonization run"""

    def __init__(self, config: RunConfig, verbose: bool = True):
        """
        Initialize the engine

        Args:
            config: Fully resolved run configuration
            verbose: Print stage banners and training progress
        """
        self.config = config
        self.verbose = verbose
        self.store: ArtifactStore = get_artifact_store(config.output_dir)
        self.loader = DatasetLoader(self.store.data_dir)
        self._dataset: Optional[PhantomDataset] = None

    def _log(self, message: str):
        if self.verbose:
            print(message)

    @contextmanager
    def _stage(self, name: str, outputs: Dict[str, List[str]]) -> Iterator[None]:
        """Lock the run directory, echo the resolved config and record the stage in the manifest"""
        with self.store.lock():
            self.store.write_resolved_config(self.config.to_text())
            self._log("\n" + "=" * 80)
            self._log(f"🚀 {name.upper()}  (seed {self.config.seed}, output {self.store.run_dir})")
            self._log("=" * 80)
            set_determinism(self.config.seed)
            start = time.time()
            yield
            elapsed = time.time() - start
            self.store.record_stage(
                name,
                config_hash=self.config.config_hash(),
                code_version=CODE_VERSION,
                checkpoints=outputs.get("checkpoints", []),
                metrics=outputs.get("metrics", []),
                seconds=elapsed,
                data=outputs.get("data", [])
            )
            self._log(f"✅ {name} finished in {elapsed:.1f}s")

    # ------------------------------------------------------------------
    # Artifact access
    # ------------------------------------------------------------------

    def dataset(self) -> PhantomDataset:
        """The run's phantom dataset (read once from the data directory)"""
        if self._dataset is None:
            dataset = self.loader.load()
            if dataset.spec.image_size != self.config.image_size:
                raise ConfigError(
                    f"Dataset images are {dataset.spec.image_size}x{dataset.spec.image_size} but image-size is "
                    f"{self.config.image_size}; rerun gen-data"
                )
            if self.config.source_site not in dataset.sites:
                raise ConfigError(f"source-site '{self.config.source_site}' is not in the dataset")
            self._dataset = dataset
        return self._dataset

    def target_sites(self, targets: Optional[List[str]] = None) -> List[str]:
        """Requested targets, or every non-source site of the dataset"""
        names = self.dataset().site_names
        if targets:
            unknown = [t for t in targets if t not in names]
            if unknown:
                raise ConfigError(f"Unknown target sites: {unknown}. Available: {', '.join(names)}")
            return list(targets)
        return [name for name in names if name != self.config.source_site]

    def load_flow(self, required_by: str) -> Tuple[FlowModel, Dict[str, float]]:
        state, meta = self.store.load_checkpoint("flow", required_by)
        flow = FlowModel.from_architecture(meta)
        load_module_state(flow, state)
        flow.eval()
        return flow, meta

    def load_harmonizer(self, name: str, required_by: str) -> HarmonizerNet:
        state, meta = self.store.load_checkpoint(name, required_by)
        net = HarmonizerNet("affine-head" if meta.get("affine_head", 0.0) > 0.5 else "unet")
        load_module_state(net, state)
        net.eval()
        return net

    def load_segmenter(self, required_by: str) -> ToySegmenter:
        state, meta = self.store.load_checkpoint("segmenter", required_by)
        segmenter = ToySegmenter(int(meta["class_count"]), int(meta["image_size"]))
        load_module_state(segmenter, state)
        segmenter.eval()
        return segmenter

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------

    def gen_data(self) -> PhantomDataset:
        """Generate the multi-site phantom dataset and write it to the data directory"""
        outputs: Dict[str, List[str]] = {}
        with self._stage("gen-data", outputs):
            spec = PhantomSpec(image_size=self.config.image_size, class_count=self.config.data_class_count)
            sites = [SitePresets.get_site(name) for name in self.config.data_sites]
            dataset = generate(spec, sites, self.config.data_n_per_site, self.config.seed)
            written = self.loader.save(dataset)
            outputs["data"] = [written[-1]]
            self._dataset = dataset
            self._log(f"📂 {len(sites)} sites x {self.config.data_n_per_site} images written to {self.loader.data_dir}")
        return dataset

    def train_flow(self) -> Dict[str, float]:
        """Train the source flow under the guided objective"""
        outputs: Dict[str, List[str]] = {}
        with self._stage("train-flow", outputs):
            dataset = self.dataset()
            source = self.config.source_site
            train_images, _ = dataset.split(source, "train")
            val_images, _ = dataset.split(source, "val")
            size = self.config.image_size
            with seeded_init(derive_seed(self.config.seed, 41)):
                model = FlowModel(
                    (size, size),
                    depth=self.config.flow_depth,
                    dequant_mode=self.config.flow_dequant_mode,
                    dequant_layers=self.config.flow_dequant_layers
                )
            guidance = GuidanceConfig.from_run_config(self.config)
            aug_spec = AugmentationSpec.from_run_config(self.config)
            result = train_flow(
                train_images, val_images, model,
                self.config.train_config("flow"),
                guidance_cfg=guidance,
                aug_spec=aug_spec,
                verbose=self.verbose
            )
            held_out = np.stack([
                apply_ood(aug_spec, image, derive_seed(self.config.seed, 43, k), guidance.ood_threshold)
                for k, image in enumerate(val_images)
            ])
            gap = separation_gap(result.model, to_batch(val_images), to_batch(held_out),
                                 derive_seed(self.config.seed, 44))
            meta = {**model.architecture(), "source_val_bpd": result.final_val_bpd}
            outputs["checkpoints"] = [self.store.save_checkpoint("flow", result.model, meta)]
            outputs["metrics"] = [self.store.save_table("flow_curve", result.curve)]
            self._log(f"📊 Source validation BPD {result.initial_val_bpd:.4f} -> {result.final_val_bpd:.4f}")
            self._log(f"📊 NLL gap, OOD-augmented minus source validation: {gap:.3f} nats")
        return {"initial_val_bpd": result.initial_val_bpd, "final_val_bpd": result.final_val_bpd,
                "separation_gap": gap}

    def train_harmonizer(self) -> Dict[str, float]:
        """Pretrain the harmonizer to undo augmentations of source images"""
        outputs: Dict[str, List[str]] = {}
        with self._stage("train-harmonizer", outputs):
            dataset = self.dataset()
            train_images, _ = dataset.split(self.config.source_site, "train")
            val_images, _ = dataset.split(self.config.source_site, "val")
            net = build_harmonizer(self.config.harmonizer_variant, seed=derive_seed(self.config.seed, 42))
            result = pretrain(
                net, train_images, val_images,
                AugmentationSpec.from_run_config(self.config),
                self.config.train_config("harmonizer"),
                verbose=self.verbose
            )
            meta = {"affine_head": 1.0 if net.variant == "affine-head" else 0.0}
            outputs["checkpoints"] = [self.store.save_checkpoint("harmonizer", result.net, meta)]
            outputs["metrics"] = [self.store.save_table("harmonizer_curve", result.curve)]
        return {"best_step": result.best_step, "best_val_loss": result.best_val_loss}

    def train_segmenter(self) -> Dict[str, float]:
        """Train the toy segmenter on the source site (no intensity augmentation)"""
        outputs: Dict[str, List[str]] = {}
        with self._stage("train-segmenter", outputs):
            dataset = self.dataset()
            train_images, train_masks = dataset.split(self.config.source_site, "train")
            val_images, val_masks = dataset.split(self.config.source_site, "val")
            result = train_segmenter(
                train_images, train_masks, val_images, val_masks,
                dataset.spec.class_count,
                self.config.train_config("segmenter"),
                verbose=self.verbose
            )
            meta = {"class_count": dataset.spec.class_count, "image_size": dataset.spec.image_size}
            outputs["checkpoints"] = [self.store.save_checkpoint("segmenter", result.segmenter, meta)]
            outputs["metrics"] = [self.store.save_table("segmenter_curve", result.curve)]
        return {"best_step": result.best_step, "best_val_dice": result.best_val_dice}

    def adapt(self, targets: Optional[List[str]] = None) -> pd.DataFrame:
        """
        Adapt the pretrained harmonizer to each target site's test images

        The flow checkpoint is checked byte for byte before and after.

        Returns:
            Adaptation summary (one row per target)
        """
        outputs: Dict[str, List[str]] = {"checkpoints": [], "metrics": []}
        rows = []
        with self._stage("adapt", outputs):
            flow, flow_meta = self.load_flow("adapt")
            flow_digest = _file_digest(self.store.checkpoint_path("flow"))
            harmonizer = self.load_harmonizer("harmonizer", "adapt")
            task_head = self.load_segmenter("adapt") if self.store.has_checkpoint("segmenter") else None
            cfg = AdaptConfig.from_run_config(self.config, source_bpd_reference=flow_meta.get("source_val_bpd"))
            meta = {"affine_head": 1.0 if harmonizer.variant == "affine-head" else 0.0}
            for target in self.target_sites(targets):
                self._log(f"\n  🎯 Adapting to {target} (stopping: {self.config.adapt_stopping})")
                images, masks = self.dataset().split(target, "test")
                result = adapt(harmonizer, flow, images, cfg, task_head=task_head,
                               target_masks=masks if task_head is not None else None, verbose=self.verbose)
                outputs["checkpoints"].append(
                    self.store.save_checkpoint(f"harmonizer_adapted_{target}", result.harmonizer, meta)
                )
                outputs["metrics"].append(self.store.save_table(f"adapt_trace_{target}", result.trace))
                rows.append({
                    "target": target,
                    "stopping": self.config.adapt_stopping,
                    "stop_epoch": result.stop_epoch,
                    "reached": result.reached,
                    "reason": result.reason,
                })
                self._log(f"  ✅ {target}: stop epoch {result.stop_epoch} ({result.reason})")
            if _file_digest(self.store.checkpoint_path("flow")) != flow_digest:
                raise ContractViolation("Flow checkpoint changed during adaptation")

            summary = pd.DataFrame(rows, columns=ADAPT_SUMMARY_COLUMNS)
            summary_path = self.store.metrics_path("adapt_summary")
            if os.path.exists(summary_path):
                previous = self.store.load_table("adapt_summary")
                previous = previous[~previous["target"].isin(summary["target"])]
                summary = pd.concat([previous, summary], ignore_index=True)
                summary = summary.sort_values("target", kind="mergesort").reset_index(drop=True)
            outputs["metrics"].append(self.store.save_table("adapt_summary", summary))
        return summary

    def _score(self, segmenter: ToySegmenter, method: str, target: str, images: np.ndarray,
               masks: np.ndarray, reference_hist: np.ndarray) -> Dict:
        summary = summarize_segmentation(evaluate_segmentation(segmenter, images, masks))
        record = {
            "method": method,
            "target": target,
            "dice": summary["dice"],
            "hd95": summary["hd95"],
            "wd": wasserstein_hist(normalized_histogram(images), reference_hist),
            "entropy": summary["entropy"],
            "flagged_images": summary["flagged_images"],
        }
        self._log(f"  {method:<24} {target:<8} dice {record['dice']:7.3f}  hd95 {record['hd95']:7.3f}  "
                  f"wd {record['wd']:8.4f}")
        return record

    def evaluate(self, targets: Optional[List[str]] = None, no_harmonize: bool = False) -> pd.DataFrame:
        """
        Segment every target test split per method and build the metric table

        Args:
            targets: Target sites (default: every non-source site)
            no_harmonize: Only the baseline and hist-match rows (no harmonizer checkpoints needed)

        Returns:
            Metric table with the Friedman rank column
        """
        outputs: Dict[str, List[str]] = {}
        with self._stage("evaluate", outputs):
            dataset = self.dataset()
            segmenter = self.load_segmenter("evaluate")
            source = self.config.source_site
            source_images, source_masks = dataset.split(source, "test")
            reference_hist = normalized_histogram(source_images)
            pretrained = None if no_harmonize else self.load_harmonizer("harmonizer", "evaluate")

            records = []
            for target in self.target_sites(targets):
                images, masks = dataset.split(target, "test")
                records.append(self._score(segmenter, "baseline", target, images, masks, reference_hist))
                matched = np.stack([hist_match(image, reference_hist) for image in images])
                records.append(self._score(segmenter, "hist-match", target, matched, masks, reference_hist))
                if no_harmonize:
                    continue
                records.append(self._score(segmenter, "pretrained-harmonizer", target,
                                           pretrained.export(images), masks, reference_hist))
                adapted = self.load_harmonizer(f"harmonizer_adapted_{target}", "evaluate")
                records.append(self._score(segmenter, "harmonizing-flows", target,
                                           adapted.export(images), masks, reference_hist))
            records.append(self._score(segmenter, "source-oracle", source, source_images, source_masks,
                                       reference_hist))

            table = build_metric_table(records)
            final = with_footer(table)
            outputs["metrics"] = [
                self.store.save_table("evaluation", table),
                save_table(final, self.store.metrics_path("metric_table")),
            ]
        return final

    def sample(self, count: int) -> List[str]:
        """Draw images from the flow and write them as PGM files"""
        if count < 1:
            raise ConfigError(f"sample count must be >= 1, got {count}")
        outputs: Dict[str, List[str]] = {}
        with self._stage("sample", outputs):
            flow, _ = self.load_flow("sample")
            images = to_images(sample(flow, count, derive_seed(self.config.seed, 51)))
            os.makedirs(self.store.samples_dir, exist_ok=True)
            paths = []
            for index, image in enumerate(images):
                path = os.path.join(self.store.samples_dir, f"{index:04d}.pgm")
                write_pgm(path, image)
                paths.append(path)
            outputs["data"] = paths
            self._log(f"🖼️  {len(paths)} samples written to {self.store.samples_dir}")
        return paths
