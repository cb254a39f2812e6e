"""
Flow Training
Guided maximum-likelihood training of the source flow with Adam, periodic
snapshots and divergence recovery.
"""

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import torch

from augmentation.intensity_maps import AugmentationSpec, apply_ood
from config.config import TrainConfig
from flows.flow_model import FlowModel, mean_bpd
from flows.guidance import GuidanceConfig, guided_terms, ood_count
from numerics.optim import AdamState, adam_step
from numerics.tensor_ops import derive_seed, make_generator, to_batch
from utils.errors import DivergenceError, NonFiniteGradientError

CURVE_COLUMNS = ["step", "nll", "bpd", "loss", "margin", "aug_unclipped"]


@dataclass
class FlowTrainingResult:
    """Outcome of train_flow"""

    model: FlowModel
    initial_val_bpd: float
    final_val_bpd: float
    curve: pd.DataFrame
    last_good_step: int


def train_flow(
    train_images: np.ndarray,
    val_images: np.ndarray,
    model: FlowModel,
    train_cfg: TrainConfig,
    guidance_cfg: Optional[GuidanceConfig] = None,
    aug_spec: Optional[AugmentationSpec] = None,
    verbose: bool = True
) -> FlowTrainingResult:
    """
    Train a flow on source images

    Each iteration draws a batch of source images; when guidance is enabled
    a share of the batch is replaced by OOD augmentations of those images.

    Args:
        train_images: (N, H, W) uint8 source training images
        val_images: (M, H, W) uint8 source validation images
        model: Flow to train in place
        train_cfg: Optimisation settings
        guidance_cfg: Margin / OOD settings; None trains on plain NLL
        aug_spec: Augmentation family for OOD samples
        verbose: Print progress lines

    Returns:
        FlowTrainingResult with validation BPD before and after training

    Raises:
        DivergenceError: Loss or gradient became non-finite (model restored)
    """
    train_images = np.asarray(train_images)
    val_batch = to_batch(val_images)
    val_seed = derive_seed(train_cfg.seed, 7)
    initial_val_bpd = mean_bpd(model, val_batch, val_seed)
    if verbose:
        print(f"📊 Initial source validation BPD: {initial_val_bpd:.4f}")

    if train_cfg.iterations == 0:
        return FlowTrainingResult(model, initial_val_bpd, initial_val_bpd, pd.DataFrame(columns=CURVE_COLUMNS), 0)

    guided = guidance_cfg is not None and aug_spec is not None and guidance_cfg.ood_fraction > 0
    units = guidance_cfg.margin_units if guidance_cfg is not None else "bpd"
    cfg = guidance_cfg if guidance_cfg is not None else GuidanceConfig(ood_fraction=0.0, margin_units=units)

    state = AdamState.create(
        dict(model.named_parameters()),
        learning_rate=train_cfg.learning_rate,
        decay_factor=train_cfg.decay_factor,
        decay_period=train_cfg.decay_period
    )
    rng = np.random.default_rng(derive_seed(train_cfg.seed, 1))
    snapshot = copy.deepcopy(model.state_dict())
    last_good_step = 0
    rows = []
    n_train = train_images.shape[0]
    batch_size = train_cfg.batch_size

    model.train()
    for step in range(1, train_cfg.iterations + 1):
        indices = rng.choice(n_train, size=batch_size, replace=batch_size > n_train)
        batch = train_images[indices]
        n_aug = ood_count(batch_size, cfg.ood_fraction) if guided else 0
        originals = batch[:n_aug]
        augmented = np.stack([
            apply_ood(aug_spec, image, derive_seed(train_cfg.seed, 2, step, k), cfg.ood_threshold)
            for k, image in enumerate(originals)
        ]) if n_aug else np.empty((0, *batch.shape[1:]), dtype=np.uint8)

        generator = make_generator(derive_seed(train_cfg.seed, 3, step))
        src = to_batch(batch[n_aug:])
        aug = to_batch(augmented)
        terms = guided_terms(src, aug, model, cfg, aug_originals=to_batch(originals), generator=generator)
        loss = terms.loss

        if not torch.isfinite(loss):
            model.load_state_dict(snapshot)
            raise DivergenceError(
                f"Flow loss became non-finite at step {step}; restored step {last_good_step}", last_good_step
            )
        state.zero_grad()
        loss.backward()
        try:
            adam_step(dict(model.named_parameters()), state)
        except NonFiniteGradientError as e:
            model.load_state_dict(snapshot)
            raise DivergenceError(f"{e} at step {step}; restored step {last_good_step}", last_good_step) from e

        if step % train_cfg.snapshot_every == 0 or step == train_cfg.iterations:
            snapshot = copy.deepcopy(model.state_dict())
            last_good_step = step

        if step % train_cfg.log_every == 0 or step == 1 or step == train_cfg.iterations:
            with torch.no_grad():
                eval_generator = make_generator(derive_seed(train_cfg.seed, 4, step))
                nll = model.nll(src, generator=eval_generator).mean().item()
            step_bpd = nll / (np.log(2.0) * model.elements)
            rows.append({"step": step, "nll": nll, "bpd": step_bpd, "loss": float(loss.item()),
                         "margin": terms.margin, "aug_unclipped": terms.unclipped_fraction})
            if verbose:
                guide = f"  c {terms.margin:.3f}  unclipped {terms.unclipped_fraction:.2f}" if guided else ""
                print(f"  step {step:>6}/{train_cfg.iterations}  nll {nll:.3f}  bpd {step_bpd:.4f}  "
                      f"lr {state.learning_rate:.2e}{guide}")

    model.eval()
    final_val_bpd = mean_bpd(model, val_batch, val_seed)
    if verbose:
        print(f"✅ Flow trained: validation BPD {initial_val_bpd:.4f} -> {final_val_bpd:.4f}")
    return FlowTrainingResult(model, initial_val_bpd, final_val_bpd, pd.DataFrame(rows, columns=CURVE_COLUMNS),
                              last_good_step)
