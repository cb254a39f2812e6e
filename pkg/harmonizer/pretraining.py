"""
Harmonizer Pretraining
Teaches the harmonizer to restore source images from random intensity
augmentations (L1 + DSSIM), keeping the best-validation parameters.
"""

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import torch

from augmentation.intensity_maps import AugmentationSpec, apply, augment_batch
from config.config import TrainConfig
from harmonizer.network import HarmonizerNet
from harmonizer.ssim import SsimConfig, reconstruction_loss
from numerics.optim import AdamState, adam_step
from numerics.tensor_ops import derive_seed, to_batch
from utils.errors import DivergenceError, NonFiniteGradientError

CURVE_COLUMNS = ["step", "loss", "val_loss"]


@dataclass
class PretrainResult:
    net: HarmonizerNet
    curve: pd.DataFrame
    best_step: int
    best_val_loss: float


@torch.no_grad()
def validation_loss(net: HarmonizerNet, originals: torch.Tensor, augmented: torch.Tensor,
                    ssim_cfg: SsimConfig = SsimConfig(), batch_size: int = 32) -> float:
    """Mean reconstruction loss over a fixed augmented validation set"""
    losses = []
    for start in range(0, originals.shape[0], batch_size):
        restored = net(augmented[start:start + batch_size])
        batch_loss = reconstruction_loss(restored, originals[start:start + batch_size], ssim_cfg)
        losses.append(batch_loss.item() * restored.shape[0])
    return float(np.sum(losses) / max(originals.shape[0], 1))


def pretrain(
    net: HarmonizerNet,
    train_images: np.ndarray,
    val_images: np.ndarray,
    spec: AugmentationSpec,
    cfg: TrainConfig,
    ssim_cfg: SsimConfig = SsimConfig(),
    verbose: bool = True
) -> PretrainResult:
    """
    Pretrain the harmonizer to invert augmentations of source images

    Args:
        net: Harmonizer trained in place
        train_images: (N, H, W) uint8 source training images
        val_images: (M, H, W) uint8 source validation images
        spec: Augmentation family (no OOD threshold)
        cfg: Optimisation settings
        ssim_cfg: SSIM window and constants
        verbose: Print progress lines

    Returns:
        PretrainResult holding the best-validation parameters
    """
    train_images = np.asarray(train_images)
    val_originals = to_batch(val_images)
    val_augmented = to_batch(augment_batch(spec, val_images, derive_seed(cfg.seed, 11)))
    best_val = validation_loss(net, val_originals, val_augmented, ssim_cfg)
    best_state = copy.deepcopy(net.state_dict())
    best_step = 0
    if verbose:
        print(f"📊 Initial harmonizer validation loss: {best_val:.4f}")
    if cfg.iterations == 0:
        return PretrainResult(net, pd.DataFrame(columns=CURVE_COLUMNS), best_step, best_val)

    state = AdamState.create(
        dict(net.named_parameters()),
        learning_rate=cfg.learning_rate,
        decay_factor=cfg.decay_factor,
        decay_period=cfg.decay_period
    )
    rng = np.random.default_rng(derive_seed(cfg.seed, 12))
    rows = []
    n_train = train_images.shape[0]
    for step in range(1, cfg.iterations + 1):
        indices = rng.choice(n_train, size=cfg.batch_size, replace=cfg.batch_size > n_train)
        originals = train_images[indices]
        augmented = np.stack([
            apply(spec, image, derive_seed(cfg.seed, 13, step, k)) for k, image in enumerate(originals)
        ])
        loss = reconstruction_loss(net(to_batch(augmented)), to_batch(originals), ssim_cfg)
        if not torch.isfinite(loss):
            net.load_state_dict(best_state)
            raise DivergenceError(f"Harmonizer loss became non-finite at step {step}", best_step)
        state.zero_grad()
        loss.backward()
        try:
            adam_step(dict(net.named_parameters()), state)
        except NonFiniteGradientError as e:
            net.load_state_dict(best_state)
            raise DivergenceError(f"{e} at step {step}", best_step) from e

        val_loss = float("nan")
        if step % cfg.val_every == 0 or step == cfg.iterations:
            val_loss = validation_loss(net, val_originals, val_augmented, ssim_cfg)
            if val_loss < best_val:
                best_val, best_step = val_loss, step
                best_state = copy.deepcopy(net.state_dict())
        if step % cfg.log_every == 0 or step == cfg.iterations or not np.isnan(val_loss):
            rows.append({"step": step, "loss": float(loss.item()), "val_loss": val_loss})
            if verbose and (step % cfg.log_every == 0 or step == cfg.iterations):
                print(f"  step {step:>6}/{cfg.iterations}  loss {loss.item():.4f}  val {val_loss:.4f}")

    net.load_state_dict(best_state)
    if verbose:
        print(f"✅ Harmonizer pretrained: best validation loss {best_val:.4f} at step {best_step}")
    return PretrainResult(net, pd.DataFrame(rows, columns=CURVE_COLUMNS), best_step, best_val)
