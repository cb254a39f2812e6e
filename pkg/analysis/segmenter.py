"""
Toy Segmenter
Small encoder-decoder segmentation network (ReLU, batch normalisation,
stride-2 downsampling) trained on the source site without intensity
augmentation, plus per-image segmentation evaluation.
"""

import copy
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from analysis.segmentation_metrics import dice, mean_hd95, prediction_entropy
from config.config import TrainConfig
from numerics.layers import UShapedNet, seeded_init
from numerics.optim import AdamState, adam_step
from numerics.tensor_ops import DTYPE, derive_seed, to_batch
from utils.errors import DivergenceError, NonFiniteGradientError

SEGMENTER_WIDTHS = (16, 32, 48, 64)


class ToySegmenter(nn.Module):
    """Per-pixel K-class softmax segmenter"""

    def __init__(self, class_count: int, image_size: int, widths: Sequence[int] = SEGMENTER_WIDTHS):
        super().__init__()
        self.class_count = class_count
        self.image_size = image_size
        self.net = UShapedNet(
            1, class_count, widths,
            convs_per_block=2,
            activation="relu",
            norm="batch",
            spatial=(image_size, image_size),
            zero_init_output=False
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits (N, K, H, W) for 0-255 inputs"""
        return self.net(x.to(DTYPE) / 255.0)

    @torch.no_grad()
    def predict_proba(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Softmax probabilities (N, K, H, W) in evaluation mode"""
        was_training = self.training
        self.eval()
        outputs = []
        for start in range(0, len(images), batch_size):
            logits = self(to_batch(images[start:start + batch_size]))
            outputs.append(torch.softmax(logits, dim=1).numpy())
        self.train(was_training)
        return np.concatenate(outputs) if outputs else np.empty((0, self.class_count, self.image_size, self.image_size))

    def predict(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(images), axis=1).astype(np.uint8)


@dataclass
class SegmenterResult:
    segmenter: ToySegmenter
    curve: pd.DataFrame
    best_step: int
    best_val_dice: float


def mean_dice(segmenter: ToySegmenter, images: np.ndarray, masks: np.ndarray) -> float:
    predictions = segmenter.predict(images)
    return float(np.mean([dice(p, m, segmenter.class_count)[1] for p, m in zip(predictions, masks)]))


def train_segmenter(
    train_images: np.ndarray,
    train_masks: np.ndarray,
    val_images: np.ndarray,
    val_masks: np.ndarray,
    class_count: int,
    cfg: TrainConfig,
    segmenter: Optional[ToySegmenter] = None,
    verbose: bool = True
) -> SegmenterResult:
    """
    Train the segmenter with cross-entropy on source images, keeping the
    best validation-Dice parameters

    Args:
        train_images, train_masks: Source training split
        val_images, val_masks: Source validation split
        class_count: Labels including background
        cfg: Optimisation settings
        segmenter: Network to train (built with a seeded init if None)
        verbose: Print progress lines
    """
    train_images = np.asarray(train_images)
    train_masks = np.asarray(train_masks)
    if segmenter is None:
        with seeded_init(derive_seed(cfg.seed, 21)):
            segmenter = ToySegmenter(class_count, train_images.shape[-1])
    best_dice = mean_dice(segmenter, val_images, val_masks)
    best_state = copy.deepcopy(segmenter.state_dict())
    best_step = 0
    if cfg.iterations == 0:
        return SegmenterResult(segmenter, pd.DataFrame(columns=["step", "loss", "val_dice"]), 0, best_dice)

    state = AdamState.create(
        dict(segmenter.named_parameters()),
        learning_rate=cfg.learning_rate,
        decay_factor=cfg.decay_factor,
        decay_period=cfg.decay_period
    )
    rng = np.random.default_rng(derive_seed(cfg.seed, 22))
    n_train = train_images.shape[0]
    batch_size = max(2, cfg.batch_size)
    rows = []
    segmenter.train()
    for step in range(1, cfg.iterations + 1):
        indices = rng.choice(n_train, size=batch_size, replace=batch_size > n_train)
        logits = segmenter(to_batch(train_images[indices]))
        target = torch.from_numpy(train_masks[indices].astype(np.int64))
        loss = F.cross_entropy(logits, target)
        if not torch.isfinite(loss):
            segmenter.load_state_dict(best_state)
            raise DivergenceError(f"Segmenter loss became non-finite at step {step}", best_step)
        state.zero_grad()
        loss.backward()
        try:
            adam_step(dict(segmenter.named_parameters()), state)
        except NonFiniteGradientError as e:
            segmenter.load_state_dict(best_state)
            raise DivergenceError(f"{e} at step {step}", best_step) from e

        if step % cfg.val_every == 0 or step == cfg.iterations:
            val_dice = mean_dice(segmenter, val_images, val_masks)
            rows.append({"step": step, "loss": float(loss.item()), "val_dice": val_dice})
            if val_dice > best_dice:
                best_dice, best_step = val_dice, step
                best_state = copy.deepcopy(segmenter.state_dict())
            if verbose:
                print(f"  step {step:>6}/{cfg.iterations}  loss {loss.item():.4f}  val dice {val_dice:.4f}")

    segmenter.load_state_dict(best_state)
    segmenter.eval()
    if verbose:
        print(f"✅ Segmenter trained: best validation Dice {best_dice:.4f} at step {best_step}")
    return SegmenterResult(segmenter, pd.DataFrame(rows, columns=["step", "loss", "val_dice"]), best_step, best_dice)


def evaluate_segmentation(segmenter: ToySegmenter, images: np.ndarray, masks: np.ndarray) -> pd.DataFrame:
    """
    Per-image Dice, HD95 and prediction entropy

    Classes missing from a prediction or reference are listed in
    `missing_classes` and left out of that image's HD95 mean.
    """
    class_count = segmenter.class_count
    probabilities = segmenter.predict_proba(images)
    predictions = np.argmax(probabilities, axis=1)
    entropies = prediction_entropy(probabilities)
    rows = []
    for index, (prediction, mask) in enumerate(zip(predictions, masks)):
        per_class, mean = dice(prediction, mask, class_count)
        hd, missing = mean_hd95(prediction, mask, class_count)
        row: Dict[str, object] = {"image": index}
        row.update({f"dice_{label}": float(per_class[label]) for label in range(class_count)})
        row.update({
            "dice_mean": mean,
            "hd95_mean": hd,
            "missing_classes": ";".join(str(label) for label in missing),
            "entropy": float(entropies[index]),
        })
        rows.append(row)
    return pd.DataFrame(rows)


def summarize_segmentation(table: pd.DataFrame) -> Dict[str, float]:
    """Mean Dice (x100), mean HD95 over images with a value, mean entropy"""
    hd = table["hd95_mean"].dropna()
    return {
        "dice": float(table["dice_mean"].mean() * 100.0),
        "hd95": float(hd.mean()) if len(hd) else float("nan"),
        "entropy": float(table["entropy"].mean()),
        "flagged_images": int((table["missing_classes"] != "").sum()),
    }
