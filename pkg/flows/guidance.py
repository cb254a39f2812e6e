"""
Guided Objective
Source likelihood maximization with margin-clipped suppression of the
likelihood of out-of-distribution augmentations.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from flows.flow_model import FlowModel
from utils.errors import ConfigError, ThresholdViolation

MARGIN_UNITS = ("bpd", "nats")
MARGIN_MODES = ("relative", "absolute")


@dataclass
class GuidanceConfig:
    """
    Attributes:
        margin_c: Clip level of augmented-sample NLL in 'absolute' mode
        ood_fraction: Share of each batch replaced by augmented samples
        ood_threshold: Minimum per-pixel MSE (0-255 scale) of an augmentation
        margin_units: Units of the NLL entering the objective ('bpd' or 'nats')
        margin_mode: 'relative' clips at margin_ratio times the batch's mean
            source NLL; 'absolute' clips at margin_c
        margin_ratio: Clip level over the source NLL in 'relative' mode
            (1.2 bpd against a source near 0.8 bpd)
    """

    margin_c: float = 1.2
    ood_fraction: float = 0.5
    ood_threshold: float = 100.0
    margin_units: str = "bpd"
    margin_mode: str = "relative"
    margin_ratio: float = 1.5

    def __post_init__(self):
        if self.margin_c <= 0:
            raise ConfigError(f"margin c must be positive, got {self.margin_c}")
        if not 0.0 <= self.ood_fraction <= 1.0:
            raise ConfigError(f"ood-fraction must lie in [0, 1], got {self.ood_fraction}")
        if self.ood_threshold <= 0:
            raise ConfigError(f"ood-threshold must be positive, got {self.ood_threshold}")
        if self.margin_units not in MARGIN_UNITS:
            raise ConfigError(f"margin units must be one of {MARGIN_UNITS}, got {self.margin_units}")
        if self.margin_mode not in MARGIN_MODES:
            raise ConfigError(f"margin mode must be one of {MARGIN_MODES}, got {self.margin_mode}")
        if self.margin_ratio <= 1.0:
            raise ConfigError(f"margin ratio must exceed 1, got {self.margin_ratio}")

    @classmethod
    def from_run_config(cls, config) -> "GuidanceConfig":
        return cls(
            margin_c=config.flow_margin_c,
            ood_fraction=config.flow_ood_fraction,
            ood_threshold=config.flow_ood_threshold,
            margin_units=config.flow_margin_units,
            margin_mode=config.flow_margin_mode,
            margin_ratio=config.flow_margin_ratio
        )

    def margin(self, source_nll: torch.Tensor) -> float:
        """Clip level for a batch whose per-sample source NLL is `source_nll`"""
        if self.margin_mode == "absolute" or source_nll.numel() == 0:
            return float(self.margin_c)
        return float(self.margin_ratio * source_nll.detach().mean().item())


@dataclass
class GuidedTerms:
    """Guided loss of one batch with its clipping statistics"""

    loss: torch.Tensor
    margin: float
    unclipped_fraction: float


def ood_count(batch_size: int, fraction: float) -> int:
    """Augmented samples per batch, rounded half up"""
    return int(math.floor(batch_size * fraction + 0.5))


def check_ood_batch(originals: torch.Tensor, augmented: torch.Tensor, threshold: float):
    """Raise ThresholdViolation when any augmented sample is within `threshold` MSE of its original"""
    diff = (originals.double() - augmented.double()).flatten(1)
    distances = (diff ** 2).mean(dim=1)
    too_close = torch.nonzero(distances <= threshold).flatten()
    if too_close.numel() > 0:
        index = int(too_close[0].item())
        raise ThresholdViolation(
            f"Augmented sample {index} has MSE {distances[index].item():.3f} <= threshold {threshold}; resample it"
        )


def guided_terms(
    src: torch.Tensor,
    aug: torch.Tensor,
    model: FlowModel,
    cfg: GuidanceConfig,
    aug_originals: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None
) -> GuidedTerms:
    """
    L = sum_src NLL(x) - sum_aug min(c, NLL(x_aug))

    The clipped branch is taken whenever NLL >= c, so those samples carry no
    gradient. In relative mode c follows the batch's source NLL and carries
    no gradient itself.

    Args:
        src: Source batch (N, 1, H, W), 0-255 integers
        aug: Augmented batch (N', 1, H, W); may be empty
        model: Flow being trained
        cfg: Guidance settings
        aug_originals: Images the augmentations were made from (threshold check)
        generator: Dequantization noise stream

    Returns:
        GuidedTerms with the scalar loss, the clip level and the share of
        augmented samples below it (NaN without augmented samples)
    """
    src_nll = model.nll(src, generator=generator, units=cfg.margin_units)
    loss = src_nll.sum()
    margin = cfg.margin(src_nll)
    if aug.shape[0] == 0:
        return GuidedTerms(loss, margin, float("nan"))
    if aug_originals is not None:
        check_ood_batch(aug_originals, aug, cfg.ood_threshold)
    aug_nll = model.nll(aug, generator=generator, units=cfg.margin_units)
    below = aug_nll < margin
    clipped = torch.where(below, aug_nll, torch.full_like(aug_nll, margin))
    return GuidedTerms(loss - clipped.sum(), margin, float(below.double().mean().item()))


def guided_loss(
    src: torch.Tensor,
    aug: torch.Tensor,
    model: FlowModel,
    cfg: GuidanceConfig,
    aug_originals: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    """Scalar guided loss; see guided_terms"""
    return guided_terms(src, aug, model, cfg, aug_originals, generator).loss


def separation_gap(model: FlowModel, source: torch.Tensor, augmented: torch.Tensor, seed: int) -> float:
    """Mean NLL(augmented) - mean NLL(source) in nats, with a shared noise seed"""
    with torch.no_grad():
        generator = torch.Generator()
        generator.manual_seed(int(seed))
        source_nll = model.nll(source, generator=generator).mean().item()
        generator.manual_seed(int(seed))
        aug_nll = model.nll(augmented, generator=generator).mean().item()
    return float(np.float64(aug_nll) - np.float64(source_nll))
