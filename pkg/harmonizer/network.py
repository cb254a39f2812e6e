"""
Harmonizer Network
Image-to-image U-shaped network mapping target-site appearance to the source
site, with a residual head (unet) or a global-affine head (affine-head).
"""

from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from numerics.layers import UShapedNet, seeded_init
from numerics.tensor_ops import DTYPE, to_batch, to_images
from utils.errors import ContractViolation

HARMONIZER_WIDTHS = (16, 32, 48, 64, 64)
HARMONIZER_VARIANTS = ("unet", "affine-head")
SCALE = 255.0


class HarmonizerNet(nn.Module):
    """
    h_theta(x) on the 0-255 scale

    unet:        x + 255 * head(x / 255)
    affine-head: alpha * x + beta, alpha = 1 + w . pool(bottleneck), beta = 255 * head(x / 255)

    Both heads are zero-initialised, so a fresh network is the identity.
    """

    def __init__(self, variant: str = "unet", widths: Sequence[int] = HARMONIZER_WIDTHS):
        super().__init__()
        if variant not in HARMONIZER_VARIANTS:
            raise ValueError(f"Unknown harmonizer variant: {variant}. Available: {', '.join(HARMONIZER_VARIANTS)}")
        self.variant = variant
        self.trunk = UShapedNet(1, 1, widths, convs_per_block=2, activation="celu2", norm=None)
        self.divisor = 2 ** (self.trunk.n_scales - 1)
        if variant == "affine-head":
            self.alpha_head = nn.Linear(self.trunk.bottleneck_channels, 1, dtype=DTYPE)
            nn.init.zeros_(self.alpha_head.weight)
            nn.init.zeros_(self.alpha_head.bias)

    def _check(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ContractViolation(f"Harmonizer expects (N, 1, H, W), got {tuple(x.shape)}")
        height, width = x.shape[-2:]
        if height % self.divisor or width % self.divisor:
            pad_h = (-height) % self.divisor
            pad_w = (-width) % self.divisor
            raise ContractViolation(
                f"Harmonizer needs spatial dims divisible by {self.divisor}; got {height}x{width}, "
                f"pad by {pad_h} rows and {pad_w} columns"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        x = x.to(DTYPE)
        if self.variant == "unet":
            return x + SCALE * self.trunk(x / SCALE)
        beta, bottleneck = self.trunk(x / SCALE, return_bottleneck=True)
        alpha = 1.0 + self.alpha_head(bottleneck.mean(dim=(2, 3)))
        return alpha.view(-1, 1, 1, 1) * x + SCALE * beta

    def affine_parameters(self, x: torch.Tensor):
        """(alpha, beta) of the affine-head variant for a batch"""
        if self.variant != "affine-head":
            raise ValueError("affine_parameters is only defined for the affine-head variant")
        beta, bottleneck = self.trunk(x.to(DTYPE) / SCALE, return_bottleneck=True)
        return 1.0 + self.alpha_head(bottleneck.mean(dim=(2, 3))), SCALE * beta

    @torch.no_grad()
    def export(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Harmonize uint8 images for inference: clamped to [0, 255] and rounded"""
        outputs = []
        for start in range(0, len(images), batch_size):
            outputs.append(to_images(self(to_batch(images[start:start + batch_size]))))
        if not outputs:
            return np.empty((0, *np.asarray(images).shape[1:]), dtype=np.uint8)
        return np.concatenate(outputs)


def build_harmonizer(variant: str = "unet", seed: Optional[int] = None) -> HarmonizerNet:
    """Construct a harmonizer, optionally with a seeded initialisation"""
    if seed is None:
        return HarmonizerNet(variant)
    with seeded_init(seed):
        return HarmonizerNet(variant)
