"""
Dequantization
Maps 256-level images to continuous values in (0, 1) with exact log-det
accounting, then into logit space for the coupling stack.
"""

import math
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from flows.coupling import CouplingLayer
from numerics.tensor_ops import DTYPE
from utils.errors import ContractViolation

LEVELS = 256
LOGIT_ALPHA = 0.05
DEQUANT_MODES = ("uniform", "variational")


def logit_transform(v: torch.Tensor, alpha: float = LOGIT_ALPHA) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    y = logit(alpha + (1 - 2 alpha) v) for v in [0, 1)

    Returns:
        (y, per-sample log-det)
    """
    p = alpha + (1.0 - 2.0 * alpha) * v
    y = torch.log(p) - torch.log1p(-p)
    logdet = math.log(1.0 - 2.0 * alpha) - torch.log(p) - torch.log1p(-p)
    return y, logdet.flatten(1).sum(dim=1)


def inverse_logit_transform(y: torch.Tensor, alpha: float = LOGIT_ALPHA) -> torch.Tensor:
    return (torch.sigmoid(y) - alpha) / (1.0 - 2.0 * alpha)


def standard_normal_log_density(z: torch.Tensor) -> torch.Tensor:
    """Per-sample log N(z; 0, I)"""
    return (-0.5 * z ** 2 - 0.5 * math.log(2 * math.pi)).flatten(1).sum(dim=1)


def _quantization_logdet(x: torch.Tensor) -> torch.Tensor:
    elements = x[0].numel()
    return torch.full((x.shape[0],), -elements * math.log(LEVELS), dtype=DTYPE)


class UniformDequantizer(nn.Module):
    """v = (x + u) / 256 with u ~ U[0, 1)"""

    mode = "uniform"

    def forward(
        self,
        x: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        noise: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Dequantize a batch of 0-255 intensities

        Args:
            x: (N, C, H, W) intensities
            generator: Source of the dequantization noise
            noise: Explicit u in [0, 1) with the shape of x (overrides the generator)

        Returns:
            (v in [0, 1), per-sample log-det minus log q(u|x))
        """
        if noise is None:
            noise = torch.rand(x.shape, generator=generator, dtype=DTYPE)
        elif noise.shape != x.shape:
            raise ContractViolation(f"Noise shape {tuple(noise.shape)} does not match input {tuple(x.shape)}")
        v = (x + noise) / LEVELS
        return v, _quantization_logdet(x)


class VariationalDequantizer(nn.Module):
    """
    Learned noise distribution q(u|x)

    Gaussian noise is pushed through conditional checkerboard couplings (context
    is the image rescaled to [-1, 1]) and squashed into (0, 1) by a sigmoid.
    """

    mode = "variational"

    def __init__(self, channels: int, spatial: Tuple[int, int], n_layers: int = 4):
        super().__init__()
        self.layers = nn.ModuleList(
            CouplingLayer(
                channels,
                spatial,
                mask_kind="checkerboard",
                mask_phase="A-first" if index % 2 == 0 else "B-first",
                context_channels=channels,
                index=index
            )
            for index in range(n_layers)
        )

    def forward(
        self,
        x: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        noise: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        if noise is not None:
            raise ContractViolation("Explicit dequantization noise is only supported in uniform mode")
        context = x / (LEVELS - 1) * 2.0 - 1.0
        eps = torch.randn(x.shape, generator=generator, dtype=DTYPE)
        log_q = standard_normal_log_density(eps)
        h = eps
        for layer in self.layers:
            h, logdet = layer(h, context)
            log_q = log_q - logdet
        u = torch.sigmoid(h)
        log_q = log_q - (F.logsigmoid(h) + F.logsigmoid(-h)).flatten(1).sum(dim=1)
        # keep u strictly inside the unit cell
        u = u.clamp(0.0, 1.0 - 1e-12)
        v = (x + u) / LEVELS
        return v, _quantization_logdet(x) - log_q


def build_dequantizer(mode: str, channels: int, spatial: Tuple[int, int], n_layers: int = 4) -> nn.Module:
    if mode == "uniform":
        return UniformDequantizer()
    if mode == "variational":
        return VariationalDequantizer(channels, spatial, n_layers)
    raise ValueError(f"Unknown dequantization mode: {mode}. Available: {', '.join(DEQUANT_MODES)}")
