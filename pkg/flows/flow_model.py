"""
Flow Model
Normalizing-flow density of source-domain images: dequantization, logit
preprocessing, coupling stages with squeezes, and a standard-normal base.

Direction convention: `forward` maps data to latent and accumulates log-dets,
`inverse` maps latent to data.
"""

import math
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn

from flows.coupling import CouplingLayer, Squeeze
from flows.dequantization import (
    LEVELS,
    LOGIT_ALPHA,
    build_dequantizer,
    inverse_logit_transform,
    logit_transform,
    standard_normal_log_density
)
from numerics.tensor_ops import DTYPE
from utils.errors import ContractViolation


class FlowModel(nn.Module):
    """
    Stack of coupling layers over single-channel images

    Depth T (0 or a multiple of 3) is laid out as T/3 checkerboard layers,
    squeeze, T/3 channel-masked layers, squeeze, T/3 channel-masked layers.
    Consecutive coupling layers within a stage alternate mask phase.
    """

    def __init__(
        self,
        spatial: Tuple[int, int],
        depth: int = 12,
        channels: int = 1,
        dequant_mode: str = "uniform",
        dequant_layers: int = 4,
        alpha: float = LOGIT_ALPHA
    ):
        super().__init__()
        if depth < 0 or depth % 3 != 0:
            raise ContractViolation(f"Flow depth must be 0 or a multiple of 3, got {depth}")
        height, width = spatial
        if depth > 0 and (height % 4 != 0 or width % 4 != 0):
            raise ContractViolation(f"Flow with two squeezes needs extents divisible by 4, got {height}x{width}")
        self.spatial = (int(height), int(width))
        self.channels = channels
        self.depth = depth
        self.alpha = alpha
        self.dequant_mode = dequant_mode
        self.dequant_layers = dequant_layers
        self.dequantizer = build_dequantizer(dequant_mode, channels, self.spatial, dequant_layers)

        layers: List[nn.Module] = []
        per_stage = depth // 3
        c, h, w = channels, height, width
        coupling_index = 0
        if depth > 0:
            for stage, kind in enumerate(("checkerboard", "channel", "channel")):
                if stage > 0:
                    layers.append(Squeeze())
                    c, h, w = c * 4, h // 2, w // 2
                for position in range(per_stage):
                    layers.append(
                        CouplingLayer(
                            c, (h, w),
                            mask_kind=kind,
                            mask_phase="A-first" if position % 2 == 0 else "B-first",
                            index=coupling_index
                        )
                    )
                    coupling_index += 1
        self.layers = nn.ModuleList(layers)
        self.latent_shape = (c, h, w)

    @property
    def elements(self) -> int:
        """Image elements per sample (product of the spatial domain)"""
        return self.channels * self.spatial[0] * self.spatial[1]

    def coupling_layers(self) -> List[CouplingLayer]:
        return [layer for layer in self.layers if isinstance(layer, CouplingLayer)]

    def forward(self, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Map logit-space inputs to latents

        Returns:
            (z, summed per-sample log-det over all layers)
        """
        logdet = torch.zeros(y.shape[0], dtype=DTYPE)
        h = y
        for layer in self.layers:
            h, layer_logdet = layer(h)
            logdet = logdet + layer_logdet
        return h, logdet

    def inverse(self, z: torch.Tensor) -> torch.Tensor:
        h = z
        for layer in reversed(self.layers):
            h = layer.inverse(h)
        return h

    def log_prob_continuous(self, y: torch.Tensor) -> torch.Tensor:
        """Natural-log density of continuous inputs, without dequantization or logit"""
        z, logdet = self.forward(y)
        return standard_normal_log_density(z) + logdet

    def _check_images(self, x: torch.Tensor, discrete: bool) -> torch.Tensor:
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.channels, *self.spatial):
            raise ContractViolation(
                f"Flow expects (N, {self.channels}, {self.spatial[0]}, {self.spatial[1]}), got {tuple(x.shape)}"
            )
        if not discrete:
            return x.clamp(0.0, LEVELS - 1)
        if (x < 0).any() or (x > LEVELS - 1).any():
            raise ContractViolation(
                f"Intensities must lie in [0, 255], got range [{x.min().item()}, {x.max().item()}]"
            )
        if not torch.equal(x, torch.round(x)):
            raise ContractViolation("Discrete log_prob needs integer-valued intensities")
        return x

    def log_prob(
        self,
        x: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        discrete: bool = True,
        noise: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        """
        Single-sample dequantization bound on log p(x), natural log

        Args:
            x: (N, C, H, W) intensities on the 0-255 scale
            generator: Source of dequantization noise (fixes the estimate)
            discrete: If False, accept continuous harmonizer outputs (clamped to [0, 255])
            noise: Explicit uniform noise in [0, 1) (uniform mode only)

        Returns:
            Per-sample log-likelihood, shape (N,)
        """
        x = self._check_images(x.to(DTYPE), discrete)
        v, dequant_term = self.dequantizer(x, generator=generator, noise=noise)
        y, logit_logdet = logit_transform(v, self.alpha)
        return self.log_prob_continuous(y) + logit_logdet + dequant_term

    def nll(self, x: torch.Tensor, generator: Optional[torch.Generator] = None,
            discrete: bool = True, units: str = "nats") -> torch.Tensor:
        """Per-sample negative log-likelihood in nats or bits per dimension"""
        nll = -self.log_prob(x, generator=generator, discrete=discrete)
        if units == "nats":
            return nll
        if units == "bpd":
            return nll / (math.log(2.0) * self.elements)
        raise ValueError(f"Unknown NLL units: {units}")

    def bpd(self, x: torch.Tensor, generator: Optional[torch.Generator] = None,
            discrete: bool = True) -> torch.Tensor:
        return bpd_from_log_prob(self.log_prob(x, generator=generator, discrete=discrete), self.elements)

    @torch.no_grad()
    def sample(self, n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """
        Draw n images on the discrete 0-255 grid

        Returns:
            (n, C, H, W) float64 tensor of integer values
        """
        z = torch.randn((n, *self.latent_shape), generator=generator, dtype=DTYPE)
        y = self.inverse(z)
        v = inverse_logit_transform(y, self.alpha)
        return torch.floor(torch.clamp(v * LEVELS, 0.0, LEVELS - 1))

    def architecture(self) -> Dict[str, float]:
        """Scalars needed to rebuild the model from a checkpoint"""
        return {
            "height": float(self.spatial[0]),
            "width": float(self.spatial[1]),
            "channels": float(self.channels),
            "depth": float(self.depth),
            "variational": 1.0 if self.dequant_mode == "variational" else 0.0,
            "dequant_layers": float(self.dequant_layers),
            "alpha": float(self.alpha)
        }

    @classmethod
    def from_architecture(cls, arch: Dict[str, float]) -> "FlowModel":
        return cls(
            spatial=(int(arch["height"]), int(arch["width"])),
            depth=int(arch["depth"]),
            channels=int(arch["channels"]),
            dequant_mode="variational" if arch["variational"] > 0.5 else "uniform",
            dequant_layers=int(arch["dequant_layers"]),
            alpha=float(arch["alpha"])
        )


def bpd_from_log_prob(log_prob: torch.Tensor, elements: int) -> torch.Tensor:
    """BPD = -log p / (ln 2 * element count)"""
    return -log_prob / (math.log(2.0) * elements)


def log_prob(x: torch.Tensor, model: FlowModel, noise_seed: Optional[int] = None,
             discrete: bool = True) -> torch.Tensor:
    """Functional log_prob; a noise seed makes the estimate reproducible"""
    generator = None
    if noise_seed is not None:
        generator = torch.Generator()
        generator.manual_seed(int(noise_seed))
    return model.log_prob(x, generator=generator, discrete=discrete)


def bpd(x: torch.Tensor, model: FlowModel, noise_seed: Optional[int] = None,
        discrete: bool = True) -> torch.Tensor:
    return bpd_from_log_prob(log_prob(x, model, noise_seed, discrete), model.elements)


def sample(model: FlowModel, n: int, seed: int) -> torch.Tensor:
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return model.sample(n, generator=generator)


@torch.no_grad()
def mean_bpd(model: FlowModel, images: torch.Tensor, seed: int, batch_size: int = 32,
             discrete: bool = True) -> float:
    """Mean BPD over a set of images, evaluated in batches with a fixed noise stream"""
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    values = []
    for start in range(0, images.shape[0], batch_size):
        values.append(model.bpd(images[start:start + batch_size], generator=generator, discrete=discrete))
    if not values:
        return float("nan")
    return float(torch.cat(values).mean().item())
