"""
Coupling Layers
Affine coupling transforms with checkerboard / channel masking, plus the 2x2
squeeze rearrangement used between flow stages.
"""

from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn

from numerics.layers import UShapedNet
from numerics.tensor_ops import DTYPE
from utils.errors import ContractViolation, NonFiniteOutputError

SUBNET_WIDTHS = (16, 32, 48, 64)

MASK_KINDS = ("checkerboard", "channel")
MASK_PHASES = ("A-first", "B-first")


def checkerboard_mask(height: int, width: int, phase: str = "A-first") -> torch.Tensor:
    """
    Mask of the conditioning partition A for a checkerboard layout

    Element (i, j) belongs to A iff (i + j) is even for phase A-first.

    Returns:
        Tensor of shape (1, 1, H, W) with 1 on A and 0 on B
    """
    rows = torch.arange(height).view(-1, 1)
    cols = torch.arange(width).view(1, -1)
    even = ((rows + cols) % 2 == 0).to(DTYPE)
    mask = even if phase == "A-first" else 1.0 - even
    return mask.view(1, 1, height, width)


def channel_mask(channels: int, phase: str = "A-first") -> torch.Tensor:
    """
    Mask of the conditioning partition A for a channel split at floor(C/2)

    Returns:
        Tensor of shape (1, C, 1, 1) with 1 on A and 0 on B
    """
    if channels < 2:
        raise ContractViolation(f"Channel masking needs at least 2 channels, got {channels}")
    split = channels // 2
    mask = torch.zeros(channels, dtype=DTYPE)
    if phase == "A-first":
        mask[:split] = 1.0
    else:
        mask[split:] = 1.0
    return mask.view(1, channels, 1, 1)


def squeeze(x: torch.Tensor) -> torch.Tensor:
    """
    Rearrange every 2x2 spatial block into channels: (N, C, H, W) -> (N, 4C, H/2, W/2)

    Within each input channel c, the block element at offset (di, dj) lands in
    channel 4c + 2di + dj, so the grid [[1, 2], [3, 4]] becomes channels (1, 2, 3, 4).
    """
    if x.dim() != 4:
        raise ContractViolation(f"squeeze expects a rank-4 tensor, got rank {x.dim()}")
    n, c, h, w = x.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ContractViolation(f"squeeze needs even spatial extents, got {h}x{w}")
    x = x.reshape(n, c, h // 2, 2, w // 2, 2)
    x = x.permute(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * 4, h // 2, w // 2)


def unsqueeze(x: torch.Tensor) -> torch.Tensor:
    """Exact inverse of squeeze: (N, 4C, H, W) -> (N, C, 2H, 2W)"""
    if x.dim() != 4:
        raise ContractViolation(f"unsqueeze expects a rank-4 tensor, got rank {x.dim()}")
    n, c, h, w = x.shape
    if c % 4 != 0:
        raise ContractViolation(f"unsqueeze needs a channel count divisible by 4, got {c}")
    x = x.reshape(n, c // 4, 2, 2, h, w)
    x = x.permute(0, 1, 4, 2, 5, 3)
    return x.reshape(n, c // 4, h * 2, w * 2)


class Squeeze(nn.Module):
    """Volume-preserving squeeze step of a flow (log-det 0)"""

    def forward(self, x: torch.Tensor, context: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        return squeeze(x), torch.zeros(x.shape[0], dtype=x.dtype)

    def inverse(self, y: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        return unsqueeze(y)


class CouplingLayer(nn.Module):
    """
    Affine coupling: y_A = z_A, y_B = z_B * exp(s(z_A)) + t(z_A)

    The subnet sees the masked input (and an optional context tensor) and emits
    2C channels: raw log-scales and shifts. Log-scales are bounded as
    `factor * tanh(raw)` with a learnable per-channel factor.
    """

    def __init__(
        self,
        channels: int,
        spatial: Tuple[int, int],
        mask_kind: str = "checkerboard",
        mask_phase: str = "A-first",
        context_channels: int = 0,
        widths: Sequence[int] = SUBNET_WIDTHS,
        index: int = 0
    ):
        """
        Args:
            channels: Channel count of the transformed tensor
            spatial: (H, W) of the transformed tensor
            mask_kind: 'checkerboard' or 'channel'
            mask_phase: 'A-first' or 'B-first'
            context_channels: Extra conditioning channels concatenated to the subnet input
            widths: Subnet channel widths per scale
            index: Position in the parent flow (used in error messages)
        """
        super().__init__()
        if mask_kind not in MASK_KINDS:
            raise ValueError(f"Unknown mask kind: {mask_kind}")
        if mask_phase not in MASK_PHASES:
            raise ValueError(f"Unknown mask phase: {mask_phase}")
        self.channels = channels
        self.spatial = tuple(spatial)
        self.mask_kind = mask_kind
        self.mask_phase = mask_phase
        self.context_channels = context_channels
        self.index = index
        if mask_kind == "checkerboard":
            mask = checkerboard_mask(spatial[0], spatial[1], mask_phase).expand(1, channels, *spatial).clone()
        else:
            mask = channel_mask(channels, mask_phase).expand(1, channels, *spatial).clone()
        self.register_buffer("mask", mask)
        self.subnet = UShapedNet(
            channels + context_channels,
            2 * channels,
            widths,
            convs_per_block=1,
            activation="celu2",
            norm="channel",
            spatial=self.spatial
        )
        self.scale_factor = nn.Parameter(torch.ones(1, channels, 1, 1, dtype=DTYPE))

    @property
    def transformed_count(self) -> int:
        """Number of elements in partition B per sample"""
        return int((1.0 - self.mask).sum().item())

    def scale_and_shift(
        self,
        z_a: torch.Tensor,
        context: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Bounded log-scale s and shift t over the full grid, zero on partition A"""
        inputs = z_a if context is None else torch.cat([z_a, context], dim=1)
        raw = self.subnet(inputs)
        if not torch.isfinite(raw).all():
            raise NonFiniteOutputError(f"Coupling layer {self.index} produced non-finite subnet output")
        raw_s, t = raw[:, :self.channels], raw[:, self.channels:]
        inverse_mask = 1.0 - self.mask
        s = self.scale_factor * torch.tanh(raw_s) * inverse_mask
        return s, t * inverse_mask

    def _check(self, x: torch.Tensor, context: Optional[torch.Tensor]):
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.channels, *self.spatial):
            raise ContractViolation(
                f"Coupling layer {self.index} expects (N, {self.channels}, {self.spatial[0]}, "
                f"{self.spatial[1]}), got {tuple(x.shape)}"
            )
        if self.context_channels and (context is None or context.shape[1] != self.context_channels):
            raise ContractViolation(
                f"Coupling layer {self.index} needs a context with {self.context_channels} channels"
            )

    def forward(self, z: torch.Tensor, context: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Transform z and return (y, per-sample log-det)
        """
        self._check(z, context)
        z_a = z * self.mask
        s, t = self.scale_and_shift(z_a, context)
        y = z_a + (1.0 - self.mask) * (z * torch.exp(s) + t)
        return y, s.sum(dim=(1, 2, 3))

    def inverse(self, y: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        self._check(y, context)
        y_a = y * self.mask
        s, t = self.scale_and_shift(y_a, context)
        return y_a + (1.0 - self.mask) * ((y - t) * torch.exp(-s))


def coupling_forward(z: torch.Tensor, layer: CouplingLayer, context: Optional[torch.Tensor] = None):
    """Functional form of CouplingLayer.forward"""
    return layer(z, context)


def coupling_inverse(y: torch.Tensor, layer: CouplingLayer, context: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Functional form of CouplingLayer.inverse"""
    return layer.inverse(y, context)
