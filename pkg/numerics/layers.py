"""
Network Layers
Convolution, activation and normalisation modules plus the U-shaped
encoder/decoder shared by the flow subnets, the harmonizer and the segmenter.
"""

import math
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from numerics.tensor_ops import DTYPE, celu2, conv2d


class ConvLayer(nn.Module):
    """Square convolution owning its kernel and bias Parameters"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        zero_init: bool = False
    ):
        super().__init__()
        self.stride = stride
        self.padding = (kernel_size - 1) // 2
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels, kernel_size, kernel_size, dtype=DTYPE)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels, dtype=DTYPE))
        if zero_init:
            nn.init.zeros_(self.weight)
        else:
            bound = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)
            nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class CELU2(nn.Module):
    """Module form of celu2 (doubles the channel count)"""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return celu2(x)


class ChannelAffineNorm(nn.Module):
    """Per-sample, per-channel normalisation over spatial dims with a learnable affine"""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1, dtype=DTYPE))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1, dtype=DTYPE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + self.eps) * self.gamma + self.beta


def _activation(kind: str) -> Tuple[nn.Module, int]:
    """Return the activation module and its channel multiplier"""
    if kind == "celu2":
        return CELU2(), 2
    if kind == "relu":
        return nn.ReLU(), 1
    raise ValueError(f"Unknown activation: {kind}")


def _norm(kind: Optional[str], channels: int) -> nn.Module:
    if kind is None:
        return nn.Identity()
    if kind == "channel":
        return ChannelAffineNorm(channels)
    if kind == "batch":
        return nn.BatchNorm2d(channels, dtype=DTYPE)
    raise ValueError(f"Unknown normalisation: {kind}")


class _Block(nn.Sequential):
    """`n_convs` repetitions of activation -> conv -> norm"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        n_convs: int,
        activation: str,
        norm: Optional[str],
        stride: int = 1
    ):
        layers: List[nn.Module] = []
        channels = in_channels
        for index in range(n_convs):
            act, multiplier = _activation(activation)
            layers.append(act)
            layers.append(
                ConvLayer(channels * multiplier, out_channels, 3, stride=stride if index == 0 else 1)
            )
            layers.append(_norm(norm, out_channels))
            channels = out_channels
        super().__init__(*layers)


def count_scales(requested: int, spatial: Optional[Tuple[int, int]], min_extent: int = 2) -> int:
    """
    Cap a requested number of scales so the coarsest level keeps at least
    `min_extent` pixels per side (or one level when the input is smaller).
    """
    if spatial is None:
        return requested
    smallest = min(spatial)
    if smallest < min_extent:
        return 1
    possible = 1 + int(math.floor(math.log2(smallest / min_extent)))
    return max(1, min(requested, possible))


class UShapedNet(nn.Module):
    """
    Encoder/decoder with skip connections.

    Each scale halves the spatial extent with a stride-2 convolution; the decoder
    upsamples with nearest-neighbour interpolation and concatenates the skip.
    The output convolution can be zero-initialised so a fresh network emits 0.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        widths: Sequence[int],
        convs_per_block: int = 1,
        activation: str = "celu2",
        norm: Optional[str] = None,
        spatial: Optional[Tuple[int, int]] = None,
        zero_init_output: bool = True,
        min_extent: int = 2
    ):
        super().__init__()
        n_scales = count_scales(len(widths), spatial, min_extent)
        self.widths = list(widths[:n_scales])
        self.stem = ConvLayer(in_channels, self.widths[0], 3)
        self.encoder = nn.ModuleList()
        for level, width in enumerate(self.widths):
            if level == 0:
                self.encoder.append(_Block(width, width, convs_per_block, activation, norm))
            else:
                previous = self.widths[level - 1]
                self.encoder.append(
                    nn.Sequential(
                        _Block(previous, width, 1, activation, norm, stride=2),
                        _Block(width, width, max(convs_per_block - 1, 0), activation, norm)
                    )
                )
        self.decoder = nn.ModuleList()
        for level in range(len(self.widths) - 2, -1, -1):
            width = self.widths[level]
            self.decoder.append(
                nn.Sequential(
                    _Block(self.widths[level + 1] + width, width, 1, activation, norm),
                    _Block(width, width, max(convs_per_block - 1, 0), activation, norm)
                )
            )
        act, multiplier = _activation(activation)
        self.head_activation = act
        self.head = ConvLayer(self.widths[0] * multiplier, out_channels, 3, zero_init=zero_init_output)

    @property
    def n_scales(self) -> int:
        return len(self.widths)

    @property
    def bottleneck_channels(self) -> int:
        return self.widths[-1]

    def forward(self, x: torch.Tensor, return_bottleneck: bool = False):
        h = self.stem(x)
        skips = []
        for level, stage in enumerate(self.encoder):
            h = stage(h)
            skips.append(h)
        bottleneck = h
        for offset, stage in enumerate(self.decoder):
            skip = skips[len(skips) - 2 - offset]
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = stage(torch.cat([h, skip], dim=1))
        out = self.head(self.head_activation(h))
        if return_bottleneck:
            return out, bottleneck
        return out


@contextmanager
def seeded_init(seed: int) -> Iterator[None]:
    """
    Fork the global torch RNG and seed it, so module construction inside the
    block is reproducible and leaves the caller's RNG state untouched.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield
