"""
SSIM
Gaussian-windowed structural similarity on the 0-255 scale and the
L1 + DSSIM reconstruction loss of harmonizer pretraining.
"""

from dataclasses import dataclass

import torch

from numerics.tensor_ops import DTYPE, conv2d
from utils.errors import ContractViolation


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 255.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_window(size: int, sigma: float) -> torch.Tensor:
    """Normalised 2-D Gaussian kernel of shape (1, 1, size, size)"""
    offsets = torch.arange(size, dtype=DTYPE) - size // 2
    gauss = torch.exp(-offsets ** 2 / (2 * sigma ** 2))
    gauss = gauss / gauss.sum()
    window = torch.outer(gauss, gauss)
    return (window / window.sum()).view(1, 1, size, size)


def ssim_map(x: torch.Tensor, y: torch.Tensor, cfg: SsimConfig = SsimConfig()) -> torch.Tensor:
    """
    Local SSIM at every valid window position

    Args:
        x, y: (N, 1, H, W) images on the 0-255 scale

    Returns:
        (N, 1, H - k + 1, W - k + 1) tensor
    """
    if x.shape != y.shape:
        raise ContractViolation(f"ssim needs equal dims, got {tuple(x.shape)} and {tuple(y.shape)}")
    if x.dim() != 4 or x.shape[1] != 1:
        raise ContractViolation(f"ssim expects (N, 1, H, W) images, got {tuple(x.shape)}")
    if x.shape[-2] < cfg.window_size or x.shape[-1] < cfg.window_size:
        raise ContractViolation(
            f"ssim images {x.shape[-2]}x{x.shape[-1]} are smaller than the {cfg.window_size}x{cfg.window_size} window"
        )
    window = gaussian_window(cfg.window_size, cfg.sigma)
    x = x.to(DTYPE)
    y = y.to(DTYPE)
    mu1 = conv2d(x, window, None)
    mu2 = conv2d(y, window, None)
    mu1_mu2 = mu1 * mu2
    sigma1_sq = conv2d(x * x, window, None) - mu1 * mu1
    sigma2_sq = conv2d(y * y, window, None) - mu2 * mu2
    sigma12 = conv2d(x * y, window, None) - mu1_mu2
    numerator = (2 * mu1_mu2 + cfg.c1) * (2 * sigma12 + cfg.c2)
    denominator = (mu1 * mu1 + mu2 * mu2 + cfg.c1) * (sigma1_sq + sigma2_sq + cfg.c2)
    return numerator / denominator


def ssim(x: torch.Tensor, y: torch.Tensor, cfg: SsimConfig = SsimConfig()) -> torch.Tensor:
    """Mean local SSIM over valid window positions (scalar tensor)"""
    return ssim_map(x, y, cfg).mean()


def reconstruction_loss(
    restored: torch.Tensor,
    original: torch.Tensor,
    cfg: SsimConfig = SsimConfig()
) -> torch.Tensor:
    """
    mean |x - h| / 255 + (1 - SSIM(x, h))

    The L1 term is taken on 0-255 intensities and divided by 255 before the
    DSSIM term is added, so both terms are on a unit scale. SSIM itself is
    computed on 0-255 values.
    """
    l1 = (restored - original).abs().mean() / cfg.dynamic_range
    return l1 + (1.0 - ssim(original, restored, cfg))


def l1_distance(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean absolute difference on the 0-255 scale"""
    return float((a.to(DTYPE) - b.to(DTYPE)).abs().mean().item())


def constant_ssim(mu1: float, mu2: float, cfg: SsimConfig = SsimConfig()) -> float:
    """Closed-form SSIM of two constant images"""
    return (2 * mu1 * mu2 + cfg.c1) / (mu1 ** 2 + mu2 ** 2 + cfg.c1)
