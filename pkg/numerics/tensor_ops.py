"""
Tensor Operations
Deterministic float64 substrate: seeding, batch conversion, convolution and the
symmetric ELU activation used by every network in the pipeline.
"""

import random
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from utils.errors import ContractViolation

DTYPE = torch.float64


def set_determinism(seed: int) -> None:
    """
    Seed every random source and force deterministic kernels

    Args:
        seed: Global seed of the run
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def make_generator(seed: int) -> torch.Generator:
    """Create a CPU torch generator seeded with `seed`"""
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def derive_seed(seed: int, *indices: int) -> int:
    """
    Derive a child seed from a global seed and an index path.

    Uses numpy's SeedSequence hashing, so the child seed only depends on
    (seed, indices) and never on evaluation order.
    """
    sequence = np.random.SeedSequence([int(seed), *[int(i) for i in indices]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def to_batch(images: np.ndarray) -> torch.Tensor:
    """
    Convert 8-bit images to a float64 batch

    Args:
        images: Array of shape (N, H, W) or (H, W)

    Returns:
        Tensor of shape (N, 1, H, W)
    """
    array = np.asarray(images, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise ContractViolation(f"Expected images of rank 2 or 3, got shape {array.shape}")
    return torch.from_numpy(array.copy()).unsqueeze(1).to(DTYPE)


def to_images(batch: torch.Tensor) -> np.ndarray:
    """Clamp, round and convert a (N, 1, H, W) batch back to uint8 images"""
    values = batch.detach().clamp(0.0, 255.0).round().squeeze(1)
    return values.cpu().numpy().astype(np.uint8)


def conv2d(
    input: torch.Tensor,
    kernels: torch.Tensor,
    bias: Optional[torch.Tensor],
    stride: int = 1,
    padding: int = 0
) -> torch.Tensor:
    """
    2-D cross-correlation with contract checks

    Args:
        input: Tensor (N, C_in, H, W)
        kernels: Tensor (C_out, C_in, k, k), k odd
        bias: Tensor (C_out,) or None
        stride: Positive stride
        padding: Non-negative zero padding

    Returns:
        Tensor (N, C_out, H_out, W_out)
    """
    if input.dim() != 4:
        raise ContractViolation(f"conv2d input must be rank 4, got dims {tuple(input.shape)}")
    if kernels.dim() != 4:
        raise ContractViolation(f"conv2d kernels must be rank 4, got dims {tuple(kernels.shape)}")
    out_channels, in_channels, kh, kw = kernels.shape
    if kh != kw or kh % 2 == 0:
        raise ContractViolation(f"conv2d kernel extent must be odd and square, got {kh}x{kw}")
    if input.shape[1] != in_channels:
        raise ContractViolation(
            f"conv2d channel mismatch: input has {input.shape[1]} channels, kernels expect {in_channels}"
        )
    if bias is not None and tuple(bias.shape) != (out_channels,):
        raise ContractViolation(
            f"conv2d bias extent {tuple(bias.shape)} does not match {out_channels} output channels"
        )
    if stride < 1 or padding < 0:
        raise ContractViolation(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    height, width = input.shape[2] + 2 * padding, input.shape[3] + 2 * padding
    if height < kh or width < kw:
        raise ContractViolation(
            f"conv2d padded input {height}x{width} is smaller than kernel {kh}x{kw}"
        )
    return F.conv2d(input, kernels, bias, stride=stride, padding=padding)


def celu2(x: torch.Tensor) -> torch.Tensor:
    """
    Concatenated ELU: channel block 1 is ELU(x), block 2 is ELU(-x)

    Args:
        x: Tensor (N, C, H, W)

    Returns:
        Tensor (N, 2C, H, W)
    """
    if x.dim() != 4:
        raise ContractViolation(f"celu2 input must be rank 4, got dims {tuple(x.shape)}")
    return torch.cat([F.elu(x, alpha=1.0), F.elu(-x, alpha=1.0)], dim=1)
