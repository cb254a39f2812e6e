import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
import torch
import torch.nn as nn

from analysis.phantoms import PhantomSpec, generate
from analysis.site_presets import SitePresets
from numerics.layers import ConvLayer
from numerics.tensor_ops import DTYPE


def randomize_zero_heads(module: nn.Module, seed: int = 0, scale: float = 0.05) -> nn.Module:
    """Give zero-initialised output convolutions (and linear heads) small random weights"""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (ConvLayer, nn.Linear)) and not sub.weight.any():
                sub.weight.copy_(torch.randn(sub.weight.shape, generator=generator, dtype=DTYPE) * scale)
                sub.bias.copy_(torch.randn(sub.bias.shape, generator=generator, dtype=DTYPE) * scale)
    return module


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_images(rng):
    """Eight 16x16 images with integer intensities"""
    return rng.integers(0, 256, size=(8, 16, 16)).astype(np.uint8)


@pytest.fixture(scope="session")
def phantoms():
    """Two-site 16x16 phantom dataset, 16 subjects per site"""
    spec = PhantomSpec(image_size=16, class_count=5)
    sites = [SitePresets.get_site("site-a"), SitePresets.get_site("site-b")]
    return generate(spec, sites, n_per_site=16, seed=0)
