"""
Gradient Check
Compares autograd gradients with central finite differences.
"""

from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Tuple

import torch
import torch.nn as nn

from numerics.tensor_ops import make_generator


@dataclass
class GradCheckReport:
    max_relative_error: float
    coordinates_checked: int
    worst_parameter: Optional[str]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def grad_check(
    closure: Callable[[], torch.Tensor],
    params: Mapping[str, nn.Parameter],
    tolerance: float,
    n_coordinates: int = 64,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-8
) -> GradCheckReport:
    """
    Check analytic gradients of a scalar closure against central differences

    Args:
        closure: Deterministic function returning a scalar loss tensor
        params: Named parameters to perturb
        tolerance: Maximum accepted relative error
        n_coordinates: Coordinates to sample (at least 64; all if fewer exist)
        step: Finite-difference step h
        seed: Seed of the coordinate subsample
        floor: Magnitude below which both gradients count as zero

    Returns:
        GradCheckReport with the maximum relative error
    """
    named = [(name, p) for name, p in params.items() if p.requires_grad]
    for _, p in named:
        p.grad = None
    loss = closure()
    loss.backward()
    analytic = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for _, p in named
    ]

    sizes = [p.numel() for _, p in named]
    total = sum(sizes)
    wanted = max(64, n_coordinates)
    if total <= wanted:
        flat_indices = torch.arange(total)
    else:
        flat_indices = torch.randperm(total, generator=make_generator(seed))[:wanted]

    coordinates: List[Tuple[int, int]] = []
    offsets = torch.tensor([0] + sizes).cumsum(0)
    for flat in flat_indices.tolist():
        param_index = int(torch.searchsorted(offsets, flat, right=True)) - 1
        coordinates.append((param_index, flat - int(offsets[param_index])))

    worst = 0.0
    worst_name = None
    with torch.no_grad():
        for param_index, local in coordinates:
            name, p = named[param_index]
            view = p.view(-1)
            original = view[local].item()
            view[local] = original + step
            plus = closure().item()
            view[local] = original - step
            minus = closure().item()
            view[local] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = analytic[param_index].view(-1)[local].item()
            scale = max(abs(numeric), abs(exact))
            if scale < floor:
                continue
            error = abs(numeric - exact) / scale
            if error > worst:
                worst = error
                worst_name = name
    for _, p in named:
        p.grad = None
    return GradCheckReport(
        max_relative_error=worst,
        coordinates_checked=len(coordinates),
        worst_parameter=worst_name,
        tolerance=tolerance
    )
