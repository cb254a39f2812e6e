"""
Optimizer
Adam with a step-wise multiplicative learning-rate decay.

The "weight decay of 0.5 every N iterations" of the training recipes is a
learning-rate schedule, not parameter shrinkage.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import torch
import torch.nn as nn

from utils.errors import NonFiniteGradientError


@dataclass
class AdamState:
    """Adam moments, step count and learning-rate schedule for a named parameter set"""

    optimizer: torch.optim.Adam
    scheduler: torch.optim.lr_scheduler.StepLR
    decay_factor: float
    decay_period: int
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    step_count: int = 0
    names: Dict[int, str] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        params: Mapping[str, nn.Parameter],
        learning_rate: float,
        decay_factor: float = 1.0,
        decay_period: int = 1
    ) -> "AdamState":
        """
        Build the optimizer state

        Args:
            params: Named parameters (e.g. dict(model.named_parameters()))
            learning_rate: Initial learning rate, strictly positive
            decay_factor: Multiplier applied every `decay_period` steps, in (0, 1]
            decay_period: Steps between decays

        Returns:
            Fresh AdamState with zero moments
        """
        if learning_rate <= 0:
            raise ValueError(f"Learning rate must be strictly positive, got {learning_rate}")
        if not 0.0 < decay_factor <= 1.0:
            raise ValueError(f"Decay factor must lie in (0, 1], got {decay_factor}")
        if decay_period < 1:
            raise ValueError(f"Decay period must be a positive integer, got {decay_period}")
        trainable = {name: p for name, p in params.items() if p.requires_grad}
        optimizer = torch.optim.Adam(
            list(trainable.values()), lr=learning_rate, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0
        )
        scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=decay_period, gamma=decay_factor)
        names = {id(p): name for name, p in trainable.items()}
        return cls(
            optimizer=optimizer,
            scheduler=scheduler,
            decay_factor=decay_factor,
            decay_period=decay_period,
            names=names
        )

    @property
    def learning_rate(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=False)


def adam_step(params: Mapping[str, nn.Parameter], state: AdamState) -> None:
    """
    Apply one Adam update, then advance the learning-rate schedule

    Args:
        params: Named parameters whose gradients are populated
        state: Optimizer state created for the same parameters

    Raises:
        NonFiniteGradientError: a gradient holds NaN/Inf (no parameter is touched)
    """
    for name, param in params.items():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NonFiniteGradientError(name)
    # Adam skips parameters whose grad is None; a zero tensor keeps the step count aligned
    for param in params.values():
        if param.requires_grad and param.grad is None:
            param.grad = torch.zeros_like(param)
    state.optimizer.step()
    state.scheduler.step()
    state.step_count += 1
