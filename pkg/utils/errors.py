"""
Error types shared across the harmonization pipeline
"""

from typing import Optional


class ContractViolation(ValueError):
    """An operation received inputs outside its documented contract"""


class ConfigError(ValueError):
    """A run or component configuration is invalid or incomplete"""


class ThresholdViolation(ValueError):
    """An augmented sample is not far enough from its original to count as OOD"""


class EmptyMaskError(ValueError):
    """A metric needs a non-empty mask for the requested class"""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contains NaN or Inf; the optimizer step was aborted"""

    def __init__(self, parameter_name: str):
        super().__init__(f"Non-finite gradient in parameter '{parameter_name}', step aborted")
        self.parameter_name = parameter_name


class NonFiniteOutputError(FloatingPointError):
    """A network produced NaN or Inf values"""


class DivergenceError(RuntimeError):
    """Training diverged; the model was restored to its last good snapshot"""

    def __init__(self, message: str, last_good_step: Optional[int] = None):
        super().__init__(message)
        self.last_good_step = last_good_step


class OODAugmentationError(RuntimeError):
    """No augmentation draw cleared the out-of-distribution threshold"""


class MissingArtifactError(FileNotFoundError):
    """An upstream stage artifact is missing"""


class RunLockedError(RuntimeError):
    """Another process holds the output directory lock"""
