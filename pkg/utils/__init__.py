# Utils module
# Only the exception family is re-exported here: every package imports utils.errors,
# while checkpoint_archive, artifact_store and dataset_loader sit above the domain packages
# and are imported from their own modules.
from .errors import (
    ConfigError,
    ContractViolation,
    DivergenceError,
    EmptyMaskError,
    MissingArtifactError,
    NonFiniteGradientError,
    NonFiniteOutputError,
    OODAugmentationError,
    RunLockedError,
    ThresholdViolation
)

__all__ = [
    'ConfigError', 'ContractViolation', 'DivergenceError', 'EmptyMaskError', 'MissingArtifactError',
    'NonFiniteGradientError', 'NonFiniteOutputError', 'OODAugmentationError', 'RunLockedError',
    'ThresholdViolation'
]
