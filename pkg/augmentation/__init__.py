# Augmentation module
from .intensity_maps import (
    AUGMENTATION_KINDS,
    AugmentationSpec,
    MonotoneMap,
    apply,
    apply_ood,
    augment_batch,
    mse,
    sample_lut
)
from .augmentation_presets import AugmentationPresets

__all__ = [
    'AUGMENTATION_KINDS', 'AugmentationSpec', 'MonotoneMap', 'apply', 'apply_ood', 'augment_batch', 'mse',
    'sample_lut', 'AugmentationPresets'
]
