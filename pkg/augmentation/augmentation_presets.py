"""
Augmentation Presets
Named augmentation families used for flow guidance and harmonizer pretraining
"""

from typing import Dict, List

from augmentation.intensity_maps import AUGMENTATION_KINDS, AugmentationSpec


class AugmentationPresets:
    """Static class containing all named augmentation specs"""

    PRESETS: Dict[str, Dict] = {
        # Full family, used with the OOD threshold while training the flow
        "ood-guidance": {
            "kinds": AUGMENTATION_KINDS,
        },

        # Same family without the threshold; restoration targets stay logical
        "harmonizer-pretraining": {
            "kinds": AUGMENTATION_KINDS,
        },

        "brightness-only": {
            "kinds": ("brightness-shift",),
            "composition_range": (1, 1),
        },

        "identity": {
            "kinds": ("gamma-contrast",),
            "gamma_range": (1.0, 1.0),
            "composition_range": (1, 1),
        },
    }

    @classmethod
    def get_preset(cls, preset_name: str, **overrides) -> AugmentationSpec:
        """
        Build the AugmentationSpec of a named preset

        Args:
            preset_name: Name of the preset
            **overrides: Field values replacing the preset's (e.g. seed)

        Returns:
            AugmentationSpec
        """
        if preset_name not in cls.PRESETS:
            raise ValueError(f"Unknown augmentation preset: {preset_name}. Available: {', '.join(cls.PRESETS)}")
        fields = dict(cls.PRESETS[preset_name])
        fields.update(overrides)
        return AugmentationSpec(**fields)

    @classmethod
    def list_presets(cls) -> List[str]:
        return list(cls.PRESETS.keys())

    @classmethod
    def preset_exists(cls, preset_name: str) -> bool:
        return preset_name in cls.PRESETS
