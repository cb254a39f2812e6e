"""
Site Presets
Named site appearances for phantom datasets
"""

from typing import Dict, List

import numpy as np

from analysis.phantoms import SiteTransform
from augmentation.intensity_maps import MonotoneMap


def _gamma_map(gamma: float) -> MonotoneMap:
    return MonotoneMap.from_function(lambda v: 255.0 * np.power(v / 255.0, gamma), n_knots=33)


class SitePresets:
    """Static class containing all site definitions"""

    SITES: Dict[str, Dict] = {
        # Reference appearance, used as source by default
        "site-a": {
            "knots": ((0, 255), (0, 255)),
            "noise_sigma": 2.0,
            "bias_amplitude": 0.05,
        },

        # Global contrast change
        "site-b": {
            "gamma": 0.6,
            "noise_sigma": 3.0,
            "bias_amplitude": 0.1,
        },

        # Non-linear contrast with compressed bright tissues
        "site-c": {
            "knots": ((0, 60, 120, 180, 255), (0, 30, 150, 195, 240)),
            "noise_sigma": 2.5,
            "bias_amplitude": 0.2,
        },

        # Strong bias field on top of a contrast map (histogram-matching paradox pair)
        "site-d": {
            "knots": ((0, 64, 128, 192, 255), (0, 100, 140, 170, 255)),
            "noise_sigma": 3.0,
            "bias_amplitude": 0.45,
        },
    }

    @classmethod
    def get_site(cls, site_name: str) -> SiteTransform:
        """
        Build the SiteTransform of a named site

        Args:
            site_name: Name of the site

        Returns:
            SiteTransform
        """
        if site_name not in cls.SITES:
            raise ValueError(f"Unknown site: {site_name}. Available: {', '.join(cls.SITES)}")
        preset = cls.SITES[site_name]
        if "gamma" in preset:
            intensity_map = _gamma_map(preset["gamma"])
        else:
            knots_in, knots_out = preset["knots"]
            intensity_map = MonotoneMap(np.array(knots_in, dtype=float), np.array(knots_out, dtype=float))
        return SiteTransform(
            name=site_name,
            intensity_map=intensity_map,
            noise_sigma=preset["noise_sigma"],
            bias_amplitude=preset["bias_amplitude"]
        )

    @classmethod
    def list_sites(cls) -> List[str]:
        return list(cls.SITES.keys())

    @classmethod
    def site_exists(cls, site_name: str) -> bool:
        return site_name in cls.SITES
