"""
Configuration file for run settings and training defaults

Defaults mirror the published training recipe; DESK_PROFILE holds the
reduced-iteration values used for desktop-scale phantom runs. Run files are
flat `key = value` text parsed with python-dotenv (no environment lookups).
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values

from utils.errors import ConfigError

CODE_VERSION = "flow-harmonization 1.0.0"

# Normalizing flow
FLOW_DEPTH = 12
FLOW_ITERATIONS = 20000
FLOW_BATCH_SIZE = 32
FLOW_LEARNING_RATE = 1e-3
FLOW_DECAY_FACTOR = 0.5
FLOW_DECAY_PERIOD = 2000
MARGIN_C = 1.2
MARGIN_MODE = "relative"
MARGIN_RATIO = 1.5
OOD_THRESHOLD = 100.0
OOD_FRACTION = 0.5

# Harmonizer / segmenter
NETWORK_ITERATIONS = 5000
NETWORK_BATCH_SIZE = 64
NETWORK_LEARNING_RATE = 1e-3
NETWORK_DECAY_FACTOR = 0.5
NETWORK_DECAY_PERIOD = 500

# Test-time adaptation
ADAPT_LEARNING_RATE = 5e-7
ADAPT_BATCH_SIZE = 32
ADAPT_MAX_EPOCHS = 50
BPD_TOLERANCE = 0.02
ENTROPY_PATIENCE = 3

# Desktop-scale overrides (phantom runs on a CPU)
DESK_PROFILE: Dict[str, str] = {
    "flow.iters": "2000",
    "flow.batch": "16",
    "flow.decay-period": "500",
    "harmonizer.iters": "1000",
    "harmonizer.batch": "16",
    "harmonizer.decay-period": "250",
    "segmenter.iters": "1000",
    "segmenter.batch": "16",
    "segmenter.decay-period": "250",
    "adapt.lr": "1e-4",
    "adapt.batch": "8",
}


@dataclass
class TrainConfig:
    """Optimisation settings shared by every trained network"""

    iterations: int
    batch_size: int
    learning_rate: float
    decay_factor: float = 0.5
    decay_period: int = 500
    seed: int = 0
    val_every: int = 100
    log_every: int = 100
    snapshot_every: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")


def _parse_pair(text: str, cast) -> Tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"Expected two comma-separated values, got '{text}'")
    return cast(parts[0]), cast(parts[1])


def _parse_list(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


# key -> (attribute, parser, default text)
_KEYS: Dict[str, Tuple[str, object, str]] = {
    "seed": ("seed", int, "0"),
    "image-size": ("image_size", int, "64"),
    "output-dir": ("output_dir", str, "runs/default"),
    "source-site": ("source_site", str, "site-a"),
    "flow.depth": ("flow_depth", int, str(FLOW_DEPTH)),
    "flow.margin-c": ("flow_margin_c", float, str(MARGIN_C)),
    "flow.margin-units": ("flow_margin_units", str, "bpd"),
    "flow.margin-mode": ("flow_margin_mode", str, MARGIN_MODE),
    "flow.margin-ratio": ("flow_margin_ratio", float, str(MARGIN_RATIO)),
    "flow.ood-threshold": ("flow_ood_threshold", float, str(OOD_THRESHOLD)),
    "flow.ood-fraction": ("flow_ood_fraction", float, str(OOD_FRACTION)),
    "flow.dequant-mode": ("flow_dequant_mode", str, "uniform"),
    "flow.dequant-layers": ("flow_dequant_layers", int, "4"),
    "flow.iters": ("flow_iters", int, str(FLOW_ITERATIONS)),
    "flow.lr": ("flow_lr", float, str(FLOW_LEARNING_RATE)),
    "flow.batch": ("flow_batch", int, str(FLOW_BATCH_SIZE)),
    "flow.decay-factor": ("flow_decay_factor", float, str(FLOW_DECAY_FACTOR)),
    "flow.decay-period": ("flow_decay_period", int, str(FLOW_DECAY_PERIOD)),
    "harmonizer.variant": ("harmonizer_variant", str, "unet"),
    "harmonizer.iters": ("harmonizer_iters", int, str(NETWORK_ITERATIONS)),
    "harmonizer.lr": ("harmonizer_lr", float, str(NETWORK_LEARNING_RATE)),
    "harmonizer.batch": ("harmonizer_batch", int, str(NETWORK_BATCH_SIZE)),
    "harmonizer.decay-factor": ("harmonizer_decay_factor", float, str(NETWORK_DECAY_FACTOR)),
    "harmonizer.decay-period": ("harmonizer_decay_period", int, str(NETWORK_DECAY_PERIOD)),
    "segmenter.iters": ("segmenter_iters", int, str(NETWORK_ITERATIONS)),
    "segmenter.lr": ("segmenter_lr", float, str(NETWORK_LEARNING_RATE)),
    "segmenter.batch": ("segmenter_batch", int, str(NETWORK_BATCH_SIZE)),
    "segmenter.decay-period": ("segmenter_decay_period", int, str(NETWORK_DECAY_PERIOD)),
    "adapt.lr": ("adapt_lr", float, str(ADAPT_LEARNING_RATE)),
    "adapt.batch": ("adapt_batch", int, str(ADAPT_BATCH_SIZE)),
    "adapt.max-epochs": ("adapt_max_epochs", int, str(ADAPT_MAX_EPOCHS)),
    "adapt.stopping": ("adapt_stopping", str, "source-bpd"),
    "adapt.bpd-tolerance": ("adapt_bpd_tolerance", float, str(BPD_TOLERANCE)),
    "adapt.entropy-patience": ("adapt_entropy_patience", int, str(ENTROPY_PATIENCE)),
    "data.sites": ("data_sites", _parse_list, "site-a,site-b,site-c"),
    "data.n-per-site": ("data_n_per_site", int, "64"),
    "data.class-count": ("data_class_count", int, "5"),
    "augment.kinds": (
        "augment_kinds", _parse_list,
        "gamma-contrast,brightness-shift,multiplicative-scale,random-monotone-map"
    ),
    "augment.gamma-range": ("augment_gamma_range", lambda t: _parse_pair(t, float), "0.4,2.5"),
    "augment.brightness-range": ("augment_brightness_range", lambda t: _parse_pair(t, float), "-60,60"),
    "augment.scale-range": ("augment_scale_range", lambda t: _parse_pair(t, float), "0.6,1.5"),
    "augment.knots-range": ("augment_knots_range", lambda t: _parse_pair(t, int), "4,8"),
    "augment.knot-jitter": ("augment_knot_jitter", float, "40"),
    "augment.composition-range": ("augment_composition_range", lambda t: _parse_pair(t, int), "1,3"),
}


class RunConfig:
    """
    Fully resolved run configuration

    Every known key is an attribute (dots and dashes become underscores,
    e.g. `flow.margin-c` -> `flow_margin_c`). Unknown keys are rejected.
    """

    def __init__(self, values: Optional[Mapping[str, str]] = None):
        """
        Resolve a configuration

        Args:
            values: Raw `key -> text` items; missing keys take their defaults
        """
        values = dict(values or {})
        unknown = sorted(set(values) - set(_KEYS))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        self._text: Dict[str, str] = {}
        for key, (attribute, parser, default) in _KEYS.items():
            text = values.get(key)
            text = default if text is None or str(text).strip() == "" else str(text).strip()
            try:
                value = parser(text)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid value for '{key}': '{text}' ({e})")
            setattr(self, attribute, value)
            self._text[key] = text
        self._validate()

    @classmethod
    def from_file(cls, path: Optional[str], overrides: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """
        Load a flat key = value file and apply command-line overrides

        Args:
            path: Config file path, or None for pure defaults
            overrides: Items that replace file values (e.g. from --seed / --out)
        """
        values: Dict[str, str] = {}
        if path is not None:
            config_path = Path(path)
            if not config_path.exists():
                raise ConfigError(f"Config file not found: {config_path}")
            values.update({k: v for k, v in dotenv_values(config_path).items() if v is not None})
        values.update(overrides or {})
        return cls(values)

    @classmethod
    def desk_profile(cls, overrides: Optional[Mapping[str, str]] = None) -> "RunConfig":
        values = dict(DESK_PROFILE)
        values.update(overrides or {})
        return cls(values)

    def _validate(self):
        if self.image_size < 16 or self.image_size % 16 != 0:
            raise ConfigError(f"image-size must be a positive multiple of 16, got {self.image_size}")
        if self.flow_depth < 0 or self.flow_depth % 3 != 0:
            raise ConfigError(f"flow.depth must be 0 or a multiple of 3, got {self.flow_depth}")
        if self.flow_margin_units not in ("bpd", "nats"):
            raise ConfigError(f"flow.margin-units must be 'bpd' or 'nats', got {self.flow_margin_units}")
        if self.flow_margin_mode not in ("relative", "absolute"):
            raise ConfigError(f"flow.margin-mode must be 'relative' or 'absolute', got {self.flow_margin_mode}")
        if self.flow_margin_ratio <= 1.0:
            raise ConfigError(f"flow.margin-ratio must exceed 1, got {self.flow_margin_ratio}")
        if self.flow_dequant_mode not in ("uniform", "variational"):
            raise ConfigError(f"flow.dequant-mode must be 'uniform' or 'variational'")
        if not 0.0 <= self.flow_ood_fraction <= 1.0:
            raise ConfigError(f"flow.ood-fraction must lie in [0, 1], got {self.flow_ood_fraction}")
        if self.harmonizer_variant not in ("unet", "affine-head"):
            raise ConfigError(f"harmonizer.variant must be 'unet' or 'affine-head'")
        if self.source_site not in self.data_sites:
            raise ConfigError(f"source-site '{self.source_site}' is not listed in data.sites")
        if self.adapt_lr < 0:
            raise ConfigError(f"adapt.lr must be >= 0, got {self.adapt_lr}")

    def resolved_items(self) -> List[Tuple[str, str]]:
        """Every key with the text value in effect, in declaration order"""
        return [(key, self._text[key]) for key in _KEYS]

    def to_text(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in self.resolved_items())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Mapping[str, str]) -> "RunConfig":
        values = dict(self._text)
        values.update(overrides)
        return RunConfig(values)

    def train_config(self, stage: str, seed_offset: int = 0) -> TrainConfig:
        """
        Build the TrainConfig of a training stage

        Args:
            stage: 'flow', 'harmonizer' or 'segmenter'
        """
        if stage == "flow":
            return TrainConfig(
                iterations=self.flow_iters, batch_size=self.flow_batch, learning_rate=self.flow_lr,
                decay_factor=self.flow_decay_factor, decay_period=self.flow_decay_period,
                seed=self.seed + seed_offset
            )
        if stage == "harmonizer":
            return TrainConfig(
                iterations=self.harmonizer_iters, batch_size=self.harmonizer_batch,
                learning_rate=self.harmonizer_lr, decay_factor=self.harmonizer_decay_factor,
                decay_period=self.harmonizer_decay_period, seed=self.seed + seed_offset
            )
        if stage == "segmenter":
            return TrainConfig(
                iterations=self.segmenter_iters, batch_size=self.segmenter_batch,
                learning_rate=self.segmenter_lr, decay_factor=NETWORK_DECAY_FACTOR,
                decay_period=self.segmenter_decay_period, seed=self.seed + seed_offset
            )
        raise ValueError(f"Unknown training stage: {stage}")
