# Config module
from .config import CODE_VERSION, DESK_PROFILE, RunConfig, TrainConfig

__all__ = ['CODE_VERSION', 'DESK_PROFILE', 'RunConfig', 'TrainConfig']
