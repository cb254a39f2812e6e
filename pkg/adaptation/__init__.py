# Adaptation module
from .adapter import STOPPING_KINDS, AdaptConfig, AdaptResult, adapt, adaptation_loss
from .stopping import StopDecision, stop_entropy, stop_fixed, stop_oracle_dice, stop_source_bpd

__all__ = [
    'STOPPING_KINDS', 'AdaptConfig', 'AdaptResult', 'adapt', 'adaptation_loss',
    'StopDecision', 'stop_entropy', 'stop_fixed', 'stop_oracle_dice', 'stop_source_bpd'
]
