# Flows module
from .coupling import (
    CouplingLayer,
    Squeeze,
    channel_mask,
    checkerboard_mask,
    coupling_forward,
    coupling_inverse,
    squeeze,
    unsqueeze
)
from .dequantization import UniformDequantizer, VariationalDequantizer, logit_transform
from .flow_model import FlowModel, bpd, bpd_from_log_prob, log_prob, mean_bpd, sample
from .guidance import GuidanceConfig, guided_loss, ood_count, separation_gap
from .training import FlowTrainingResult, train_flow

__all__ = [
    'CouplingLayer', 'Squeeze', 'channel_mask', 'checkerboard_mask', 'coupling_forward', 'coupling_inverse',
    'squeeze', 'unsqueeze', 'UniformDequantizer', 'VariationalDequantizer', 'logit_transform',
    'FlowModel', 'bpd', 'bpd_from_log_prob', 'log_prob', 'mean_bpd', 'sample',
    'GuidanceConfig', 'guided_loss', 'ood_count', 'separation_gap', 'FlowTrainingResult', 'train_flow'
]
