# Numerics module
from .tensor_ops import DTYPE, celu2, conv2d, derive_seed, make_generator, set_determinism, to_batch, to_images
from .layers import CELU2, ChannelAffineNorm, ConvLayer, UShapedNet, seeded_init
from .optim import AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    'DTYPE', 'celu2', 'conv2d', 'derive_seed', 'make_generator', 'set_determinism', 'to_batch', 'to_images',
    'CELU2', 'ChannelAffineNorm', 'ConvLayer', 'UShapedNet', 'seeded_init',
    'AdamState', 'adam_step', 'GradCheckReport', 'grad_check'
]
