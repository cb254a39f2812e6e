# Harmonizer module
from .network import HARMONIZER_VARIANTS, HarmonizerNet, build_harmonizer
from .ssim import SsimConfig, constant_ssim, gaussian_window, l1_distance, reconstruction_loss, ssim, ssim_map
from .pretraining import PretrainResult, pretrain, validation_loss

__all__ = [
    'HARMONIZER_VARIANTS', 'HarmonizerNet', 'build_harmonizer',
    'SsimConfig', 'constant_ssim', 'gaussian_window', 'l1_distance', 'reconstruction_loss', 'ssim', 'ssim_map',
    'PretrainResult', 'pretrain', 'validation_loss'
]
