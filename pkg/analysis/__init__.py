"""
Analysis module for harmonization experiments
Phantom data, segmentation and histogram metrics, ranking and report tables
"""

from .phantoms import PhantomDataset, PhantomSpec, SiteTransform, generate, render, sample_anatomy
from .site_presets import SitePresets
from .segmentation_metrics import dice, hd95, mean_hd95, prediction_entropy
from .histogram_metrics import hist_match, normalized_histogram, wasserstein_hist
from .friedman_ranking import friedman_rank
from .segmenter import ToySegmenter, evaluate_segmentation, summarize_segmentation, train_segmenter

__all__ = [
    'PhantomDataset', 'PhantomSpec', 'SiteTransform', 'generate', 'render', 'sample_anatomy', 'SitePresets',
    'dice', 'hd95', 'mean_hd95', 'prediction_entropy', 'hist_match', 'normalized_histogram',
    'wasserstein_hist', 'friedman_rank', 'ToySegmenter', 'evaluate_segmentation', 'summarize_segmentation',
    'train_segmenter'
]
