# Pipeline module
from .harmonization_engine import HarmonizationEngine

__all__ = ['HarmonizationEngine']
