"""Compressed-domain video captioning on a synthetic moving-shapes corpus.

A toy GOP codec supplies I-frames and residuals, two small CNNs turn them
into feature maps, a residual-guided attention encoder with a temporal gate
summarises them at every step, and an LSTM decodes the caption.
"""

from .config import ConfigError, ExperimentConfig
from .model import Captioner
from .rae import Variant

__all__ = ["Captioner", "ConfigError", "ExperimentConfig", "Variant"]
__version__ = "0.1.0"
