"""Numerical laboratory for parabolic motions of restricted problems."""

from .config import DEFAULTS, LabConfig, load_config
from .models import ModelId, ModelParams

__all__ = ["DEFAULTS", "LabConfig", "load_config", "ModelId", "ModelParams"]
__version__ = "0.1.0"
