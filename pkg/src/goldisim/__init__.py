"""Lesion simulator, FROC metrics and curriculum domain randomisation for chest-radiograph style detection."""

__version__ = "0.1.0"

from .compositor import AnnotatedDataset, AnnotatedImage, BoundingBox, SimParams, generate_dataset, phantom_normal
from .errors import GoldisimError

__all__ = [
    "AnnotatedDataset",
    "AnnotatedImage",
    "BoundingBox",
    "GoldisimError",
    "SimParams",
    "generate_dataset",
    "phantom_normal",
]
