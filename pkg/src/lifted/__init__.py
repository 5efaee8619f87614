"""Non-rigid structure from motion over a UV-gridded surface.

Learns a mean shape with identity and expression bases, per-instance scaled
orthographic cameras and codes, and an SH illumination decomposition of UV textures.
"""

__version__ = "0.1.0"

from .model import (CameraPose, Dataset, InstanceRecord, ShapeModel, UvGrid, instance_shape,
                    load_dataset, load_model, save_dataset, save_model)
from .objective import LossWeights, total_loss
from .solver import SolverConfig, fit, gradient_check, initialize

__all__ = [
    "CameraPose", "Dataset", "InstanceRecord", "ShapeModel", "UvGrid", "instance_shape",
    "load_dataset", "load_model", "save_dataset", "save_model", "LossWeights", "total_loss",
    "SolverConfig", "fit", "gradient_check", "initialize",
]
