"""Surface defect segmentation with a skip-connected convolutional autoencoder.

Train on defect-free images, reconstruct, and segment defects by
thresholding the reconstruction residual.
"""

from ._core import (
    Model,
    ResiduaError,
    evaluate,
    generate_synthetic,
    read_image,
    read_mask,
    stat_threshold,
    sweep,
    threshold,
)

__version__ = "0.1.0"

__all__ = [
    "Model",
    "ResiduaError",
    "evaluate",
    "generate_synthetic",
    "read_image",
    "read_mask",
    "stat_threshold",
    "sweep",
    "threshold",
    "__version__",
]
