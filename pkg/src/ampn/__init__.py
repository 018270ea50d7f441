"""Mask-guided synthetic bokeh rendering with pyramid refinement."""

from ampn.types import (
    BackboneSpec,
    FocusMask,
    ImageTensor,
    LossWeights,
    ModelConfig,
    TrainConfig,
)

__all__ = [
    "BackboneSpec",
    "FocusMask",
    "ImageTensor",
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
]

__version__ = "0.1.0"
