"""Shared rendering entry point for the CLI and the HTTP service.

Both faces funnel through :func:`render`, so identical inputs and weights
produce identical pixels (and identical PNG bytes, since both encode through
the same io path). The f-stop control is implemented here: background mask
values are replaced by the requested level before the mask conditions the
generator and the final blend, while in-focus values (at or above the
threshold) are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ampn.container import Checkpoint, apply_checkpoint
from ampn.pipeline import BokehPipeline, build_pipeline
from ampn.pyramid import bilinear_resize
from ampn.types import FocusMask, ImageTensor


def load_pipeline(checkpoint_path) -> tuple[BokehPipeline, Checkpoint]:
    """Build a frozen pipeline from a checkpoint file."""
    checkpoint = Checkpoint.load(checkpoint_path)
    pipeline = build_pipeline(checkpoint.config, seed=checkpoint.config.train.seed)
    apply_checkpoint(pipeline, checkpoint)
    pipeline.eval()
    return pipeline, checkpoint


class MaskShapeError(ValueError):
    """Mask dimensions do not match the image they should steer."""


def adjust_mask_strength(mask: FocusMask | torch.Tensor, background_level: float,
                         focus_threshold: float = 0.8):
    """Set every mask value below the threshold to ``background_level``.

    Values at or above ``focus_threshold`` pass through untouched, so the
    in-focus area is preserved exactly; lower levels ask the generator for
    stronger blur. Idempotent for fixed (level, threshold) since replaced
    values stay below the threshold. Requires 0 <= level < threshold <= 1.
    """
    if not 0.0 < focus_threshold <= 1.0:
        raise ValueError(f"focus_threshold must be in (0,1], got {focus_threshold}")
    if not 0.0 <= background_level < 1.0:
        raise ValueError(
            f"background_level must be in [0,1), got {background_level}")
    if background_level >= focus_threshold:
        raise ValueError(
            f"background_level {background_level} must stay below the "
            f"focus threshold {focus_threshold}")
    data = mask.data if isinstance(mask, FocusMask) else mask
    adjusted = torch.where(data >= focus_threshold, data,
                           torch.full_like(data, background_level))
    return FocusMask(adjusted) if isinstance(mask, FocusMask) else adjusted


@dataclass
class RenderRequest:
    """One render job. ``background_level`` needs a mask source to act on
    (the predictor or a supplied mask); None means no adjustment."""

    image: ImageTensor
    mask: FocusMask | None = None
    background_level: float | None = None
    focus_threshold: float = 0.8


@dataclass
class RenderResult:
    image: ImageTensor   # final composite, possibly at a resized resolution
    mask: FocusMask      # mask before any f-stop adjustment, at image resolution
    mask_source: str     # "g1" or "external"
    resized: bool        # True when the input had to be resized to fit


def render(pipeline: BokehPipeline, request: RenderRequest) -> RenderResult:
    """Run one frozen forward pass per the request.

    The input is bilinearly resized to the nearest size the pipeline accepts
    when needed (reported via ``resized``); a supplied mask must match the
    original image dimensions and is resized alongside it.
    """
    config = pipeline.config
    if not config.use_g1 and request.mask is None:
        raise ValueError("this model has no mask predictor; supply a mask")
    if request.background_level is not None:
        # validate eagerly so bad levels fail before any heavy work
        adjust_mask_strength(torch.zeros(1, 1, 1), request.background_level,
                             request.focus_threshold)

    image = request.image
    mask = request.mask
    if mask is not None and (mask.height, mask.width) != (image.height, image.width):
        raise MaskShapeError(
            f"mask is {mask.height}x{mask.width} but the image is "
            f"{image.height}x{image.width}")

    target = pipeline.valid_size(image.height, image.width)
    resized = target != (image.height, image.width)
    x = image.data
    m = mask.data if mask is not None else None
    if resized:
        x = bilinear_resize(x, target).clamp(0.0, 1.0)
        if m is not None:
            m = bilinear_resize(m, target).clamp(0.0, 1.0)

    transform = None
    if request.background_level is not None:
        level, threshold = request.background_level, request.focus_threshold
        transform = lambda values: adjust_mask_strength(values, level, threshold)

    pipeline.eval()
    with torch.no_grad():
        out = pipeline(x.unsqueeze(0), external_mask=m,
                       mask_transform=transform)
        full_mask = bilinear_resize(out.low.base_mask,
                                    x.shape[-2:]).clamp(0.0, 1.0)

    return RenderResult(
        image=ImageTensor(out.final[0]),
        mask=FocusMask(full_mask[0]),
        mask_source=out.low.mask_source,
        resized=resized,
    )
