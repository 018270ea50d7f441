"""Refinement branch: per-level high-frequency modulation and upsampling.

The refinement mask M_R is predicted once at the coarsest band's resolution
from the (bilinearly upsampled) residual, focus map, and low-res bokeh
concatenated with that band. Each pyramid level then runs M_R through its own
small fine-tuning block and multiplies the result into the band before it is
added back. The running bokeh climbs the pyramid with the transform's own
upsampler, so with refinement disabled and the low-res bokeh equal to the
residual the climb reproduces the original image exactly; bilinear resizing
is used everywhere a map merely needs to change resolution (refiner inputs,
M_R between levels, the focus map in the final blend).
"""

from __future__ import annotations

import torch
from torch import nn

from ampn.blocks import DualAttentionMerge, FineTuneBlock, build_backbone
from ampn.mgbg import MgbgOutput
from ampn.pyramid import PyramidDecomposition, bilinear_resize, upsample
from ampn.types import ModelConfig

REFINER_IN_CHANNELS = 10  # residual 3 + mask 1 + bokeh 3 + band 3


class PyramidRefiner(nn.Module):
    """Owns the refiner trunk, its attention pair, and the fine-tune blocks."""

    def __init__(self, config: ModelConfig, trunk: nn.Module | None = None):
        super().__init__()
        self.config = config
        if config.use_refinement:
            self.trunk = trunk if trunk is not None else build_backbone(
                config.refiner_backbone(),
                in_channels=REFINER_IN_CHANNELS, out_channels=3)
            self.merge = DualAttentionMerge(3) if config.use_dual_attention else None
            self.finetune = nn.ModuleList(
                FineTuneBlock(3) for _ in range(config.pyramid_levels))
        else:
            self.trunk = None
            self.merge = None
            self.finetune = None

    def refinement_mask(self, residual, mask, bokeh, band):
        """Predict the 3-channel refinement mask at ``band`` resolution.

        Without the attention pair the trunk output is used directly.
        """
        size = band.shape[-2:]
        up_residual = bilinear_resize(residual, size)
        up_mask = bilinear_resize(mask, size)
        up_bokeh = bilinear_resize(bokeh, size)
        raw = self.trunk(torch.cat([up_residual, up_mask, up_bokeh, band], dim=1))
        if self.merge is None:
            return raw
        return self.merge(up_bokeh, raw)

    def refine_and_upsample(self, pyr: PyramidDecomposition,
                            low: MgbgOutput) -> torch.Tensor:
        """Climb the pyramid from the low-res bokeh to full resolution.

        The result is an image and is clamped to [0,1]. The bound matters
        beyond tidiness: the final composite weights this output by
        (1 - focus map), and an unbounded branch could absorb the whole
        fitting burden through arbitrarily large values under a vanishing
        weight, leaving the focus map free to drift to 1 everywhere. Keeping
        the branch in display range forces the focus map itself to carry the
        separation between passed-through and generated regions.
        """
        bands = pyr.highfreq
        running = low.bokeh
        refine_mask = None
        if self.trunk is not None:
            refine_mask = self.refinement_mask(
                pyr.residual, low.mask, low.bokeh, bands[-1])
        for level in range(len(bands) - 1, -1, -1):
            band = bands[level]
            running = upsample(running)
            if refine_mask is None:
                running = running + band
            else:
                running = running + self.finetune[level](refine_mask) * band
                if level > 0:
                    refine_mask = bilinear_resize(
                        refine_mask, bands[level - 1].shape[-2:])
        return running.clamp(0.0, 1.0)


def blend_final(image: torch.Tensor, refined: torch.Tensor,
                mask: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    """Final composite: mask * image + (1 - mask) * refined.

    The focus map is bilinearly upsampled to the image size; each output
    pixel is therefore a convex combination of the two inputs (before the
    optional clamp, which can only move values further inside [0,1]).
    """
    weights = bilinear_resize(mask, image.shape[-2:])
    out = weights * image + (1.0 - weights) * refined
    return out.clamp(0.0, 1.0) if clamp else out
