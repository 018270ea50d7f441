"""Low-resolution stage: mask prediction and mask-guided bokeh generation.

Works entirely at the pyramid residual resolution. The mask predictor (g1)
maps the residual to a sigmoid focus map; the bokeh generator (g2) renders an
intermediate bokeh from the residual concatenated with that map, and a dual
attention merge combines residual and intermediate into the low-res bokeh.

The mask predictor is trained with no mask supervision at all: its only
gradient comes from how the mask steers the generator and the final blend.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ampn.blocks import DualAttentionMerge, build_backbone
from ampn.types import ModelConfig


@dataclass
class MgbgOutput:
    """Everything the low-res stage produces, all at residual resolution."""

    mask: torch.Tensor          # [B,1,h,w], focus weights actually used downstream
    base_mask: torch.Tensor     # [B,1,h,w], before any f-stop adjustment
    intermediate: torch.Tensor  # [B,3,h,w], generator output before the merge
    bokeh: torch.Tensor         # [B,3,h,w], merged low-res bokeh
    mask_source: str            # "g1" or "external"


class MaskGuidedGenerator(nn.Module):
    """g1 + g2 with the ablation flags applied at construction time.

    ``g1`` / ``g2_trunk`` can be injected (any module with the right channel
    counts) which keeps oracle tests straight-line; by default both are built
    from the config's backbone spec.
    """

    def __init__(self, config: ModelConfig, g1: nn.Module | None = None,
                 g2_trunk: nn.Module | None = None):
        super().__init__()
        self.config = config
        if config.use_g1:
            self.g1 = g1 if g1 is not None else build_backbone(
                config.generator_backbone(3), in_channels=3, out_channels=1)
        else:
            self.g1 = None
        if config.use_g2:
            self.g2_trunk = g2_trunk if g2_trunk is not None else build_backbone(
                config.generator_backbone(4), in_channels=4, out_channels=3)
            self.g2_merge = DualAttentionMerge(3)
        else:
            self.g2_trunk = None
            self.g2_merge = None

    def predict_mask(self, residual: torch.Tensor) -> torch.Tensor:
        """Focus map from the residual image alone, sigmoid bounded."""
        if self.g1 is None:
            raise RuntimeError("mask predictor disabled by config")
        return torch.sigmoid(self.g1(residual))

    def generate_bokeh(self, residual: torch.Tensor, mask: torch.Tensor):
        """Render (intermediate, bokeh) conditioned on the focus map.

        With the generator disabled both outputs are the residual itself,
        bit for bit; downstream stages then carry all rendering.
        """
        if mask.shape[-2:] != residual.shape[-2:] or mask.shape[-3] != 1:
            raise ValueError(
                f"mask shape {tuple(mask.shape)} does not condition "
                f"residual {tuple(residual.shape)}"
            )
        if self.g2_trunk is None:
            return residual, residual
        intermediate = self.g2_trunk(torch.cat([residual, mask], dim=1))
        bokeh = self.g2_merge(residual, intermediate)
        return intermediate, bokeh

    def forward(self, residual: torch.Tensor,
                external_mask: torch.Tensor | None = None,
                mask_transform=None) -> MgbgOutput:
        """Full low-res stage. An external mask always wins over g1.

        ``mask_transform`` (the f-stop control) is applied to whichever mask
        was chosen, before it conditions the generator.
        """
        if external_mask is not None:
            base, source = external_mask, "external"
        elif self.g1 is not None:
            base, source = self.predict_mask(residual), "g1"
        else:
            raise ValueError(
                "no focus mask available: mask predictor is disabled and no "
                "external mask was supplied"
            )
        mask = mask_transform(base) if mask_transform is not None else base
        intermediate, bokeh = self.generate_bokeh(residual, mask)
        return MgbgOutput(mask=mask, base_mask=base, intermediate=intermediate,
                          bokeh=bokeh, mask_source=source)
