"""End-to-end model: pyramid split, low-res stage, refinement, final blend."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ampn.blocks import count_parameters, init_weights
from ampn.lpr import PyramidRefiner, blend_final
from ampn.mgbg import MaskGuidedGenerator, MgbgOutput
from ampn.pyramid import PyramidDecomposition, bilinear_resize, decompose
from ampn.types import ModelConfig

MIN_INPUT_SIDE = 4


@dataclass
class PipelineOutput:
    """Batched forward results. Images are in [0,1]; stage maps are raw."""

    final: torch.Tensor          # [B,3,H,W] composited output in [0,1]
    refined: torch.Tensor        # [B,3,H,W] refinement branch output in [0,1]
    low: MgbgOutput              # residual-resolution stage outputs
    pyramid: PyramidDecomposition


class BokehPipeline(nn.Module):
    """The full renderer. Construct via :func:`build_pipeline` for seeding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.mgbg = MaskGuidedGenerator(config)
        self.lpr = PyramidRefiner(config)

    # -- shape rules ---------------------------------------------------------

    def check_input(self, image: torch.Tensor) -> None:
        h, w = image.shape[-2:]
        div = self.config.required_divisor()
        if h < MIN_INPUT_SIDE or w < MIN_INPUT_SIDE:
            raise ValueError(f"input {h}x{w} is below the {MIN_INPUT_SIDE}px minimum")
        if h % div or w % div:
            raise ValueError(
                f"input {h}x{w} not divisible by {div} "
                f"(pyramid levels + trunk downsampling)"
            )

    def valid_size(self, height: int, width: int) -> tuple[int, int]:
        """Nearest size this config can process (used by callers that resize)."""
        div = self.config.required_divisor()
        h = max(div, round(height / div) * div)
        w = max(div, round(width / div) * div)
        return h, w

    # -- forward -------------------------------------------------------------

    def forward(self, image: torch.Tensor,
                external_mask: torch.Tensor | None = None,
                mask_transform=None) -> PipelineOutput:
        """Render a batch. ``external_mask`` (any resolution) overrides g1;
        ``mask_transform`` adjusts whichever mask is used (f-stop control).

        Accepts [C,H,W] or [B,C,H,W]; output tensors are always batched.
        """
        if image.ndim == 3:
            image = image.unsqueeze(0)
        self.check_input(image)
        pyr = decompose(image, self.config.pyramid_levels)
        mask = external_mask
        if mask is not None:
            if mask.ndim == 3:
                mask = mask.unsqueeze(0)
            mask = bilinear_resize(mask, pyr.residual.shape[-2:])
        low = self.mgbg(pyr.residual, mask, mask_transform)
        refined = self.lpr.refine_and_upsample(pyr, low)
        final = blend_final(image, refined, low.mask)
        return PipelineOutput(final=final, refined=refined, low=low, pyramid=pyr)

    # -- parameter accounting --------------------------------------------------

    def module_groups(self) -> dict[str, list[tuple[str, nn.Module]]]:
        """Checkpoint groups -> (prefix, module) lists, skipping disabled parts."""
        groups: dict[str, list[tuple[str, nn.Module]]] = {
            "g1": [], "g2": [], "attention_modules": [],
            "lpr_refiner": [], "lpr_finetune": [],
        }
        if self.mgbg.g1 is not None:
            groups["g1"].append(("mgbg.g1", self.mgbg.g1))
        if self.mgbg.g2_trunk is not None:
            groups["g2"].append(("mgbg.g2_trunk", self.mgbg.g2_trunk))
            groups["attention_modules"].append(("mgbg.g2_merge", self.mgbg.g2_merge))
        if self.lpr.trunk is not None:
            groups["lpr_refiner"].append(("lpr.trunk", self.lpr.trunk))
            groups["lpr_finetune"].append(("lpr.finetune", self.lpr.finetune))
            if self.lpr.merge is not None:
                groups["attention_modules"].append(("lpr.merge", self.lpr.merge))
        return groups

    def parameter_counts(self) -> dict[str, int]:
        counts = {
            name: sum(count_parameters(m) for _, m in members)
            for name, members in self.module_groups().items()
        }
        counts["total"] = count_parameters(self)
        return counts

    def grouped_state_dict(self) -> dict[str, torch.Tensor]:
        """Flat ``group/relative.name`` -> tensor mapping for serialization."""
        state: dict[str, torch.Tensor] = {}
        for group, members in self.module_groups().items():
            for prefix, module in members:
                for key, value in module.state_dict().items():
                    state[f"{group}/{prefix}.{key}"] = value
        return state

    def load_grouped_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        """Inverse of grouped_state_dict; key sets must match exactly."""
        expected = self.grouped_state_dict()
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise ValueError(
                f"state does not fit this config (missing {missing[:3]}, "
                f"unexpected {extra[:3]})"
            )
        for group, members in self.module_groups().items():
            for prefix, module in members:
                full = f"{group}/{prefix}."
                sub = {k[len(full):]: v for k, v in state.items()
                       if k.startswith(full)}
                module.load_state_dict(sub)


def build_pipeline(config: ModelConfig, seed: int | None = None) -> BokehPipeline:
    """Construct and initialize; a fixed seed gives bit-identical weights."""
    if seed is None:
        seed = config.train.seed
    torch.manual_seed(seed)
    pipeline = BokehPipeline(config)
    init_weights(pipeline)
    if pipeline.mgbg.g1 is not None:
        # the focus map starts low so the blend leans on the generated side:
        # every generator sees gradient from step one, and the mask rises
        # only where passing the input through genuinely helps. Started
        # neutral or high, the mask saturates toward 1 before the generators
        # learn anything and the weak supervision of the mask stalls.
        nn.init.constant_(pipeline.mgbg.g1.head.bias, -2.0)
    if pipeline.mgbg.g2_trunk is not None:
        # start the generated branch as a near-identity over the residual:
        # the generator head opens silent and the merge gates pass the
        # residual through, so from step one the low-res bokeh is already a
        # smoothed copy of the input rather than noise. Pretrained encoders
        # would reach such a state within a few steps; training from random
        # weights, the focus map would otherwise saturate toward the
        # pass-through shortcut before the generators catch up, and mask
        # discovery would stall.
        nn.init.zeros_(pipeline.mgbg.g2_trunk.head.weight)
        for gate in (pipeline.mgbg.g2_merge.input_attention.gate_h,
                     pipeline.mgbg.g2_merge.input_attention.gate_w):
            nn.init.constant_(gate.bias, 3.0)
    return pipeline
