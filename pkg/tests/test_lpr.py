"""Refinement branch wiring and the reconstruction identity."""

import numpy as np
import pytest
import torch
from torch import nn

from ampn import pyramid
from ampn.lpr import REFINER_IN_CHANNELS, PyramidRefiner, blend_final
from ampn.mgbg import MgbgOutput
from ampn.types import ModelConfig


def _passthrough_low(pyr) -> MgbgOutput:
    """A low-res stage that did nothing: bokeh is the residual itself."""
    residual = pyr.residual
    mask = torch.full_like(residual[:, :1], 0.5)
    return MgbgOutput(mask=mask, base_mask=mask, intermediate=residual,
                      bokeh=residual, mask_source="external")


class TestDisabledRefinement:
    def test_modules_absent(self):
        refiner = PyramidRefiner(ModelConfig.desk_scale(use_refinement=False))
        assert refiner.trunk is None
        assert refiner.merge is None
        assert refiner.finetune is None

    def test_climb_reproduces_input(self, rng):
        # with no refinement and a passthrough low-res stage, climbing the
        # pyramid is exactly the inverse transform
        refiner = PyramidRefiner(ModelConfig.desk_scale(use_refinement=False))
        for levels in (1, 2, 3):
            x = torch.from_numpy(
                rng.uniform(size=(1, 3, 32, 32)).astype(np.float32))
            pyr = pyramid.decompose(x, levels)
            out = refiner.refine_and_upsample(pyr, _passthrough_low(pyr))
            assert out.shape == x.shape
            assert float((out - x).abs().max()) <= 1e-5


class TestRefinementMask:
    def test_three_channels_at_coarsest_band(self, desk_config):
        refiner = PyramidRefiner(desk_config)
        x = torch.rand(1, 3, 64, 64)
        pyr = pyramid.decompose(x, desk_config.pyramid_levels)
        low = _passthrough_low(pyr)
        with torch.no_grad():
            mr = refiner.refinement_mask(pyr.residual, low.mask, low.bokeh,
                                         pyr.highfreq[-1])
        assert mr.shape == (1, 3, *pyr.highfreq[-1].shape[-2:])

    def test_without_attention_mask_is_trunk_output(self):
        cfg = ModelConfig.desk_scale(use_dual_attention=False)
        refiner = PyramidRefiner(cfg)
        assert refiner.merge is None
        x = torch.rand(1, 3, 64, 64)
        pyr = pyramid.decompose(x, cfg.pyramid_levels)
        low = _passthrough_low(pyr)
        band = pyr.highfreq[-1]
        size = band.shape[-2:]
        stacked = torch.cat([
            pyramid.bilinear_resize(pyr.residual, size),
            pyramid.bilinear_resize(low.mask, size),
            pyramid.bilinear_resize(low.bokeh, size),
            band,
        ], dim=1)
        with torch.no_grad():
            direct = refiner.trunk(stacked)
            via_api = refiner.refinement_mask(pyr.residual, low.mask,
                                              low.bokeh, band)
        assert torch.equal(via_api, direct)

    def test_with_attention_mask_differs_from_trunk_output(self, desk_config):
        refiner = PyramidRefiner(desk_config)
        assert refiner.merge is not None
        x = torch.rand(1, 3, 64, 64)
        pyr = pyramid.decompose(x, desk_config.pyramid_levels)
        low = _passthrough_low(pyr)
        band = pyr.highfreq[-1]
        size = band.shape[-2:]
        stacked = torch.cat([
            pyramid.bilinear_resize(pyr.residual, size),
            pyramid.bilinear_resize(low.mask, size),
            pyramid.bilinear_resize(low.bokeh, size),
            band,
        ], dim=1)
        with torch.no_grad():
            raw = refiner.trunk(stacked)
            merged = refiner.refinement_mask(pyr.residual, low.mask,
                                             low.bokeh, band)
        assert not torch.equal(merged, raw)

    def test_input_channel_count(self):
        assert REFINER_IN_CHANNELS == 10


class TestClimb:
    def test_full_resolution_output(self, desk_config):
        refiner = PyramidRefiner(desk_config)
        x = torch.rand(2, 3, 64, 96)
        pyr = pyramid.decompose(x, desk_config.pyramid_levels)
        with torch.no_grad():
            out = refiner.refine_and_upsample(pyr, _passthrough_low(pyr))
        assert out.shape == (2, 3, 64, 96)

    def test_one_finetune_block_per_level(self):
        for levels in (1, 2, 3):
            cfg = ModelConfig.desk_scale(pyramid_levels=levels)
            refiner = PyramidRefiner(cfg)
            assert len(refiner.finetune) == levels

    def test_finetune_blocks_not_shared(self, desk_config):
        refiner = PyramidRefiner(desk_config)
        ptrs = {b.conv1.weight.data_ptr() for b in refiner.finetune}
        assert len(ptrs) == len(refiner.finetune)

    def test_zero_finetune_reduces_to_plain_upsample_of_bokeh(self, desk_config):
        # zeroed modulation drops every band: the climb is then just
        # repeated zero-insertion upsampling of the low-res bokeh
        refiner = PyramidRefiner(desk_config)
        with torch.no_grad():
            for block in refiner.finetune:
                for p in block.parameters():
                    p.zero_()
        x = torch.rand(1, 3, 64, 64)
        pyr = pyramid.decompose(x, desk_config.pyramid_levels)
        low = _passthrough_low(pyr)
        with torch.no_grad():
            out = refiner.refine_and_upsample(pyr, low)
        expected = low.bokeh
        for _ in range(desk_config.pyramid_levels):
            expected = pyramid.upsample(expected)
        assert torch.equal(out, expected)

    def test_output_stays_in_display_range(self, desk_config):
        # the climb output is an image: bounded even when the modulation
        # weights are pushed far from their initialization
        torch.manual_seed(404)
        refiner = PyramidRefiner(desk_config)
        with torch.no_grad():
            for p in refiner.parameters():
                p.add_(torch.randn_like(p))
        x = torch.rand(1, 3, 64, 64)
        pyr = pyramid.decompose(x, desk_config.pyramid_levels)
        with torch.no_grad():
            out = refiner.refine_and_upsample(pyr, _passthrough_low(pyr))
        assert float(out.min()) >= 0.0
        assert float(out.max()) <= 1.0

    def test_gradients_reach_trunk_and_finetune(self, desk_config):
        refiner = PyramidRefiner(desk_config)
        x = torch.rand(1, 3, 64, 64)
        pyr = pyramid.decompose(x, desk_config.pyramid_levels)
        out = refiner.refine_and_upsample(pyr, _passthrough_low(pyr))
        out.sum().backward()
        for name in ("trunk", "finetune"):
            grads = [p.grad for p in getattr(refiner, name).parameters()
                     if p.grad is not None]
            assert grads and any(float(g.abs().sum()) > 0 for g in grads), name


class TestBlendFinal:
    def test_mask_one_returns_image(self):
        image = torch.rand(1, 3, 16, 16)
        refined = torch.rand(1, 3, 16, 16)
        out = blend_final(image, refined, torch.ones(1, 1, 16, 16))
        assert torch.equal(out, image)

    def test_mask_zero_returns_refined(self):
        image = torch.rand(1, 3, 16, 16)
        refined = torch.rand(1, 3, 16, 16)
        out = blend_final(image, refined, torch.zeros(1, 1, 16, 16))
        assert torch.equal(out, refined)

    def test_mask_upsampled_to_image_size(self):
        image = torch.rand(1, 3, 16, 16)
        refined = torch.rand(1, 3, 16, 16)
        out = blend_final(image, refined, torch.ones(1, 1, 4, 4))
        assert torch.equal(out, image)  # all-ones survives bilinear exactly

    def test_convex_combination(self, rng):
        image = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        refined = torch.from_numpy(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        mask = torch.from_numpy(rng.uniform(size=(1, 1, 8, 8)).astype(np.float32))
        out = blend_final(image, refined, mask, clamp=False)
        lower = torch.minimum(image, refined)
        upper = torch.maximum(image, refined)
        assert bool((out >= lower - 1e-6).all())
        assert bool((out <= upper + 1e-6).all())

    def test_clamp_behavior(self):
        image = torch.ones(1, 3, 8, 8)
        refined = torch.full((1, 3, 8, 8), 1.5)  # out of range pre-blend
        mask = torch.zeros(1, 1, 8, 8)
        assert float(blend_final(image, refined, mask).max()) == 1.0
        assert float(blend_final(image, refined, mask, clamp=False).max()) == 1.5
