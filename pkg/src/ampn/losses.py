"""Training objectives and image metrics.

The training loss is a weighted sum of three terms on the final composite
only (no intermediate supervision): mean absolute error, a perceptual
distance over deep features, and 1 - SSIM. The perceptual term follows the
usual deep-feature recipe (unit-normalize channels at every position, average
squared differences across stages); its extractor is pluggable. The built-in
default uses fixed random weights from a pinned seed so results are
reproducible offline with no downloads, and smooth activations so numeric
gradient checks stay clean.

PSNR here is computed on float images in [0,1] (peak 1.0). Metrics after
8-bit quantization differ; evaluation code labels which convention it used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ampn.container import ContainerFormatError, file_digest, read_container, write_container

_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_NORM_EPS = 1e-10

_DEFAULT_STAGES = (16, 32, 64, 64)
_DEFAULT_SEED = 1305


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.ndim == 3 else x


# ---------------------------------------------------------------------------
# pixel terms
# ---------------------------------------------------------------------------


def l1_loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (output - target).abs().mean()


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    # built in float64 so the weights sum to 1 as exactly as possible; a
    # misnormalized window shifts every SSIM value through the mu terms
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_value(a: torch.Tensor, b: torch.Tensor, window_size: int = 11,
               sigma: float = 1.5) -> torch.Tensor:
    """Mean SSIM over valid window positions, channels treated independently.

    Two constant images with values v1, v2 give
    (2 v1 v2 + C1) / (v1^2 + v2^2 + C1) exactly, since all (co)variances
    vanish; identical images give 1.
    """
    a, b = _batched(a), _batched(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    h, w = a.shape[-2:]
    if h < window_size or w < window_size:
        raise ValueError(f"images must be at least {window_size}px per side for SSIM")
    c = a.shape[-3]
    window = _gaussian_window(window_size, sigma).to(a.dtype)
    kernel = window.expand(c, 1, window_size, window_size)

    def smooth(x):
        return F.conv2d(x, kernel, groups=c)

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)) / (
        (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2))
    return ssim_map.mean()


def ssim_loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return 1.0 - ssim_value(output, target)


def psnr(output: torch.Tensor, target: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB on [0,1] data; inf for equal inputs.

    Accumulates in float64 so the value does not drift with image size.
    """
    diff = (output.detach().double() - target.detach().double())
    mse = float((diff * diff).mean())
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


# ---------------------------------------------------------------------------
# perceptual distance
# ---------------------------------------------------------------------------


class PerceptualExtractor(nn.Module):
    """Stack of stride-2 convs with SiLU; features tapped after every stage.

    Weights are frozen. The default construction draws them from a dedicated
    generator so every process gets the same extractor; alternative weights
    load from the package's container format.
    """

    def __init__(self, stage_widths: tuple[int, ...] = _DEFAULT_STAGES,
                 seed: int = _DEFAULT_SEED, label: str | None = None):
        super().__init__()
        self.stage_widths = tuple(stage_widths)
        self.label = label if label is not None else f"builtin-random-s{seed}"
        gen = torch.Generator().manual_seed(seed)
        stages = []
        in_ch = 3
        for width in self.stage_widths:
            conv = nn.Conv2d(in_ch, width, 3, stride=2, padding=1)
            fan_in = in_ch * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  / math.sqrt(fan_in))
                conv.bias.zero_()
            stages.append(conv)
            in_ch = width
        self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.stages:
            x = F.silu(conv(x))
            feats.append(x)
        return feats

    # -- container round trip -------------------------------------------------

    def save(self, path) -> None:
        tensors = {}
        for i, conv in enumerate(self.stages):
            tensors[f"stage{i}/weight"] = conv.weight.detach().numpy()
            tensors[f"stage{i}/bias"] = conv.bias.detach().numpy()
        write_container(path, "extractor",
                        {"stage_widths": list(self.stage_widths)}, tensors)

    @classmethod
    def load(cls, path) -> "PerceptualExtractor":
        kind, meta, tensors = read_container(path)
        if kind != "extractor":
            raise ContainerFormatError(f"expected extractor weights, found {kind!r}")
        widths = tuple(int(w) for w in meta["stage_widths"])
        extractor = cls(stage_widths=widths, label=f"file-{file_digest(path, 12)}")
        with torch.no_grad():
            for i, conv in enumerate(extractor.stages):
                conv.weight.copy_(torch.from_numpy(
                    np.array(tensors[f"stage{i}/weight"], dtype=np.float32)))
                conv.bias.copy_(torch.from_numpy(
                    np.array(tensors[f"stage{i}/bias"], dtype=np.float32)))
        return extractor


_default_extractor: PerceptualExtractor | None = None


def default_extractor() -> PerceptualExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = PerceptualExtractor()
    return _default_extractor


def perceptual_distance(output: torch.Tensor, target: torch.Tensor,
                        extractor: PerceptualExtractor | None = None) -> torch.Tensor:
    """Mean squared distance between unit-normalized deep features.

    Zero for identical inputs; differentiable with respect to both images
    (the extractor weights stay frozen).
    """
    if extractor is None:
        extractor = default_extractor()
    a, b = _batched(output), _batched(target)
    total = a.new_zeros(())
    feats_a = extractor(a)
    feats_b = extractor(b)
    for fa, fb in zip(feats_a, feats_b):
        na = fa / torch.sqrt((fa * fa).sum(dim=1, keepdim=True) + _NORM_EPS)
        nb = fb / torch.sqrt((fb * fb).sum(dim=1, keepdim=True) + _NORM_EPS)
        total = total + ((na - nb) ** 2).mean()
    return total / len(feats_a)


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------


@dataclass
class LossTerms:
    """Scalar tensors; ``total`` is the weighted sum used for backprop."""

    l1: torch.Tensor
    perceptual: torch.Tensor
    ssim: torch.Tensor
    total: torch.Tensor

    def detach_floats(self) -> tuple[float, float, float, float]:
        return (float(self.l1.detach()), float(self.perceptual.detach()),
                float(self.ssim.detach()), float(self.total.detach()))


def total_loss(output: torch.Tensor, target: torch.Tensor, weights,
               extractor: PerceptualExtractor | None = None) -> LossTerms:
    """The full training objective, applied to the final composite only."""
    term_l1 = l1_loss(output, target)
    term_p = perceptual_distance(output, target, extractor)
    term_s = ssim_loss(output, target)
    total = (weights.l1 * term_l1 + weights.perceptual * term_p
             + weights.ssim * term_s)
    return LossTerms(l1=term_l1, perceptual=term_p, ssim=term_s, total=total)
