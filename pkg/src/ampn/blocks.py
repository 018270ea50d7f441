"""Reusable network blocks.

The trunk is a MobileNetV2-flavored encoder-decoder: a 3x3 stem, three (or
fewer) stride-2 stages of inverted residuals, and a decoder that mirrors the
encoder with nearest-neighbor upsampling and skip concatenation. Attention is
the coordinate-attention form: factorized average pooling along each spatial
axis, a shared squeeze conv, then per-axis gates.
"""

from __future__ import annotations

import torch
from torch import nn

from ampn.types import BackboneSpec


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def init_weights(module: nn.Module) -> None:
    """Kaiming fan-in normal on conv weights, zero biases.

    Applied in named_modules order so a fixed torch seed gives a bit-exact
    initialization. Fine-tune blocks get a zeroed output conv on top: the
    refinement branch then starts as a plain pyramid climb, and the band
    modulation fades in as those weights move off zero instead of injecting
    scaled band noise into the first forward passes.
    """
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, FineTuneBlock):
            nn.init.zeros_(m.conv2.weight)


class CoordinateAttention(nn.Module):
    """Per-axis attention gates: x * sigmoid(gate_h) * sigmoid(gate_w).

    Pooling collapses one spatial axis at a time, the pooled strips are
    concatenated and squeezed through a shared 1x1 conv with hard-swish, then
    split back into per-axis 1x1 gate convs. Output shape equals input shape;
    a zero input stays zero regardless of parameters because the gates only
    ever scale.
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        mid = max(8, channels // reduction)
        self.pool_h = nn.AdaptiveAvgPool2d((None, 1))
        self.pool_w = nn.AdaptiveAvgPool2d((1, None))
        self.squeeze = nn.Conv2d(channels, mid, kernel_size=1)
        self.act = nn.Hardswish()
        self.gate_h = nn.Conv2d(mid, channels, kernel_size=1)
        self.gate_w = nn.Conv2d(mid, channels, kernel_size=1)

    def forward(self, x):
        n, c, h, w = x.shape
        strip_h = self.pool_h(x)                        # [n,c,h,1]
        strip_w = self.pool_w(x).permute(0, 1, 3, 2)    # [n,c,w,1]
        y = self.act(self.squeeze(torch.cat([strip_h, strip_w], dim=2)))
        part_h, part_w = torch.split(y, [h, w], dim=2)
        a_h = torch.sigmoid(self.gate_h(part_h))                      # [n,c,h,1]
        a_w = torch.sigmoid(self.gate_w(part_w.permute(0, 1, 3, 2)))  # [n,c,1,w]
        return x * a_h * a_w


class DualAttentionMerge(nn.Module):
    """Sum of two independent coordinate attentions over two inputs.

    The two branches do not share weights. Used once to merge the residual
    image with the generated low-res bokeh, and once inside the refinement
    branch to form the refinement mask.
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        self.input_attention = CoordinateAttention(channels, reduction)
        self.output_attention = CoordinateAttention(channels, reduction)

    def forward(self, first, second):
        return self.input_attention(first) + self.output_attention(second)


class InvertedResidual(nn.Module):
    """1x1 expand -> depthwise 3x3 -> 1x1 project, residual when shapes allow."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 expansion: int = 4):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        hidden = in_channels * expansion
        self.use_skip = stride == 1 and in_channels == out_channels
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 1),
            nn.ReLU6(inplace=True),
            nn.Conv2d(hidden, hidden, 3, stride=stride, padding=1, groups=hidden),
            nn.ReLU6(inplace=True),
            nn.Conv2d(hidden, out_channels, 1),
        )

    def forward(self, x):
        y = self.body(x)
        return x + y if self.use_skip else y


class FineTuneBlock(nn.Module):
    """Two 3x3 convs with a LeakyReLU(0.2) between, channel preserving.

    Turns the upsampled refinement mask into a per-pixel modulation field for
    one high-frequency band.
    """

    def __init__(self, channels: int = 3):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class EncoderDecoderBackbone(nn.Module):
    """U-shaped trunk built from inverted residuals.

    Input spatial dims must be divisible by 2**downsample_stages. The decoder
    upsamples with nearest neighbor, concatenates the matching encoder
    feature, and fuses with a 3x3 conv; the head conv is linear (callers add
    their own output nonlinearity).
    """

    def __init__(self, spec: BackboneSpec, in_channels: int, out_channels: int):
        super().__init__()
        self.spec = spec
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, spec.stem_width, 3, padding=1),
            nn.ReLU6(inplace=True),
        )
        stages = []
        width = spec.stem_width
        for stage_width, depth in zip(spec.stage_widths, spec.blocks):
            blocks = [InvertedResidual(width, stage_width, stride=2)]
            blocks += [InvertedResidual(stage_width, stage_width)
                       for _ in range(depth - 1)]
            stages.append(nn.Sequential(*blocks))
            width = stage_width
        self.stages = nn.ModuleList(stages)

        skip_widths = [spec.stem_width, *spec.stage_widths[:-1]]
        ups = []
        for skip_width in reversed(skip_widths):
            ups.append(nn.Sequential(
                nn.Conv2d(width + skip_width, skip_width, 3, padding=1),
                nn.ReLU6(inplace=True),
            ))
            width = skip_width
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(width, out_channels, 3, padding=1)

    def forward(self, x):
        h, w = x.shape[-2:]
        div = 2 ** self.spec.downsample_stages
        if h % div or w % div:
            raise ValueError(
                f"backbone input {h}x{w} not divisible by {div}"
            )
        feat = self.stem(x)
        skips = [feat]
        for stage in self.stages:
            feat = stage(feat)
            skips.append(feat)
        skips.pop()  # bottleneck is not its own skip
        for up in self.ups:
            feat = nn.functional.interpolate(feat, scale_factor=2, mode="nearest")
            feat = up(torch.cat([feat, skips.pop()], dim=1))
        return self.head(feat)


def build_backbone(spec: BackboneSpec, in_channels: int,
                   out_channels: int) -> EncoderDecoderBackbone:
    """Construct a trunk from its spec; parameter count via count_parameters."""
    return EncoderDecoderBackbone(spec, in_channels, out_channels)
