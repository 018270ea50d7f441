"""Laplacian pyramid: decomposition, reconstruction, and resampling helpers.

The smoothing kernel is the separable binomial [1,4,6,4,1]/16 with mirror
borders (reflection without repeating the edge sample). Upsampling inserts
zeros and blurs with the kernel doubled per axis, which restores the mass
lost to the zeros; with this pairing reconstruction is exact by construction
and constant images pass through both directions unchanged.

All operators accept [C,H,W] or [B,C,H,W] float tensors and are autograd
friendly (padding is index_select, smoothing is grouped conv2d). Range
validation happens at the package boundary, not here: decompose is linear
and is used on signed high-frequency data internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

_KERNEL_1D = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_PAD = 2  # kernel reach on each side


def _mirror_indices(n: int, pad: int, device: torch.device) -> torch.Tensor:
    """Sample indices for positions -pad..n-1+pad under mirror reflection.

    Mirror (no edge repeat): for [a b c d], two left pads read c b. A length-1
    axis has nothing to reflect and clamps to its only sample.
    """
    if n == 1:
        return torch.zeros(n + 2 * pad, dtype=torch.long, device=device)
    period = 2 * n - 2
    idx = torch.arange(-pad, n + pad, device=device).abs() % period
    return torch.where(idx >= n, period - idx, idx)


def _pad_mirror(x: torch.Tensor, pad: int) -> torch.Tensor:
    ih = _mirror_indices(x.shape[-2], pad, x.device)
    iw = _mirror_indices(x.shape[-1], pad, x.device)
    return x.index_select(-2, ih).index_select(-1, iw)


def _blur(x: torch.Tensor, axis_gain: float = 1.0) -> torch.Tensor:
    """Separable binomial smoothing with mirror borders.

    ``axis_gain`` scales the 1D kernel in each pass (so the effective 2D gain
    is its square); upsampling uses 2.0.
    """
    c = x.shape[-3]
    k = (_KERNEL_1D * axis_gain).to(dtype=x.dtype, device=x.device)
    xp = _pad_mirror(x, _PAD)
    kv = k.view(1, 1, 5, 1).expand(c, 1, 5, 1)
    kh = k.view(1, 1, 1, 5).expand(c, 1, 1, 5)
    y = F.conv2d(xp, kv, groups=c)
    return F.conv2d(y, kh, groups=c)


def _with_batch(x: torch.Tensor):
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected [C,H,W] or [B,C,H,W], got shape {tuple(x.shape)}")


def downsample(x: torch.Tensor) -> torch.Tensor:
    """Blur then decimate by 2 per axis. Axes must have even length."""
    x, squeeze = _with_batch(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"downsample needs even spatial dims, got {h}x{w}")
    y = _blur(x)[..., ::2, ::2]
    return y.squeeze(0) if squeeze else y


def upsample(x: torch.Tensor) -> torch.Tensor:
    """Zero-insert to double size, then blur with per-axis gain 2."""
    x, squeeze = _with_batch(x)
    b, c, h, w = x.shape
    z = x.new_zeros(b, c, 2 * h, 2 * w)
    z[..., ::2, ::2] = x
    y = _blur(z, axis_gain=2.0)
    return y.squeeze(0) if squeeze else y


@dataclass
class PyramidDecomposition:
    """``highfreq[0]`` is the finest band; ``residual`` is the blurred core."""

    residual: torch.Tensor
    highfreq: list[torch.Tensor]

    @property
    def levels(self) -> int:
        return len(self.highfreq)


def decompose(image: torch.Tensor, levels: int) -> PyramidDecomposition:
    """Split an image into ``levels`` high-frequency bands plus a residual.

    Spatial dims must be divisible by 2**levels; anything else is rejected
    rather than padded, so shapes stay exact through a round trip.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    x, squeeze = _with_batch(image)
    h, w = x.shape[-2:]
    div = 2 ** levels
    if h % div or w % div:
        raise ValueError(
            f"image size {h}x{w} not divisible by 2^{levels}; "
            "resize before decomposing"
        )
    bands: list[torch.Tensor] = []
    current = x
    for _ in range(levels):
        smaller = downsample(current)
        bands.append(current - upsample(smaller))
        current = smaller
    if squeeze:
        bands = [b.squeeze(0) for b in bands]
        current = current.squeeze(0)
    return PyramidDecomposition(residual=current, highfreq=bands)


def reconstruct(pyr: PyramidDecomposition, clamp: bool = True) -> torch.Tensor:
    """Invert :func:`decompose`; clamps to [0,1] at the very end by default."""
    x = pyr.residual
    for band in reversed(pyr.highfreq):
        up = upsample(x)
        if up.shape != band.shape:
            raise ValueError(
                f"band shape {tuple(band.shape)} does not continue "
                f"residual shape {tuple(x.shape)}"
            )
        x = up + band
    return x.clamp(0.0, 1.0) if clamp else x


def bilinear_resize(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Plain bilinear resize (align_corners=False) to (height, width)."""
    x, squeeze = _with_batch(x)
    if x.shape[-2:] != tuple(size):
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    return x.squeeze(0) if squeeze else x
