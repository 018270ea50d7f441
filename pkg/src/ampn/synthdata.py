"""Deterministic synthetic wide/shallow depth-of-field pairs.

Each sample is a textured background with 1-3 filled shapes on top. The
shapes form the ground-truth focus region; the target keeps them untouched
(bitwise, via a hard select) and replaces everything else with a gaussian
blur of the input, alpha-feathered over a 3 px band just outside the region
so the composite has no unrealistic hard edge.

Two properties matter for weak supervision and are baked in deliberately:
the foreground gets a contrasting fill and its own texture, so the focus
region is identifiable from the input alone (the mask predictor never sees
the target); and the background carries multi-scale texture, so blurring it
visibly changes the loss.

Generation is pure per seed: the same seed always yields the same sample,
independent of how many samples a dataset holds.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import cv2
import numpy as np
import torch
from scipy.ndimage import distance_transform_edt, gaussian_filter

from ampn.io import load_image, save_image
from ampn.types import FocusMask, ImageTensor

_FEATHER_PX = 3.0
DEFAULT_SIZE = (128, 192)
DEFAULT_SIGMA_RANGE = (2.0, 5.0)


@dataclass
class SyntheticSample:
    """A paired sample. Loaded-from-disk pairs may lack a region (None) and
    carry blur_sigma = nan (unknown); generated samples always have both."""

    input: ImageTensor
    target: ImageTensor
    gt_region: np.ndarray | None  # [1,H,W] float32, values exactly 0 or 1
    blur_sigma: float
    seed: int

    @property
    def gt_mask(self) -> FocusMask:
        if self.gt_region is None:
            raise ValueError("sample has no ground-truth focus region")
        return FocusMask.from_array(self.gt_region)


def _noise_field(rng: np.random.Generator, shape: tuple[int, int],
                 cells: list[tuple[int, float]]) -> np.ndarray:
    """Sum of bilinearly upsampled uniform grids, one per (cell size, amp)."""
    h, w = shape
    field = np.zeros((3, h, w), dtype=np.float32)
    for cell, amp in cells:
        gh = max(2, math.ceil(h / cell))
        gw = max(2, math.ceil(w / cell))
        coarse = rng.uniform(-1.0, 1.0, size=(3, gh, gw)).astype(np.float32)
        for c in range(3):
            field[c] += amp * cv2.resize(coarse[c], (w, h),
                                         interpolation=cv2.INTER_LINEAR)
    return field


def _draw_shapes(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Rasterize 1-3 random ellipses/polygons into a {0,1} uint8 region map."""
    h, w = shape
    region = np.zeros((h, w), dtype=np.uint8)
    scale = min(h, w)
    for _ in range(int(rng.integers(1, 4))):
        cy = float(rng.uniform(0.28, 0.72)) * h
        cx = float(rng.uniform(0.28, 0.72)) * w
        if rng.uniform() < 0.5:
            axes = (int(rng.uniform(0.14, 0.30) * scale),
                    int(rng.uniform(0.14, 0.30) * scale))
            angle = float(rng.uniform(0.0, 180.0))
            cv2.ellipse(region, ((cx, cy), (2 * max(axes[0], 2), 2 * max(axes[1], 2)),
                                 angle), 1, thickness=-1)
        else:
            n_vertices = int(rng.integers(5, 10))
            base_r = rng.uniform(0.16, 0.30) * scale
            angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=n_vertices))
            radii = base_r * rng.uniform(0.6, 1.15, size=n_vertices)
            pts = np.stack([cx + radii * np.cos(angles),
                            cy + radii * np.sin(angles)], axis=1)
            cv2.fillPoly(region, [np.round(pts).astype(np.int32)], 1)
    return region


def generate_sample(seed: int, size: tuple[int, int] = DEFAULT_SIZE,
                    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE,
                    divisor: int = 32) -> SyntheticSample:
    """Build one paired sample. ``size`` must suit the pipeline (see divisor)."""
    h, w = size
    if h < divisor or w < divisor or h % divisor or w % divisor:
        raise ValueError(f"size {h}x{w} must be a positive multiple of {divisor}")
    lo, hi = sigma_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad sigma_range {sigma_range}")
    rng = np.random.default_rng(seed)

    base = rng.uniform(0.20, 0.80, size=(3, 1, 1)).astype(np.float32)
    yy = np.linspace(-0.5, 0.5, h, dtype=np.float32)[None, :, None]
    xx = np.linspace(-0.5, 0.5, w, dtype=np.float32)[None, None, :]
    grad = (rng.uniform(-0.3, 0.3, size=(3, 1, 1)).astype(np.float32) * yy
            + rng.uniform(-0.3, 0.3, size=(3, 1, 1)).astype(np.float32) * xx)
    background = base + grad + _noise_field(
        rng, (h, w), [(32, 0.16), (16, 0.11), (8, 0.08), (3, 0.06)])

    region = _draw_shapes(rng, (h, w))
    # contrasting fill so the region is identifiable from the input alone
    fg_base = np.clip(1.0 - base + rng.uniform(-0.15, 0.15, size=(3, 1, 1)),
                      0.08, 0.92).astype(np.float32)
    foreground = fg_base + _noise_field(rng, (h, w), [(12, 0.10), (4, 0.06)])

    image = np.where(region[None] == 1, foreground, background)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    sigma = float(rng.uniform(lo, hi))
    if sigma > 0.0:
        blurred = np.stack([
            gaussian_filter(image[c], sigma=sigma, mode="mirror")
            for c in range(3)]).astype(np.float32)
        distance = distance_transform_edt(region == 0)
        alpha = np.clip(1.0 - distance / _FEATHER_PX, 0.0, 1.0).astype(np.float32)
        mixed = np.clip(alpha[None] * image + (1.0 - alpha[None]) * blurred,
                        0.0, 1.0).astype(np.float32)
        # hard select keeps the focus region bitwise identical to the input
        target = np.where(region[None] == 1, image, mixed)
    else:
        target = image.copy()

    return SyntheticSample(
        input=ImageTensor.from_array(image),
        target=ImageTensor.from_array(target),
        gt_region=region[None].astype(np.float32),
        blur_sigma=sigma,
        seed=seed,
    )


def _sample_seed(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, index]).generate_state(1)[0])


def _split_count(n: int, train_frac: float) -> int:
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    k = math.floor(train_frac * n)
    if k < 1 or k >= n:
        raise ValueError(f"degenerate split: {k} train of {n}")
    return k


class SyntheticDataset:
    """Ordered samples 0..n-1; first floor(train_frac*n) are train, rest eval."""

    def __init__(self, n: int, seed: int, size: tuple[int, int] = DEFAULT_SIZE,
                 sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE,
                 train_frac: float = 0.8, cache: bool = True):
        self.n = n
        self.seed = seed
        self.size = tuple(size)
        self.sigma_range = tuple(sigma_range)
        self.train_count = _split_count(n, train_frac)
        self.eval_count = n - self.train_count
        self._cache: dict[int, SyntheticSample] | None = {} if cache else None

    def sample(self, index: int) -> SyntheticSample:
        if not 0 <= index < self.n:
            raise IndexError(index)
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        sample = generate_sample(_sample_seed(self.seed, index),
                                 self.size, self.sigma_range)
        if self._cache is not None:
            self._cache[index] = sample
        return sample

    def train_sample(self, i: int) -> SyntheticSample:
        if not 0 <= i < self.train_count:
            raise IndexError(i)
        return self.sample(i)

    def eval_sample(self, j: int) -> SyntheticSample:
        if not 0 <= j < self.eval_count:
            raise IndexError(j)
        return self.sample(self.train_count + j)


def make_dataset(n: int, seed: int, train_frac: float = 0.8,
                 size: tuple[int, int] = DEFAULT_SIZE,
                 sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE
                 ) -> SyntheticDataset:
    return SyntheticDataset(n, seed, size=size, sigma_range=sigma_range,
                            train_frac=train_frac)


# ---------------------------------------------------------------------------
# on-disk layouts
# ---------------------------------------------------------------------------


def export_dataset(dataset, root: str | os.PathLike) -> None:
    """Write ``<root>/{train,eval}/{input,target,gt_mask}/NNNNN.png``.

    PNGs are 8-bit, so values are quantized; the in-memory generator is the
    bit-exact reference.
    """
    root = os.fspath(root)
    for split, count, getter in (("train", dataset.train_count, dataset.train_sample),
                                 ("eval", dataset.eval_count, dataset.eval_sample)):
        for kind in ("input", "target", "gt_mask"):
            os.makedirs(os.path.join(root, split, kind), exist_ok=True)
        for i in range(count):
            sample = getter(i)
            name = f"{i:05d}.png"
            save_image(sample.input, os.path.join(root, split, "input", name))
            save_image(sample.target, os.path.join(root, split, "target", name))
            save_image(sample.gt_mask, os.path.join(root, split, "gt_mask", name))


class DirectoryDataset:
    """Reads the layout written by :func:`export_dataset`."""

    def __init__(self, root: str | os.PathLike):
        self.root = os.fspath(root)
        self._names: dict[str, list[str]] = {}
        for split in ("train", "eval"):
            input_dir = os.path.join(self.root, split, "input")
            if not os.path.isdir(input_dir):
                raise FileNotFoundError(f"missing {input_dir}")
            self._names[split] = sorted(os.listdir(input_dir))
            if not self._names[split]:
                raise ValueError(f"empty split {split!r} in {self.root}")
        self.train_count = len(self._names["train"])
        self.eval_count = len(self._names["eval"])

    def _load(self, split: str, i: int) -> SyntheticSample:
        name = self._names[split][i]
        image = load_image(os.path.join(self.root, split, "input", name))
        target = load_image(os.path.join(self.root, split, "target", name))
        mask_path = os.path.join(self.root, split, "gt_mask", name)
        gt = None
        if os.path.exists(mask_path):
            gt = load_image(mask_path).data.numpy()
        return SyntheticSample(input=image, target=target, gt_region=gt,
                               blur_sigma=float("nan"), seed=-1)

    def train_sample(self, i: int) -> SyntheticSample:
        return self._load("train", i)

    def eval_sample(self, j: int) -> SyntheticSample:
        return self._load("eval", j)


class PairedDirectoryDataset:
    """Adapter for pre-rendered pairs: ``<root>/original`` + ``<root>/bokeh``.

    Files are paired by name, ordered lexically, and split first-k-train (the
    usual convention for the public bokeh sets laid out this way). No ground
    truth masks.
    """

    def __init__(self, root: str | os.PathLike, train_frac: float = 0.8,
                 input_dir: str = "original", target_dir: str = "bokeh"):
        self.root = os.fspath(root)
        a = os.path.join(self.root, input_dir)
        b = os.path.join(self.root, target_dir)
        if not (os.path.isdir(a) and os.path.isdir(b)):
            raise FileNotFoundError(f"expected {a} and {b}")
        names = sorted(set(os.listdir(a)) & set(os.listdir(b)))
        if len(names) < 2:
            raise ValueError("need at least 2 paired files")
        self._paths = [(os.path.join(a, n), os.path.join(b, n)) for n in names]
        self.train_count = _split_count(len(names), train_frac)
        self.eval_count = len(names) - self.train_count

    def _load(self, index: int) -> SyntheticSample:
        in_path, gt_path = self._paths[index]
        image = load_image(in_path)
        target = load_image(gt_path)
        return SyntheticSample(input=image, target=target, gt_region=None,
                               blur_sigma=float("nan"), seed=-1)

    def train_sample(self, i: int) -> SyntheticSample:
        if not 0 <= i < self.train_count:
            raise IndexError(i)
        return self._load(i)

    def eval_sample(self, j: int) -> SyntheticSample:
        if not 0 <= j < self.eval_count:
            raise IndexError(j)
        return self._load(self.train_count + j)


def batch_tensors(samples: list[SyntheticSample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack inputs and targets into [B,3,H,W] training tensors."""
    inputs = torch.stack([s.input.data for s in samples])
    targets = torch.stack([s.target.data for s in samples])
    return inputs, targets
