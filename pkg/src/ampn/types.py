"""Core value types and configuration.

Images are CHW float32 tensors in [0, 1], sRGB as decoded (no linearization).
Pixel values outside that range only ever exist transiently inside the
network; everything crossing a public boundary is wrapped in ImageTensor or
FocusMask, which validate on construction and are treated as immutable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

# ---------------------------------------------------------------------------
# image values
# ---------------------------------------------------------------------------


def _validate_chw(data: torch.Tensor, *, channels: tuple[int, ...], kind: str) -> None:
    if not isinstance(data, torch.Tensor):
        raise TypeError(f"{kind} expects a torch.Tensor, got {type(data).__name__}")
    if data.ndim != 3:
        raise ValueError(f"{kind} expects a [C,H,W] tensor, got shape {tuple(data.shape)}")
    c, h, w = data.shape
    if c not in channels:
        raise ValueError(f"{kind} expects {channels} channels, got {c}")
    if h < 1 or w < 1:
        raise ValueError(f"{kind} needs at least one pixel per axis, got {h}x{w}")
    if data.dtype != torch.float32:
        raise ValueError(f"{kind} expects float32 data, got {data.dtype}")
    if not torch.isfinite(data).all():
        raise ValueError(f"{kind} contains non-finite values")
    lo = float(data.min())
    hi = float(data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{kind} values must lie in [0,1], got range [{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """An RGB or grayscale image, shape [C,H,W], float32, values in [0,1].

    Instances are immutable by convention: nothing in this package writes to
    ``data`` after construction, so sharing across threads is safe.
    """

    data: torch.Tensor

    def __post_init__(self) -> None:
        _validate_chw(self.data, channels=(1, 3), kind="ImageTensor")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageTensor":
        """Wrap a CHW float numpy array (copies into a float32 tensor)."""
        return cls(torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)))

    def numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy()


@dataclass(frozen=True, eq=False)
class FocusMask:
    """A single-channel focus map, shape [1,H,W], float32, values in [0,1].

    1.0 marks in-focus pixels (kept sharp), 0.0 fully defocused background.
    """

    data: torch.Tensor

    def __post_init__(self) -> None:
        _validate_chw(self.data, channels=(1,), kind="FocusMask")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "FocusMask":
        arr = np.ascontiguousarray(array, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        return cls(torch.from_numpy(arr))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three training objective terms."""

    l1: float = 10.0
    perceptual: float = 2.0
    ssim: float = 1.0

    def __post_init__(self) -> None:
        for name in ("l1", "perceptual", "ssim"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    Defaults are sized for a CPU desk run; ``paper_scale`` returns the
    full-size settings used for the published results.
    """

    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 2e-4
    optimizer: str = "adam"
    image_size: tuple[int, int] = (128, 192)
    seed: int = 0
    eval_every: int = 50

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        h, w = self.image_size
        if h < 4 or w < 4:
            raise ValueError("image_size must be at least 4x4")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @classmethod
    def paper_scale(cls) -> "TrainConfig":
        return cls(epochs=500, batch_size=8, image_size=(1024, 1536))


@dataclass(frozen=True)
class BackboneSpec:
    """Shape of one encoder-decoder trunk.

    ``stage_widths`` are the encoder widths after each stride-2 stage;
    ``blocks`` is how many inverted-residual blocks each stage stacks (the
    first one in a stage carries the stride). ``target_params`` is purely
    informational.
    """

    stem_width: int
    stage_widths: tuple[int, ...]
    blocks: tuple[int, ...]
    block_type: str = "inverted_residual"
    target_params: int | None = None

    def __post_init__(self) -> None:
        if len(self.stage_widths) != len(self.blocks):
            raise ValueError("stage_widths and blocks must have equal length")
        if len(self.stage_widths) < 1:
            raise ValueError("need at least one downsample stage")
        if self.stem_width < 1 or min(self.stage_widths) < 1 or min(self.blocks) < 1:
            raise ValueError("widths and block counts must be positive")
        if self.block_type != "inverted_residual":
            raise ValueError(f"unknown block_type {self.block_type!r}")

    @property
    def downsample_stages(self) -> int:
        return len(self.stage_widths)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build and train one model, reproducibly.

    The four ``use_*`` flags switch off individual pieces of the pipeline for
    ablation runs: the mask predictor (g1), the low-res bokeh generator (g2),
    the pyramid refinement branch, and the paired attention merges inside the
    refinement branch. With ``use_g1=False`` an external mask must be supplied
    at inference time.
    """

    pyramid_levels: int = 2
    base_width: int = 32
    use_g1: bool = True
    use_g2: bool = True
    use_refinement: bool = True
    use_dual_attention: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.base_width < 4:
            raise ValueError("base_width must be >= 4")

    @classmethod
    def desk_scale(cls, **overrides) -> "ModelConfig":
        """A small configuration that trains in minutes on a CPU."""
        overrides.setdefault("base_width", 8)
        return cls(**overrides)

    # -- backbone shapes ----------------------------------------------------

    def generator_backbone(self, in_channels: int) -> BackboneSpec:
        """Trunk spec for the mask predictor and the bokeh generator."""
        w = self.base_width
        del in_channels  # stem adapts; widths do not depend on the input
        return BackboneSpec(
            stem_width=w,
            stage_widths=(2 * w, 4 * w, 8 * w),
            blocks=(2, 2, 4),
        )

    def refiner_backbone(self) -> BackboneSpec:
        """Shallower trunk (2 downsample stages) for the refinement branch."""
        w = self.base_width
        return BackboneSpec(
            stem_width=max(4, w // 2),
            stage_widths=(max(6, (3 * w) // 4), w),
            blocks=(1, 1),
        )

    def required_divisor(self) -> int:
        """Input H and W must be divisible by this to run the full pipeline.

        The pyramid halves ``pyramid_levels`` times and the generator trunks
        halve three more times at the residual resolution.
        """
        return 2 ** (self.pyramid_levels + 3)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        data = dict(payload)
        if "loss_weights" in data:
            data["loss_weights"] = LossWeights(**data["loss_weights"])
        if "train" in data:
            train = dict(data["train"])
            if "image_size" in train:
                train["image_size"] = tuple(train["image_size"])
            data["train"] = TrainConfig(**train)
        return cls(**data)


# ---------------------------------------------------------------------------
# flat key=value config files
# ---------------------------------------------------------------------------

_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _parse_scalar(key: str, raw: str):
    raw = raw.strip()
    if key == "train.image_size":
        parts = raw.lower().replace("x", " ").split()
        if len(parts) != 2:
            raise ValueError(f"image_size must look like 128x192, got {raw!r}")
        return (int(parts[0]), int(parts[1]))
    if key.startswith("use_"):
        if raw.lower() not in _BOOL_WORDS:
            raise ValueError(f"{key} expects a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    if key in ("pyramid_levels", "base_width", "train.epochs", "train.batch_size",
               "train.seed", "train.eval_every"):
        return int(raw)
    if key == "train.optimizer":
        return raw
    return float(raw)


def parse_config_text(text: str) -> ModelConfig:
    """Parse a flat ``key=value`` config (``#`` starts a comment line).

    Keys mirror ModelConfig fields, with nested fields dotted
    (``train.epochs=30``, ``loss_weights.l1=10``). Unknown keys are an error.
    """
    top: dict = {}
    loss: dict = {}
    train: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        value = _parse_scalar(key, raw)
        if key in ("pyramid_levels", "base_width", "use_g1", "use_g2",
                   "use_refinement", "use_dual_attention"):
            top[key] = value
        elif key.startswith("loss_weights."):
            name = key.split(".", 1)[1]
            if name not in ("l1", "perceptual", "ssim"):
                raise ValueError(f"line {lineno}: unknown loss weight {name!r}")
            loss[name] = value
        elif key.startswith("train."):
            name = key.split(".", 1)[1]
            if name not in ("epochs", "batch_size", "learning_rate", "optimizer",
                            "image_size", "seed", "eval_every"):
                raise ValueError(f"line {lineno}: unknown train field {name!r}")
            train[name] = value
        else:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
    if loss:
        top["loss_weights"] = LossWeights(**loss)
    if train:
        top["train"] = TrainConfig(**train)
    return ModelConfig(**top)


def format_config_text(config: ModelConfig) -> str:
    """Inverse of :func:`parse_config_text` (round-trips exactly)."""
    h, w = config.train.image_size
    lines = [
        f"pyramid_levels={config.pyramid_levels}",
        f"base_width={config.base_width}",
        f"use_g1={'true' if config.use_g1 else 'false'}",
        f"use_g2={'true' if config.use_g2 else 'false'}",
        f"use_refinement={'true' if config.use_refinement else 'false'}",
        f"use_dual_attention={'true' if config.use_dual_attention else 'false'}",
        f"loss_weights.l1={config.loss_weights.l1}",
        f"loss_weights.perceptual={config.loss_weights.perceptual}",
        f"loss_weights.ssim={config.loss_weights.ssim}",
        f"train.epochs={config.train.epochs}",
        f"train.batch_size={config.train.batch_size}",
        f"train.learning_rate={config.train.learning_rate}",
        f"train.optimizer={config.train.optimizer}",
        f"train.image_size={h}x{w}",
        f"train.seed={config.train.seed}",
        f"train.eval_every={config.train.eval_every}",
    ]
    return "\n".join(lines) + "\n"
