"""PNG reading and writing.

Integer codes map to [0,1] by dividing by (2^bits - 1); saving quantizes with
round-half-up back to 8-bit codes. A load/save round trip therefore moves any
value by at most 1/510. OpenCV is used as the codec because it round-trips
16-bit PNGs losslessly (RGB and grayscale); channel order is converted at
this boundary so everything above it is RGB.
"""

from __future__ import annotations

import os

import cv2
import numpy as np
import torch

from ampn.types import FocusMask, ImageTensor


class UnsupportedImageError(ValueError):
    """Raised for files that decode but are not 8/16-bit gray or RGB PNGs."""


def _array_to_chw(raw: np.ndarray) -> np.ndarray:
    """Decoded cv2 array (HW or HWC BGR, uint8/uint16) -> CHW float32 in [0,1]."""
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnsupportedImageError(f"unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        chw = raw[None].astype(np.float32)
    elif raw.ndim == 3 and raw.shape[2] == 3:
        chw = raw[:, :, ::-1].transpose(2, 0, 1).astype(np.float32)  # BGR -> RGB
    elif raw.ndim == 3 and raw.shape[2] == 4:
        raise UnsupportedImageError("alpha channels are not supported")
    else:
        raise UnsupportedImageError(f"unsupported channel layout {raw.shape}")
    return chw / np.float32(scale)


def decode_png(payload: bytes) -> ImageTensor:
    """Decode PNG bytes. Raises UnsupportedImageError / ValueError on junk."""
    if not payload:
        raise ValueError("empty image payload")
    buf = np.frombuffer(payload, dtype=np.uint8)
    raw = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError("not a decodable image")
    if raw.size == 0:
        raise ValueError("zero-sized image")
    return ImageTensor.from_array(_array_to_chw(raw))


def load_image(path: str | os.PathLike) -> ImageTensor:
    """Load an 8- or 16-bit PNG (RGB or grayscale)."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UnsupportedImageError(f"could not decode {path!r}")
    if raw.size == 0:
        raise ValueError(f"zero-sized image {path!r}")
    return ImageTensor.from_array(_array_to_chw(raw))


def load_mask(path: str | os.PathLike) -> FocusMask:
    """Load a grayscale PNG as a focus mask (RGB inputs are rejected)."""
    image = load_image(path)
    if image.channels != 1:
        raise UnsupportedImageError("masks must be single-channel PNGs")
    return FocusMask(image.data)


def quantize_to_u8(chw: np.ndarray) -> np.ndarray:
    """[0,1] float -> uint8 codes, round half up (0.5/255 input becomes 1)."""
    return np.floor(chw * 255.0 + 0.5).astype(np.uint8)


def encode_png(image: ImageTensor | FocusMask) -> bytes:
    """Encode to an 8-bit PNG (grayscale for 1 channel, RGB otherwise)."""
    chw = image.data.detach().cpu().numpy()
    codes = quantize_to_u8(chw)
    if codes.shape[0] == 1:
        packed = codes[0]
    else:
        packed = codes.transpose(1, 2, 0)[:, :, ::-1]  # RGB -> BGR
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(packed))
    if not ok:
        raise RuntimeError("png encoding failed")
    return buf.tobytes()


def save_image(image: ImageTensor | FocusMask, path: str | os.PathLike) -> None:
    """Write an 8-bit PNG; parent directory must exist."""
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory {parent!r} does not exist")
    with open(path, "wb") as fh:
        fh.write(encode_png(image))


def to_tensor(value: ImageTensor | FocusMask | torch.Tensor) -> torch.Tensor:
    """Unwrap to a raw [C,H,W] tensor (shared storage, do not write)."""
    if isinstance(value, (ImageTensor, FocusMask)):
        return value.data
    return value
