"""Binary weight container.

Layout, all little-endian:

    bytes 0..3    magic b"AMPN"
    bytes 4..7    u32 format version (currently 1)
    bytes 8..15   u64 byte length of the JSON header
    header        UTF-8 JSON
    payload       raw '<f4' tensor data, in header order, back to back

The header carries ``kind`` ("checkpoint" or "extractor"), a ``meta`` dict,
and a ``tensors`` list of {name, shape} in payload order. Checkpoints store
model weights under ``<group>/<param path>`` names plus, when written by the
trainer, optimizer moments under ``trainer/...`` so a resumed run continues
bit-exactly. Round trips are bit-exact because values are stored raw.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from ampn.types import ModelConfig

MAGIC = b"AMPN"
VERSION = 1


class ContainerFormatError(ValueError):
    """File is not a readable container (bad magic, version, or structure)."""


class CheckpointMismatchError(ValueError):
    """Checkpoint does not fit the model it was loaded into."""


# ---------------------------------------------------------------------------
# generic container
# ---------------------------------------------------------------------------


def write_container(path: str | os.PathLike, kind: str, meta: dict,
                    tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, array in tensors.items():
        # asarray, not ascontiguousarray: the latter promotes 0-d to (1,)
        data = np.asarray(array, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape)})
        blobs.append(data.tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | os.PathLike) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ContainerFormatError(f"bad magic {magic!r}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise ContainerFormatError("truncated version field")
        (version,) = struct.unpack("<I", raw)
        if version != VERSION:
            raise ContainerFormatError(f"unsupported container version {version}")
        raw = fh.read(8)
        if len(raw) < 8:
            raise ContainerFormatError("truncated header length")
        (header_len,) = struct.unpack("<Q", raw)
        header_bytes = fh.read(header_len)
        if len(header_bytes) < header_len:
            raise ContainerFormatError("truncated header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerFormatError(f"unreadable header: {exc}") from exc
        for key in ("kind", "meta", "tensors"):
            if key not in header:
                raise ContainerFormatError(f"header missing {key!r}")
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            blob = fh.read(count * 4)
            if len(blob) < count * 4:
                raise ContainerFormatError(f"truncated payload at {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(blob, dtype="<f4").reshape(shape)
    return header["kind"], header["meta"], tensors


def file_digest(path: str | os.PathLike, length: int = 16) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:length]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """A model snapshot: config, step counter, weights, optional trainer state."""

    config: ModelConfig
    training_step: int
    weights: dict[str, np.ndarray]
    trainer_state: dict[str, np.ndarray] = field(default_factory=dict)

    def save(self, path: str | os.PathLike) -> None:
        tensors = dict(self.weights)
        tensors.update({f"trainer/{k}": v for k, v in self.trainer_state.items()})
        meta = {"config": self.config.to_dict(),
                "training_step": self.training_step}
        write_container(path, "checkpoint", meta, tensors)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        kind, meta, tensors = read_container(path)
        if kind != "checkpoint":
            raise ContainerFormatError(f"expected a checkpoint, found {kind!r}")
        weights = {k: v for k, v in tensors.items() if not k.startswith("trainer/")}
        trainer = {k[len("trainer/"):]: v for k, v in tensors.items()
                   if k.startswith("trainer/")}
        return cls(config=ModelConfig.from_dict(meta["config"]),
                   training_step=int(meta["training_step"]),
                   weights=weights, trainer_state=trainer)


def checkpoint_from_pipeline(pipeline, training_step: int = 0,
                             trainer_state: dict[str, np.ndarray] | None = None
                             ) -> Checkpoint:
    weights = {name: tensor.detach().cpu().numpy()
               for name, tensor in pipeline.grouped_state_dict().items()}
    return Checkpoint(config=pipeline.config, training_step=training_step,
                      weights=weights, trainer_state=dict(trainer_state or {}))


def apply_checkpoint(pipeline, checkpoint: Checkpoint) -> None:
    """Load weights into a pipeline; configs must match exactly."""
    if checkpoint.config != pipeline.config:
        raise CheckpointMismatchError(
            "checkpoint was trained with a different configuration"
        )
    state = {name: torch.from_numpy(np.array(array, dtype=np.float32))
             for name, array in checkpoint.weights.items()}
    pipeline.load_grouped_state_dict(state)
