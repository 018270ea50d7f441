"""Training and evaluation loops.

The loss is applied to the final composite only; the mask predictor receives
its gradient entirely through how the mask steers the generator and the
blend (no mask supervision anywhere). Adam runs at a fixed learning rate, no
schedule, no weight decay, no augmentation, no gradient clipping; a
non-finite loss aborts with a diagnostic instead.

Reproducibility contract: weights are seeded at build, the batch order is a
pure function of (seed, epoch), and checkpoints written here include the
Adam moments, so resuming mid-run continues bit-exactly on one platform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from ampn.container import Checkpoint, apply_checkpoint, checkpoint_from_pipeline
from ampn.losses import (PerceptualExtractor, default_extractor,
                         perceptual_distance, psnr, ssim_value, total_loss)
from ampn.pipeline import BokehPipeline, build_pipeline
from ampn.pyramid import bilinear_resize
from ampn.synthdata import batch_tensors
from ampn.types import ModelConfig

CHECKPOINT_NAME = "checkpoint.ampn"
HISTORY_HEADER = "step,l1,perceptual,ssim_loss,total"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class StepRecord:
    step: int
    l1: float
    perceptual: float
    ssim_loss: float
    total: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[StepRecord]
    eval_points: list[tuple[int, float]]  # (step, mean eval PSNR on a fixed subset)


def history_to_csv(history: list[StepRecord]) -> str:
    lines = [HISTORY_HEADER]
    for row in history:
        lines.append(f"{row.step},{row.l1:.8f},{row.perceptual:.8f},"
                     f"{row.ssim_loss:.8f},{row.total:.8f}")
    return "\n".join(lines) + "\n"


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    # distinct stream from the sample seeds; pure in (seed, epoch)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919, epoch]))
    return rng.permutation(n)


def _capture_adam(optimizer: torch.optim.Adam,
                  pipeline: BokehPipeline) -> dict[str, np.ndarray]:
    state: dict[str, np.ndarray] = {}
    for name, param in pipeline.named_parameters():
        entry = optimizer.state.get(param)
        if not entry:
            continue
        state[f"adam.{name}.exp_avg"] = entry["exp_avg"].detach().cpu().numpy()
        state[f"adam.{name}.exp_avg_sq"] = entry["exp_avg_sq"].detach().cpu().numpy()
        state[f"adam.{name}.step"] = np.array([float(entry["step"])], np.float32)
    return state


def _restore_adam(optimizer: torch.optim.Adam, pipeline: BokehPipeline,
                  state: dict[str, np.ndarray]) -> None:
    if not state:
        return
    for name, param in pipeline.named_parameters():
        if f"adam.{name}.exp_avg" not in state:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(state[f"adam.{name}.step"][0])),
            "exp_avg": torch.from_numpy(np.array(
                state[f"adam.{name}.exp_avg"], dtype=np.float32)).clone(),
            "exp_avg_sq": torch.from_numpy(np.array(
                state[f"adam.{name}.exp_avg_sq"], dtype=np.float32)).clone(),
        }


def train_model(config: ModelConfig, dataset, *, out_dir: str | None = None,
                max_steps: int | None = None,
                resume_from: Checkpoint | None = None,
                extractor: PerceptualExtractor | None = None,
                stop_at_total: float | None = None,
                progress: bool = False) -> TrainResult:
    """Train per config; returns the final checkpoint and per-step losses.

    ``max_steps`` caps the global step count (useful below one epoch);
    ``stop_at_total`` ends the run early once the step loss reaches the
    threshold. With ``out_dir`` set, a checkpoint is (re)written at every
    eval point and at the end.
    """
    if dataset.train_count < 1:
        raise ValueError("dataset has no training samples")
    train = config.train
    pipeline = build_pipeline(config, seed=train.seed)
    optimizer = torch.optim.Adam(pipeline.parameters(), lr=train.learning_rate)
    start_step = 0
    if resume_from is not None:
        apply_checkpoint(pipeline, resume_from)
        _restore_adam(optimizer, pipeline, resume_from.trainer_state)
        start_step = resume_from.training_step
    ext = extractor if extractor is not None else default_extractor()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    batch = min(train.batch_size, dataset.train_count)
    steps_per_epoch = max(1, dataset.train_count // batch)
    total_steps = train.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)

    eval_subset = list(range(min(getattr(dataset, "eval_count", 0), 4)))
    pipeline.train()
    history: list[StepRecord] = []
    eval_points: list[tuple[int, float]] = []
    perm_epoch = -1
    perm = None

    for step in range(start_step, total_steps):
        epoch = step // steps_per_epoch
        if epoch != perm_epoch:
            perm = _epoch_permutation(train.seed, epoch, dataset.train_count)
            perm_epoch = epoch
        offset = (step % steps_per_epoch) * batch
        indices = perm[offset:offset + batch]
        inputs, targets = batch_tensors([dataset.train_sample(int(i))
                                         for i in indices])

        out = pipeline(inputs)
        terms = total_loss(out.final, targets, config.loss_weights, ext)
        if not torch.isfinite(terms.total):
            l1, perc, ssim_l, _ = terms.detach_floats()
            raise TrainingDiverged(
                f"non-finite loss at step {step + 1}: "
                f"l1={l1}, perceptual={perc}, ssim={ssim_l}"
            )
        optimizer.zero_grad()
        terms.total.backward()
        optimizer.step()

        l1, perc, ssim_l, total = terms.detach_floats()
        record = StepRecord(step=step + 1, l1=l1, perceptual=perc,
                            ssim_loss=ssim_l, total=total)
        history.append(record)
        if progress and (step + 1) % 10 == 0:
            print(f"step {step + 1}/{total_steps} total={total:.4f}", flush=True)

        if (step + 1) % train.eval_every == 0:
            if eval_subset:
                with torch.no_grad():
                    values = []
                    for j in eval_subset:
                        sample = dataset.eval_sample(j)
                        result = pipeline(sample.input.data.unsqueeze(0))
                        values.append(psnr(result.final[0], sample.target.data))
                eval_points.append((step + 1, float(np.mean(values))))
            if out_dir is not None:
                snapshot = checkpoint_from_pipeline(
                    pipeline, step + 1, _capture_adam(optimizer, pipeline))
                snapshot.save(os.path.join(out_dir, CHECKPOINT_NAME))

        if stop_at_total is not None and total <= stop_at_total:
            total_steps = step + 1
            break

    final_step = history[-1].step if history else start_step
    checkpoint = checkpoint_from_pipeline(pipeline, final_step,
                                          _capture_adam(optimizer, pipeline))
    if out_dir is not None:
        checkpoint.save(os.path.join(out_dir, CHECKPOINT_NAME))
        with open(os.path.join(out_dir, "history.csv"), "w") as fh:
            fh.write(history_to_csv(history))
    return TrainResult(checkpoint=checkpoint, history=history,
                       eval_points=eval_points)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-image and mean PSNR/SSIM/perceptual numbers.

    ``quantized`` says whether images were snapped to the 8-bit grid before
    measuring (metrics on float outputs differ from metrics on saved PNGs);
    ``extractor_label`` records which perceptual weights produced the
    distance column.
    """

    rows: list[tuple[int, float, float, float]]
    mean_psnr: float
    mean_ssim: float
    mean_perceptual: float
    extractor_label: str
    quantized: bool
    label: str = "ours"

    def to_tsv(self) -> str:
        lines = ["image\tpsnr\tssim\tlpips"]
        for index, p, s, d in self.rows:
            lines.append(f"{index}\t{p:.4f}\t{s:.4f}\t{d:.4f}")
        lines.append(f"mean\t{self.mean_psnr:.4f}\t{self.mean_ssim:.4f}"
                     f"\t{self.mean_perceptual:.4f}")
        lines.append(f"# perceptual extractor: {self.extractor_label}; "
                     f"values on {'8-bit quantized' if self.quantized else 'float'} images")
        return "\n".join(lines) + "\n"

    def table_row(self) -> str:
        """One comparison-table row: label & PSNR & SSIM & perceptual."""
        return (f"{self.label.capitalize()} & {self.mean_psnr:.2f} & "
                f"{self.mean_ssim:.4f} & {self.mean_perceptual:.4f}")


def _quantize(x: torch.Tensor) -> torch.Tensor:
    return torch.floor(x * 255.0 + 0.5) / 255.0


def evaluate(model: Checkpoint | BokehPipeline, dataset, *,
             extractor: PerceptualExtractor | None = None,
             quantized: bool = False,
             max_samples: int | None = None) -> MetricReport:
    """Frozen forward over the eval split; gathers the three metrics."""
    if isinstance(model, Checkpoint):
        pipeline = build_pipeline(model.config, seed=model.config.train.seed)
        apply_checkpoint(pipeline, model)
    else:
        pipeline = model
    ext = extractor if extractor is not None else default_extractor()
    pipeline.eval()
    count = dataset.eval_count if max_samples is None else min(
        dataset.eval_count, max_samples)
    if count < 1:
        raise ValueError("dataset has no eval samples")
    rows = []
    with torch.no_grad():
        for j in range(count):
            sample = dataset.eval_sample(j)
            out = pipeline(sample.input.data.unsqueeze(0)).final[0]
            target = sample.target.data
            if quantized:
                out, target = _quantize(out), _quantize(target)
            rows.append((j, psnr(out, target), float(ssim_value(out, target)),
                         float(perceptual_distance(out, target, ext))))
    return MetricReport(
        rows=rows,
        mean_psnr=float(np.mean([r[1] for r in rows])),
        mean_ssim=float(np.mean([r[2] for r in rows])),
        mean_perceptual=float(np.mean([r[3] for r in rows])),
        extractor_label=ext.label,
        quantized=quantized,
    )


def mask_iou(pipeline: BokehPipeline, dataset, *, threshold: float = 0.5,
             max_samples: int | None = None) -> float:
    """Mean IoU of the thresholded predicted mask against gt regions.

    The predicted mask is upsampled to image resolution (as the blend sees
    it) before thresholding. Eval samples without ground truth are skipped.
    """
    pipeline.eval()
    count = dataset.eval_count if max_samples is None else min(
        dataset.eval_count, max_samples)
    scores = []
    with torch.no_grad():
        for j in range(count):
            sample = dataset.eval_sample(j)
            if sample.gt_region is None:
                continue
            out = pipeline(sample.input.data.unsqueeze(0))
            mask = bilinear_resize(out.low.mask,
                                   sample.input.data.shape[-2:])[0, 0]
            pred = (mask >= threshold).numpy()
            gt = sample.gt_region[0] >= 0.5
            union = np.logical_or(pred, gt).sum()
            inter = np.logical_and(pred, gt).sum()
            scores.append(1.0 if union == 0 else float(inter) / float(union))
    if not scores:
        raise ValueError("no eval samples carry ground-truth regions")
    return float(np.mean(scores))
