"""End-to-end acceptance checks.

Every test here covers one release criterion and funnels its outcome through
:func:`verdict`, which prints a single PASS/FAIL line and keeps it for the
terminal summary hook in conftest.py. Timed criteria report wall-clock
against their budget. The fast checks come first; the two trained-model
criteria at the bottom dominate the runtime of this module.

One criterion is expected to fail: the ablation parameter-count ordering
asserts a chain the architecture genuinely does not satisfy (the refinement
branch outweighs the attention pair at every width, so removing refinement
can never leave more parameters than removing attention). The check stays
as written rather than being bent to pass; see the repository notes.
"""

import math
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from ampn.blocks import (CoordinateAttention, DualAttentionMerge,
                         FineTuneBlock, InvertedResidual)
from ampn.cli import main
from ampn.container import apply_checkpoint, checkpoint_from_pipeline
from ampn.io import encode_png, save_image
from ampn.losses import PerceptualExtractor, psnr, ssim_value, total_loss
from ampn.lpr import blend_final
from ampn.pipeline import build_pipeline
from ampn.pyramid import decompose, reconstruct
from ampn.render import RenderRequest, render
from ampn.service import create_app
from ampn.synthdata import make_dataset
from ampn.trainer import mask_iou, train_model
from ampn.types import (FocusMask, ImageTensor, LossWeights, ModelConfig,
                        TrainConfig)

RESULTS: list[tuple[str, bool, str]] = []


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    RESULTS.append((name, ok, line))
    print(f"ACCEPTANCE {line}")
    assert ok, line


# ---------------------------------------------------------------------------
# pyramid round trip
# ---------------------------------------------------------------------------


def test_pyramid_round_trip():
    gen = torch.Generator().manual_seed(501)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        levels = int(torch.randint(1, 4, (1,), generator=gen))
        unit = 2 ** levels
        h = unit * int(torch.randint(1, 7, (1,), generator=gen))
        w = unit * int(torch.randint(1, 7, (1,), generator=gen))
        x = torch.rand(3, h, w, generator=gen)
        back = reconstruct(decompose(x, levels), clamp=False)
        worst = max(worst, float((back - x).abs().max()))
    elapsed = time.perf_counter() - start
    verdict(
        "pyramid-round-trip",
        worst <= 1e-5 and elapsed < 60.0,
        f"max abs error {worst:.2e} over 100 images, L in 1..3 "
        f"({elapsed:.1f}s of 60s budget)",
    )


# ---------------------------------------------------------------------------
# metric closed forms
# ---------------------------------------------------------------------------


def test_metric_closed_forms():
    base = torch.full((3, 16, 16), 0.2)
    got_20 = psnr(base, base + 0.1)
    got_16 = psnr(torch.zeros(3, 16, 16), torch.full((3, 16, 16), 16.0 / 255.0))
    want_16 = 20.0 * math.log10(255.0 / 16.0)
    c1 = 0.01 ** 2
    got_ssim = float(ssim_value(torch.zeros(1, 1, 16, 16),
                                torch.ones(1, 1, 16, 16)))
    want_ssim = c1 / (1.0 + c1)
    ok = (abs(got_20 - 20.0) <= 1e-3
          and abs(got_16 - want_16) <= 1e-3
          and abs(got_ssim - want_ssim) <= 1e-3)
    verdict(
        "metric-correctness",
        ok,
        f"psnr(d=0.1)={got_20:.5f} (want 20), "
        f"psnr(d=16/255)={got_16:.5f} (want 20*log10(255/16)={want_16:.5f}), "
        f"ssim(0,1)={got_ssim:.3e} (want C1/(1+C1)={want_ssim:.3e})",
    )


# ---------------------------------------------------------------------------
# parameter budget
# ---------------------------------------------------------------------------


def test_parameter_budget():
    counts = build_pipeline(ModelConfig(), seed=0).parameter_counts()
    total = counts["total"]
    verdict(
        "parameter-budget",
        3_800_000 <= total <= 7_000_000,
        f"default config totals {total:,} parameters "
        f"(budget 3.8M..7.0M; groups: "
        + ", ".join(f"{k}={v:,}" for k, v in counts.items() if k != "total")
        + ")",
    )


# ---------------------------------------------------------------------------
# blend identities
# ---------------------------------------------------------------------------


def test_blend_identities():
    pipeline = build_pipeline(ModelConfig.desk_scale(), seed=12)
    pipeline.eval()
    gen = torch.Generator().manual_seed(77)
    image = torch.rand(1, 3, 64, 96, generator=gen)
    with torch.no_grad():
        ones = pipeline(image, external_mask=torch.ones(1, 1, 64, 96))
        zeros = pipeline(image, external_mask=torch.zeros(1, 1, 64, 96))
    mask_one_exact = torch.equal(ones.final, image)
    mask_zero_exact = torch.equal(zeros.final, zeros.refined.clamp(0.0, 1.0))

    convex_ok = True
    for _ in range(50):
        img = torch.rand(1, 3, 16, 24, generator=gen)
        ref = torch.rand(1, 3, 16, 24, generator=gen)
        m = torch.rand(1, 1, 16, 24, generator=gen)
        out = blend_final(img, ref, m, clamp=False)
        lo = torch.minimum(img, ref)
        hi = torch.maximum(img, ref)
        if not (bool((out >= lo - 1e-6).all()) and bool((out <= hi + 1e-6).all())):
            convex_ok = False
            break
    verdict(
        "blend-identities",
        mask_one_exact and mask_zero_exact and convex_ok,
        f"mask==1 gives the input back bitwise: {mask_one_exact}; "
        f"mask==0 gives clamp(refined) bitwise: {mask_zero_exact}; "
        f"convexity bound on 50 random triples: {convex_ok}",
    )


# ---------------------------------------------------------------------------
# gradient suite (central finite differences, double precision)
# ---------------------------------------------------------------------------


def _directional_rel_error(f, leaves: list[torch.Tensor], gen: torch.Generator,
                           eps: float = 1e-6) -> float:
    """Compare the autograd directional derivative of the scalar ``f()``
    against a central finite difference along one random unit direction."""
    grads = torch.autograd.grad(f(), leaves)
    direction = [torch.randn(t.shape, generator=gen, dtype=torch.float64)
                 for t in leaves]
    norm = math.sqrt(sum(float((d * d).sum()) for d in direction))
    direction = [d / norm for d in direction]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
    with torch.no_grad():
        for t, d in zip(leaves, direction):
            t += eps * d
        f_plus = float(f())
        for t, d in zip(leaves, direction):
            t -= 2.0 * eps * d
        f_minus = float(f())
        for t, d in zip(leaves, direction):
            t += eps * d
    fd = (f_plus - f_minus) / (2.0 * eps)
    return abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-12)


def _module_case(module: torch.nn.Module, inputs: list[torch.Tensor],
                 gen: torch.Generator):
    module.double()
    for x in inputs:
        x.requires_grad_(True)
    out_shape = module(*inputs).shape
    probe = torch.randn(out_shape, generator=gen, dtype=torch.float64)

    def f():
        return (module(*inputs) * probe).sum()

    return f, list(module.parameters()) + inputs


def test_gradient_suite():
    start = time.perf_counter()
    worst: dict[str, float] = {}
    for seed in range(10):
        gen = torch.Generator().manual_seed(9000 + seed)
        torch.manual_seed(9000 + seed)

        def rnd(*shape):
            return torch.randn(*shape, generator=gen, dtype=torch.float64)

        cases = {
            "inverted-residual": _module_case(
                InvertedResidual(4, 4), [rnd(1, 4, 6, 6)], gen),
            "coordinate-attention": _module_case(
                CoordinateAttention(4), [rnd(1, 4, 5, 7)], gen),
            "dual-attention-merge": _module_case(
                DualAttentionMerge(3), [rnd(1, 3, 6, 6), rnd(1, 3, 6, 6)], gen),
            "finetune-block": _module_case(
                FineTuneBlock(3), [rnd(1, 3, 6, 6)], gen),
        }
        for name, (f, leaves) in cases.items():
            rel = _directional_rel_error(f, leaves, gen)
            worst[name] = max(worst.get(name, 0.0), rel)

        # the training objective, differentiated through every term
        extractor = PerceptualExtractor().double()
        output = (torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64)
                  * 0.9 + 0.05).requires_grad_(True)
        target = torch.rand(1, 3, 16, 16, generator=gen,
                            dtype=torch.float64) * 0.9 + 0.05

        def loss_fn():
            return total_loss(output, target, LossWeights(), extractor).total

        rel = _directional_rel_error(loss_fn, [output], gen)
        worst["total-loss"] = max(worst.get("total-loss", 0.0), rel)

    elapsed = time.perf_counter() - start
    peak = max(worst.values())
    verdict(
        "gradient-suite",
        peak <= 1e-4 and elapsed < 300.0,
        "worst rel err over 10 seeds: "
        + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
        + f" (tolerance 1e-4; {elapsed:.1f}s of 300s budget)",
    )


# ---------------------------------------------------------------------------
# graph connectivity under the training objective
# ---------------------------------------------------------------------------


def test_graph_connectivity():
    config = ModelConfig.desk_scale(
        train=TrainConfig(epochs=1, batch_size=1, image_size=(64, 96), seed=3))
    pipeline = build_pipeline(config, seed=3)
    dataset = make_dataset(2, seed=9, train_frac=0.5, size=(64, 96))
    sample = dataset.train_sample(0)
    optimizer = torch.optim.Adam(pipeline.parameters(),
                                 lr=config.train.learning_rate)

    # one full training step first: the fine-tune output convs start at
    # zero, so the refinement trunk only joins the gradient graph once the
    # optimizer has moved them off zero. Connectivity is judged at the
    # post-step weights.
    out = pipeline(sample.input.data.unsqueeze(0))
    terms = total_loss(out.final, sample.target.data.unsqueeze(0),
                       config.loss_weights)
    optimizer.zero_grad()
    terms.total.backward()
    optimizer.step()

    out = pipeline(sample.input.data.unsqueeze(0))
    terms = total_loss(out.final, sample.target.data.unsqueeze(0),
                       config.loss_weights)
    optimizer.zero_grad()
    terms.total.backward()

    def grad_norm(module: torch.nn.Module) -> float:
        total = 0.0
        for p in module.parameters():
            if p.grad is not None:
                total += float((p.grad ** 2).sum())
        return math.sqrt(total)

    group_norms = {
        name: math.sqrt(sum(grad_norm(m) ** 2 for _, m in members))
        for name, members in pipeline.module_groups().items()
    }
    attention = [m for m in pipeline.modules()
                 if isinstance(m, CoordinateAttention)]
    att_norms = [grad_norm(m) for m in attention]

    ok = (group_norms["g1"] > 0 and group_norms["g2"] > 0
          and group_norms["lpr_refiner"] > 0
          and len(attention) == 4 and all(n > 0 for n in att_norms))
    verdict(
        "graph-connectivity",
        ok,
        "after one training step, grad norms "
        + ", ".join(f"{k}={v:.2e}" for k, v in group_norms.items())
        + "; attention modules "
        + ", ".join(f"{n:.2e}" for n in att_norms),
    )


# ---------------------------------------------------------------------------
# ablation matrix
# ---------------------------------------------------------------------------


def test_ablation_matrix():
    variants = {
        "full": {},
        "w/o-refinement": {"use_refinement": False},
        "w/o-attention": {"use_dual_attention": False},
        "no-g2": {"use_g2": False},
    }
    counts = {}
    trained = []
    for name, flags in variants.items():
        counts[name] = build_pipeline(
            ModelConfig(**flags), seed=0).parameter_counts()["total"]
        config = ModelConfig.desk_scale(
            **flags,
            train=TrainConfig(epochs=50, batch_size=2, image_size=(64, 96),
                              seed=5, eval_every=1000))
        dataset = make_dataset(4, seed=13, train_frac=0.5, size=(64, 96))
        result = train_model(config, dataset, max_steps=50)
        last = result.history[-1]
        trained.append(last.step == 50 and math.isfinite(last.total))

    chain = [
        ("full > w/o-refinement",
         counts["full"] > counts["w/o-refinement"]),
        ("w/o-refinement >= w/o-attention",
         counts["w/o-refinement"] >= counts["w/o-attention"]),
        ("w/o-attention > no-g2",
         counts["w/o-attention"] > counts["no-g2"]),
    ]
    parts = [f"{name}={counts[name]:,}" for name in variants]
    parts += [f"{label}: {'OK' if ok else 'VIOLATED'}" for label, ok in chain]
    verdict(
        "ablation-matrix",
        all(trained) and all(ok for _, ok in chain),
        f"trained {sum(trained)}/4 variants for 50 steps; "
        + "; ".join(parts),
    )


# ---------------------------------------------------------------------------
# CLI / service parity
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def parity_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("parity")
    pipeline = build_pipeline(ModelConfig.desk_scale(), seed=8)
    ckpt_path = root / "model.ampn"
    checkpoint_from_pipeline(pipeline).save(ckpt_path)
    gen = torch.Generator().manual_seed(99)
    image = ImageTensor(torch.rand(3, 64, 96, generator=gen))
    save_image(image, root / "input.png")
    mask = torch.zeros(1, 64, 96)
    mask[:, :, 48:] = 1.0
    save_image(FocusMask(mask), root / "mask.png")
    return root


def test_cli_service_parity(parity_env):
    root = parity_env
    app = create_app(checkpoint_path=root / "model.ampn")
    client = TestClient(app)
    image_bytes = (root / "input.png").read_bytes()
    mask_bytes = (root / "mask.png").read_bytes()

    code = main(["render", "--in", str(root / "input.png"),
                 "--out", str(root / "plain.png"),
                 "--ckpt", str(root / "model.ampn")])
    assert code == 0
    plain = client.post(
        "/api/render",
        files={"image": ("input.png", image_bytes, "image/png")})
    assert plain.status_code == 200
    plain_equal = (root / "plain.png").read_bytes() == plain.content

    code = main(["render", "--in", str(root / "input.png"),
                 "--out", str(root / "masked.png"),
                 "--ckpt", str(root / "model.ampn"),
                 "--mask", str(root / "mask.png"),
                 "--background-level", "0.3"])
    assert code == 0
    masked = client.post(
        "/api/render",
        files={"image": ("input.png", image_bytes, "image/png"),
               "mask": ("mask.png", mask_bytes, "image/png")},
        data={"background_level": "0.3"})
    assert masked.status_code == 200
    masked_equal = (root / "masked.png").read_bytes() == masked.content

    verdict(
        "cli-service-parity",
        plain_equal and masked_equal,
        f"predictor path bit-identical: {plain_equal}; "
        f"external mask + background level 0.3 bit-identical: {masked_equal}",
    )


# ---------------------------------------------------------------------------
# overfit smoke test
# ---------------------------------------------------------------------------


def test_overfit_smoke():
    start = time.perf_counter()
    dataset = make_dataset(10, seed=31, train_frac=0.8, size=(128, 192))
    assert dataset.train_count == 8
    config = ModelConfig(train=TrainConfig(
        epochs=2000, batch_size=8, image_size=(128, 192), seed=17,
        eval_every=10 ** 6))
    # one step to read off the starting loss, then resume against the 10%
    # threshold; resuming is bit-exact so this equals a single straight run
    first = train_model(config, dataset, max_steps=1)
    initial = first.history[0].total
    rest = train_model(config, dataset, max_steps=2000,
                       resume_from=first.checkpoint,
                       stop_at_total=0.1 * initial)
    history = first.history + rest.history
    best = min(row.total for row in history)
    elapsed = time.perf_counter() - start
    verdict(
        "overfit-smoke",
        best <= 0.1 * initial and history[-1].step <= 2000 and elapsed < 1800.0,
        f"total fell {initial:.4f} -> {best:.4f} "
        f"(threshold {0.1 * initial:.4f}) in {history[-1].step} steps "
        f"({elapsed:.0f}s of 1800s budget)",
    )


# ---------------------------------------------------------------------------
# weak mask discovery, and the f-stop mechanism on the discovered masks
# ---------------------------------------------------------------------------

# calibrated against the criterion's IoU >= 0.5 gate: with strong blur the
# held-out IoU crosses 0.5 near epoch 20 and sits at ~0.58 by epoch 160,
# so this pins roughly an 8x margin on the crossing at ~8 min of CPU
WEAK_MASK_EPOCHS = 160


@pytest.fixture(scope="module")
def weak_mask_model():
    # wide-vs-shallow DOF pairs with pronounced blur: the separation the
    # mask must discover is proportional to how different the blurred
    # background looks, so the training set uses the strong end of the
    # generator's range
    dataset = make_dataset(288, seed=41, train_frac=256 / 288, size=(64, 96),
                           sigma_range=(8.0, 12.0))
    assert dataset.train_count == 256 and dataset.eval_count == 32
    config = ModelConfig.desk_scale(train=TrainConfig(
        epochs=WEAK_MASK_EPOCHS, batch_size=8, image_size=(64, 96), seed=23,
        eval_every=10 ** 6))
    start = time.perf_counter()
    result = train_model(config, dataset)
    elapsed = time.perf_counter() - start
    pipeline = build_pipeline(config, seed=config.train.seed)
    apply_checkpoint(pipeline, result.checkpoint)
    pipeline.eval()
    return pipeline, dataset, elapsed


def test_weak_mask_discovery(weak_mask_model):
    pipeline, dataset, elapsed = weak_mask_model
    iou = mask_iou(pipeline, dataset)
    verdict(
        "weak-mask-discovery",
        iou >= 0.5 and elapsed < 3600.0,
        f"mean IoU {iou:.4f} on {dataset.eval_count} held-out samples "
        f"(threshold 0.5; trained {WEAK_MASK_EPOCHS} epochs in {elapsed:.0f}s "
        f"of 3600s budget)",
    )


def test_fstop_mechanism(weak_mask_model):
    pipeline, dataset, _ = weak_mask_model
    image = dataset.eval_sample(0).input
    levels = [0.0, 0.3, 0.6]

    # predictor path: the sweep must move the output
    g1_outs = [render(pipeline, RenderRequest(image=image,
                                              background_level=lv)).image.data
               for lv in levels]
    g1_distinct = all(not torch.equal(g1_outs[i], g1_outs[j])
                      for i in range(3) for j in range(i + 1, 3))

    # external path: binarize the discovered mask so "mask == 1" is exact
    base = render(pipeline, RenderRequest(image=image)).mask
    binary = FocusMask((base.data >= 0.5).to(torch.float32))
    results = [render(pipeline, RenderRequest(image=image, mask=binary,
                                              background_level=lv))
               for lv in levels]
    ext_outs = [r.image.data for r in results]
    ext_distinct = all(not torch.equal(ext_outs[i], ext_outs[j])
                       for i in range(3) for j in range(i + 1, 3))

    # in-focus pixels: where the reported (pre-adjustment) mask is exactly 1
    focus = results[0].mask.data == 1.0
    focus_stable = all(torch.equal(r.mask.data == 1.0, focus) for r in results)
    focus_count = int(focus.sum())
    sel = focus[0]
    in_focus_identical = all(
        torch.equal(out[:, sel], ext_outs[0][:, sel]) for out in ext_outs)
    in_focus_is_input = torch.equal(ext_outs[0][:, sel], image.data[:, sel])

    # soft, non-gating: stronger background level should pull the output
    # toward the input over the fully-background pixels
    background = results[0].mask.data[0] == 0.0
    devs = [float((out[:, background] - image.data[:, background]).abs().mean())
            for out in ext_outs]
    monotone = devs[0] >= devs[1] >= devs[2]

    verdict(
        "f-stop-mechanism",
        g1_distinct and ext_distinct and focus_count > 0 and focus_stable
        and in_focus_identical and in_focus_is_input,
        f"outputs pairwise distinct (predictor {g1_distinct}, "
        f"external {ext_distinct}); {focus_count} in-focus pixels "
        f"bit-identical across the sweep: {in_focus_identical} "
        f"(and equal to the input: {in_focus_is_input}); "
        f"soft trend background deviation {devs[0]:.4f}/{devs[1]:.4f}/"
        f"{devs[2]:.4f} monotone: {monotone} (reported, non-gating)",
    )
