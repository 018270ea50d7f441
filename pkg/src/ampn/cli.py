"""Command line interface.

Subcommands: render (apply a checkpoint to one image), train, eval, synth
(write a synthetic dataset), serve (start the HTTP service).

Exit codes: 0 success; 1 bad arguments or a failed run; 2 missing or
unreadable files; 3 shape or configuration mismatches.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from ampn.container import CheckpointMismatchError, ContainerFormatError
from ampn.io import UnsupportedImageError, load_image, load_mask, save_image
from ampn.render import MaskShapeError, RenderRequest, load_pipeline, render
from ampn.synthdata import DirectoryDataset, export_dataset, make_dataset
from ampn.trainer import TrainingDiverged, evaluate, train_model
from ampn.types import ModelConfig, parse_config_text


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="ampn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("render", help="render one image through a checkpoint")
    p.add_argument("--in", dest="input", required=True, help="input PNG")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--mask", help="external focus mask PNG (bypasses the predictor)")
    p.add_argument("--background-level", type=float, default=None,
                   help="replace background mask values with this level [0,1)")
    p.add_argument("--focus-threshold", type=float, default=0.8,
                   help="mask values at or above this are in-focus (default 0.8)")
    p.add_argument("--dump-mask", help="also write the focus mask PNG here")

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--in", dest="input", required=True,
                   help="dataset root (train/eval layout)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="override train.seed")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--in", dest="input", required=True, help="dataset root")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", help="write the TSV report here (default stdout)")
    p.add_argument("--quantized", action="store_true",
                   help="measure on 8-bit quantized images")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--count", type=int, default=64, help="total samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--config", help="config file (sets the sample size)")

    p = sub.add_parser("serve", help="start the HTTP rendering service")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", help="static UI directory (default: bundled build)")
    return parser


def _load_config(path: str | None) -> ModelConfig:
    if path is None:
        return ModelConfig()
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        return parse_config_text(fh.read())


def _cmd_render(args) -> int:
    pipeline, _ = load_pipeline(args.ckpt)
    image = load_image(args.input)
    mask = load_mask(args.mask) if args.mask else None
    request = RenderRequest(image=image, mask=mask,
                            background_level=args.background_level,
                            focus_threshold=args.focus_threshold)
    result = render(pipeline, request)
    if result.resized:
        print(f"input resized to {result.image.height}x{result.image.width} "
              f"to fit the model", file=sys.stderr)
    save_image(result.image, args.out)
    if args.dump_mask:
        save_image(result.mask, args.dump_mask)
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, seed=args.seed))
    dataset = DirectoryDataset(args.input)
    result = train_model(config, dataset, out_dir=args.out, progress=True)
    last = result.history[-1]
    print(f"finished at step {last.step}, total loss {last.total:.5f}; "
          f"checkpoint in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    pipeline, _ = load_pipeline(args.ckpt)
    dataset = DirectoryDataset(args.input)
    report = evaluate(pipeline, dataset, quantized=args.quantized)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_tsv())
    else:
        sys.stdout.write(report.to_tsv())
    print(report.table_row())
    return 0


def _cmd_synth(args) -> int:
    config = _load_config(args.config)
    dataset = make_dataset(args.count, args.seed, train_frac=args.train_frac,
                           size=config.train.image_size)
    export_dataset(dataset, args.out)
    print(f"wrote {dataset.train_count} train / {dataset.eval_count} eval "
          f"samples under {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from ampn.service import create_app

    app = create_app(args.ckpt, static_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "render": _cmd_render,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "synth": _cmd_synth,
        "serve": _cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except FileNotFoundError as exc:
        print(f"ampn: file not found: {exc}", file=sys.stderr)
        return 2
    except (ContainerFormatError, UnsupportedImageError) as exc:
        print(f"ampn: unreadable file: {exc}", file=sys.stderr)
        return 2
    except (MaskShapeError, CheckpointMismatchError) as exc:
        print(f"ampn: mismatch: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TrainingDiverged) as exc:
        print(f"ampn: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
