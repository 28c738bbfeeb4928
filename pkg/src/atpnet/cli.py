"""Command-line interface.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on data
errors (unreadable images, malformed files, failed training).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import packed
from .data import load_grayscale, save_png, to_tensor_array, to_uint8, validate_input_size
from .errors import ATPError, ConfigError, FormatError
from .formats import (
    CKPT_MAGIC,
    MEAS_MAGIC,
    Checkpoint,
    file_digest,
    load_measurements,
    save_measurements,
    sniff,
)
from .model import TrainConfig
from .tensor import Tensor, no_grad
from .training import data_rng, evaluate, load_training_images, phase_boundary, reconstruct_image, train

log = logging.getLogger("atpnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    p.add_argument("--config", type=Path, default=None, help="JSON file of TrainConfig fields")
    p.add_argument("--out", type=Path, default=None, help="output path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atpnet", description="Ternary block compressed sensing: train, sample, reconstruct, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--train-dir", type=Path, required=True)
    p.add_argument("--val-dir", type=Path)
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")
    for flag, typ in (("--mr", float), ("--epochs", int), ("--warmup-epochs", int), ("--batch", int),
                      ("--lr", float), ("--sparsity-rate", float), ("--crop", int), ("--features", int)):
        p.add_argument(flag, type=typ)

    p = sub.add_parser("ternarize", parents=[common], help="quantise the sampler of a float checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="calibration image directory")
    p.add_argument("--sparsity-rate", type=float)

    p = sub.add_parser("sample", parents=[common], help="measure an image and write an ATPM dump")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--packed", action="store_true", help="use the bit-packed kernel (ternary checkpoints)")

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a PNG from measurements or an image")
    p.add_argument("--ckpt", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--measurements", type=Path)
    src.add_argument("--image", type=Path)

    p = sub.add_parser("eval", parents=[common], help="PSNR report over an image directory")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mr", type=float)
    p.add_argument("--save-images", type=Path, help="directory for reconstructed PNGs")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("pack", parents=[common], help="write the ternary sampler as an ATPK file")
    p.add_argument("--ckpt", type=Path, required=True)

    p = sub.add_parser("inspect", parents=[common], help="summarise an ATPN, ATPK or ATPM file")
    p.add_argument("file", type=Path)
    return parser


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    return args.out


def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_json(args.config).to_dict() if args.config else {}
    for key in ("mr", "epochs", "warmup_epochs", "batch", "lr", "sparsity_rate", "crop", "features"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if args.seed is not None:
        base["seed"] = args.seed
    return TrainConfig.from_dict(base)


def _write_history(history, out: Path) -> None:
    from .plotting import plot_history

    if not history:
        return
    keys = sorted({k for h in history for k in h}, key=["epoch", "mode", "lr", "train_mse", "val_mse"].index)
    lines = [",".join(keys)] + [",".join(str(h.get(k, "")) for k in keys) for h in history]
    out.with_suffix(".history.csv").write_text("\n".join(lines) + "\n")
    plot_history(history, out.with_suffix(".history.png"))


def cmd_train(args) -> int:
    out = _require_out(args)
    if args.resume:
        resume = Checkpoint.load(args.resume)
        cfg = resume.config
    else:
        resume, cfg = None, _train_config(args)
    ckpt = train(cfg, args.train_dir, args.val_dir, resume=resume)
    digest = ckpt.save(out)
    _write_history(ckpt.history, out)
    print(json.dumps({"checkpoint": str(out), "sha256": digest, "epochs": ckpt.epoch, "mode": ckpt.mode}))
    return EXIT_OK


def cmd_ternarize(args) -> int:
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt)
    if ckpt.mode != "float":
        raise ConfigError(f"{args.ckpt} is already in {ckpt.mode} mode")
    if args.sparsity_rate is not None:
        ckpt.config = TrainConfig.from_dict({**ckpt.config.to_dict(), "sparsity_rate": args.sparsity_rate})
    model = ckpt.to_model()
    rng = ckpt.rng() if ckpt.rng_state else data_rng(ckpt.config.seed if args.seed is None else args.seed)
    info = phase_boundary(model, load_training_images(args.data, ckpt.config.crop), rng)
    new = Checkpoint.from_model(model, ckpt.epoch, rng, ckpt.history)
    digest = new.save(out)
    print(json.dumps({"checkpoint": str(out), "sha256": digest, **info}))
    return EXIT_OK


def _measure(model, image: np.ndarray, use_packed: bool) -> np.ndarray:
    x = to_tensor_array(image, model.sampler.latent.dtype)
    if use_packed:
        if model.sampler.mode != "ternary":
            raise ConfigError("--packed needs a ternary checkpoint")
        p = packed.pack(model.sampler.effective_weight_array(), float(model.sampler.alpha.data))
        return packed.ternary_sample(p, x, model.sampler.block_size)
    with no_grad():
        return model.measure(Tensor(x)).data


def cmd_sample(args) -> int:
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt)
    model = ckpt.to_model()
    image = validate_input_size(load_grayscale(args.image), ckpt.config.block_size)
    y = _measure(model, image, args.packed)
    save_measurements(out, y, ckpt.config.mr, ckpt.config.block_size)
    print(json.dumps({"measurements": str(out), "shape": list(y.shape), "mr": ckpt.config.mr}))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt)
    model = ckpt.to_model()
    if args.image:
        image = validate_input_size(load_grayscale(args.image), ckpt.config.block_size)
        rec = reconstruct_image(model, image)
    else:
        y, mr, bs = load_measurements(args.measurements)
        if bs != ckpt.config.block_size or y.shape[1] != model.sampler.cfg.out_channels:
            raise FormatError(
                f"measurements (mr={mr}, block {bs}, {y.shape[1]} channels) do not match the checkpoint "
                f"(mr={ckpt.config.mr}, block {ckpt.config.block_size})"
            )
        with no_grad():
            rec = to_uint8(model.reconstruct(Tensor(y.astype(model.sampler.latent.dtype))).data[0, 0])
    save_png(rec, out)
    print(json.dumps({"image": str(out), "shape": list(rec.shape)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt)
    if args.save_images:
        args.save_images.mkdir(parents=True, exist_ok=True)
    report = evaluate(ckpt, args.data, mr=args.mr, save_dir=args.save_images, model_id=file_digest(args.ckpt)[:16])
    report.write_json(out)
    report.write_csv(out.with_suffix(".csv"))
    if not args.no_figures:
        from .plotting import plot_comparisons, plot_psnr
        from .training import load_eval_images

        plot_psnr(report, out.with_suffix(".psnr.png"))
        if args.save_images:
            pairs = []
            for (name, img), entry in zip(load_eval_images(args.data, ckpt.config.block_size), report.entries):
                rec = load_grayscale(args.save_images / (Path(name).stem + "_rec.png"))
                pairs.append((name, img, rec, entry["psnr"]))
            plot_comparisons(pairs, out.with_suffix(".comparison.png"))
    print(json.dumps({"report": str(out), "mean_psnr": report.mean_psnr, "images": len(report.entries)}))
    return EXIT_OK


def cmd_pack(args) -> int:
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt)
    if ckpt.mode != "ternary":
        raise ConfigError(f"{args.ckpt} is in {ckpt.mode} mode; run `ternarize` first")
    model = ckpt.to_model()
    p = packed.pack(model.sampler.effective_weight_array(), float(model.sampler.alpha.data), ckpt.config.sparsity_rate)
    packed.save(p, out)
    print(json.dumps({"packed": str(out), **packed.storage_report(p)}))
    return EXIT_OK


def cmd_inspect(args) -> int:
    magic = sniff(args.file)
    if magic == CKPT_MAGIC:
        ckpt = Checkpoint.load(args.file)
        summary = {
            "format": "ATPN",
            "mode": ckpt.mode,
            "epoch": ckpt.epoch,
            "config": ckpt.config.to_dict(),
            "parameters": {k: list(v.shape) for k, v in ckpt.arrays.items() if "#" not in k},
            "last_epoch": ckpt.history[-1] if ckpt.history else None,
        }
    elif magic == packed.MAGIC:
        p = packed.load(args.file)
        summary = {
            "format": "ATPK",
            "shape": list(p.shape),
            "alpha": p.alpha,
            "sparsity_rate": p.sparsity_rate,
            "nonzero": p.nonzero_count(),
            **packed.storage_report(p),
        }
    elif magic == MEAS_MAGIC:
        y, mr, bs = load_measurements(args.file)
        summary = {"format": "ATPM", "shape": list(y.shape), "mr": mr, "block_size": bs}
    else:
        raise FormatError(f"{args.file}: unrecognised magic {magic!r}")
    summary["sha256"] = file_digest(args.file)
    text = json.dumps(summary, indent=2)
    if args.out:
        args.out.write_text(text + "\n")
    print(text)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ternarize": cmd_ternarize,
    "sample": cmd_sample,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "pack": cmd_pack,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"atpnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ATPError, OSError) as exc:
        print(f"atpnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
