"""Command line front end: quantize, dequantize, train, eval, hist, selfcheck.

Exit codes: 0 success, 2 usage, 3 training divergence, 4 I/O failure,
5 file format or shape mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import bitdepth, metrics, training
from .errors import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    ImageFormatError,
    ShapeMismatchError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4
EXIT_FORMAT = 5


def _apply_thread_env() -> None:
    """DEQUANT_THREADS caps math-library threads; 1 selects sequential mode."""
    value = os.environ.get("DEQUANT_THREADS")
    if not value:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=int(value))
    except (ImportError, ValueError):
        pass


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field; help text documents the defaults."""
    defaults = training.TrainConfig()
    for f in dataclasses.fields(training.TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        kind = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                        "str": str, "bool": bool}[f.type]
        if kind is bool:
            parser.add_argument(flag, default=None, metavar="BOOL",
                                type=lambda s, _n=f.name: training._coerce_field(_n, bool, s),
                                help=f"(default: {str(default).lower()})")
        else:
            parser.add_argument(flag, default=None, type=kind,
                                help=f"(default: {default})")


def _collect_overrides(args: argparse.Namespace) -> dict:
    names = {f.name for f in dataclasses.fields(training.TrainConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def _model_config(args: argparse.Namespace):
    cfg = training.make_config(getattr(args, "config", None), getattr(args, "preset", None))
    return cfg.generator_config()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dequant",
        description="Image bit-depth expansion: classic baselines and a trainable attentive GAN.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="reduce an 8-bit image to fewer bits (LSB truncation)")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--bits", type=int, required=True, choices=range(1, 8),
                   help="target bit depth, 1..7")

    p = sub.add_parser("dequantize", help="expand a low bit-depth image back to 8 bits")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", choices=("zp", "mig", "model"), default="zp",
                   help="(default: zp)")
    p.add_argument("--checkpoint", help="generator checkpoint (required for --method model)")
    p.add_argument("--bits-in", type=int, default=None,
                   help="input bit depth; overrides any sidecar tag")
    p.add_argument("--bits-out", type=int, default=8, help="(default: 8)")
    p.add_argument("--preset", choices=sorted(training.PRESETS), help="model architecture preset")
    p.add_argument("--config", help="training config file describing the model architecture")
    p.add_argument("--tile", type=int, default=64, help="model tile size (default: 64)")

    p = sub.add_parser("train", help="train the generator (and discriminator) on a directory of images")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", choices=sorted(training.PRESETS),
                   help="named preset applied before the config file and flags")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="benchmark de-quantization methods on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--methods", default="zp,mig", help="comma list of zp,mig,model (default: zp,mig)")
    p.add_argument("--bits", type=int, default=4, choices=(4, 6), help="(default: 4)")
    p.add_argument("--checkpoint", help="generator checkpoint for the model method")
    p.add_argument("--preset", choices=sorted(training.PRESETS))
    p.add_argument("--config", help="training config file describing the model architecture")
    p.add_argument("--out", help="prefix for <out>.csv report output")
    p.add_argument("--tile", type=int, default=64, help="model tile size (default: 64)")

    p = sub.add_parser("hist", help="per-level intensity histogram of an image")
    p.add_argument("input")
    p.add_argument("--out", help="CSV output path (default: stdout)")

    sub.add_parser("selfcheck", help="run the built-in gradient and oracle suites")
    return parser


def _cmd_quantize(args) -> int:
    img = bitdepth.load_image(args.input)
    if img.bit_depth != 8:
        raise ImageFormatError(f"{args.input}: quantize expects an 8-bit source")
    bitdepth.save_image(bitdepth.quantize(img, args.bits), args.output)
    return EXIT_OK


def _cmd_dequantize(args) -> int:
    img = bitdepth.load_image(args.input, bit_depth=args.bits_in)
    if args.method == "zp":
        out = bitdepth.dequantize_zp(img, args.bits_out)
    elif args.method == "mig":
        out = bitdepth.dequantize_mig(img, args.bits_out)
    else:
        if not args.checkpoint:
            raise ConfigError("--method model requires --checkpoint")
        from .autodiff import Rng
        from .model import dequantize_model, init_generator
        from .params import load_checkpoint

        gen_cfg = _model_config(args)
        params = init_generator(Rng(0), gen_cfg)
        params.store().load_values(load_checkpoint(args.checkpoint))
        out = dequantize_model(img, params, gen_cfg, tile=args.tile)
    bitdepth.save_image(out, args.output)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = training.make_config(args.config, args.preset, _collect_overrides(args))
    store, history = training.run_training(cfg, log=print)
    print(f"final checkpoint: {cfg.out_dir}/gen_final.ckpt")
    print(f"loss history:     {history}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    gen_cfg = _model_config(args) if "model" in methods else None
    reports = metrics.run_benchmark(args.dataset, methods, args.bits,
                                    checkpoint=args.checkpoint, gen_cfg=gen_cfg,
                                    tile=args.tile)
    print(metrics.format_report(reports))
    if args.out:
        metrics.write_report_csv(reports, f"{args.out}.csv")
        print(f"report CSV: {args.out}.csv")
    return EXIT_OK


def _cmd_hist(args) -> int:
    hist = metrics.intensity_histogram(bitdepth.load_image(args.input))
    if args.out:
        metrics.write_histogram_csv(hist, args.out)
    else:
        sys.stdout.write("level,count\n")
        for level, count in enumerate(hist):
            sys.stdout.write(f"{level},{int(count)}\n")
    return EXIT_OK


def _cmd_selfcheck(args) -> int:
    from . import selfcheck

    failures = selfcheck.run_all(print)
    return EXIT_OK if failures == 0 else 1


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "quantize": _cmd_quantize,
        "dequantize": _cmd_dequantize,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "hist": _cmd_hist,
        "selfcheck": _cmd_selfcheck,
    }
    try:
        return handlers[args.command](args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ImageFormatError, ShapeMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
