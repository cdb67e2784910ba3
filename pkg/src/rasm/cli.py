"""Command-line surface.

    rasm synth      --out DIR [--count N] [--config F] [--seed N]
    rasm train      --out DIR [--config F] [--steps N] [--data DIR]
                    [--resume CKPT] [--seed N]
    rasm infer      --checkpoint CKPT --shadow PNG --mask PNG --out PNG
    rasm eval       --checkpoint CKPT --data DIR [--out CSV]
    rasm flops      [--config F] [--size N]
    rasm selfcheck
    rasm attmap     --checkpoint CKPT --shadow PNG --mask PNG
                    --query Y,X [--block N] [--out TXT]

Exit codes: 0 success, 1 usage error (bad flags, bad config field),
2 runtime failure (missing files, incompatible shapes, failed selfcheck).
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from .errors import RasmError, ConfigError
from . import config as config_mod
from . import data as data_mod


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract here reserves
    # 2 for runtime failures, so route usage problems through an exception.
    def error(self, message):
        raise UsageError(message)


def _load_run(args):
    """RunConfig from --config (if given) with --seed folded in."""
    if getattr(args, "config", None):
        try:
            run = config_mod.from_file(args.config)
        except ConfigError as e:
            # Bad field names or values in --config are usage mistakes;
            # ConfigError raised later (size incompatibility) stays runtime.
            raise UsageError(str(e)) from None
    else:
        run = config_mod.RunConfig.default()
    seed = getattr(args, "seed", None)
    if seed is not None:
        run = dataclasses.replace(
            run,
            synth=dataclasses.replace(run.synth, seed=seed),
            train=dataclasses.replace(run.train, seed=seed))
    return run


def _write_text(path, text):
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- handlers

def _cmd_synth(args):
    run = _load_run(args)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        smp = data_mod.generate_sample(run.synth, i)
        data_mod.save_sample(args.out, smp)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def _cmd_train(args):
    from . import training
    run = _load_run(args)
    if args.resume and not args.config:
        run = training.load_model(args.resume)[0]
    if args.data:
        dataset = data_mod.DirectoryDataset(args.data)
    else:
        dataset = data_mod.synth_dataset(run.synth, args.synth_count)
    final, _ = training.train(run, dataset, args.steps, args.out,
                              resume=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def _cmd_infer(args):
    from . import training
    _, model, _ = training.load_model(args.checkpoint)
    shadow = data_mod.load_image(args.shadow)
    mask = data_mod.load_image(args.mask)
    if shadow.shape[0] != 3:
        raise RasmError(f"--shadow must be RGB, got {shadow.shape[0]} channels")
    if mask.shape[0] != 1:
        mask = mask.mean(axis=0, keepdims=True)
    out = training.infer(model, shadow, mask)
    data_mod.save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args):
    from . import training
    _, model, _ = training.load_model(args.checkpoint)
    dataset = data_mod.DirectoryDataset(args.data)
    _, csv = training.evaluate(model, dataset)
    _write_text(args.out, csv)
    if args.out:
        print(f"wrote {args.out}")
    return 0


def _cmd_flops(args):
    from . import network
    run = _load_run(args)
    print(network.profile_table(run.model, args.size, args.size))
    return 0


def _cmd_selfcheck(args):
    from . import selfcheck
    return 0 if selfcheck.run_all() else 2


def _cmd_attmap(args):
    from . import training
    from .attention import serialize_attention_map
    _, model, _ = training.load_model(args.checkpoint)
    shadow = data_mod.load_image(args.shadow)
    mask = data_mod.load_image(args.mask)
    if mask.shape[0] != 1:
        mask = mask.mean(axis=0, keepdims=True)
    try:
        y, x = (int(v) for v in args.query.split(","))
    except ValueError:
        raise UsageError(f"--query must be Y,X integers, got {args.query!r}")
    offsets, _, weights = model.attention_map(shadow, mask, (y, x),
                                              block=args.block)
    _write_text(args.out, serialize_attention_map(offsets, weights))
    if args.out:
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="rasm", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("synth", _cmd_synth, "materialize a synthetic shadow dataset")
    sp.add_argument("--out", required=True, help="dataset directory")
    sp.add_argument("--count", type=int, default=16)
    sp.add_argument("--config", help="run config file (synth.* section)")
    sp.add_argument("--seed", type=int, help="override synth seed")

    sp = add("train", _cmd_train, "train a model")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--config", help="run config file")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--data", help="dataset directory (default: synthesize)")
    sp.add_argument("--synth-count", type=int, default=8,
                    help="in-memory synthetic samples when --data is absent")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--seed", type=int, help="override train/synth seed")

    sp = add("infer", _cmd_infer, "restore one image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--shadow", required=True, help="input RGB image")
    sp.add_argument("--mask", required=True, help="shadow mask image")
    sp.add_argument("--out", required=True, help="output PNG")

    sp = add("eval", _cmd_eval, "metric table over a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", help="CSV path (default: stdout)")

    sp = add("flops", _cmd_flops, "per-layer parameter/FLOPs table")
    sp.add_argument("--config", help="run config file (model.* section)")
    sp.add_argument("--size", type=int, default=256, help="input resolution")

    add("selfcheck", _cmd_selfcheck, "run oracle and gradient suites")

    sp = add("attmap", _cmd_attmap, "dump one query's attention weights")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--shadow", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--query", required=True, help="bottleneck Y,X position")
    sp.add_argument("--block", type=int, default=0, help="bottleneck block")
    sp.add_argument("--out", help="output text file (default: stdout)")

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (RasmError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
