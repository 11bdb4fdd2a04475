"""Command-line entry point.

    unfoldseg solve <image> [--config F] [--init-mask M] [--checkpoint P] [--out O] [--trace T] [--gt G]
    unfoldseg train <manifest> [--config F] [--out CKPT] [--trace T]
    unfoldseg eval <pred-dir> <gt-dir>
    unfoldseg synth --n N --difficulty easy|medium|hard --seed S --out DIR

Exit status: 0 success, 1 usage error, 2 data or numeric error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import metrics, solver, synth
from .errors import ConfigError, DegeneracyError, InvalidArgumentError, ParseError, UnsupportedFormatError
from .io.config import RunConfig, load_config
from .io.pnm import load_image, load_mask, save_mask
from .io.trace import emit_trace

log = logging.getLogger("unfoldseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
_IMAGE_EXTS = (".pgm", ".ppm", ".pnm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def cmd_solve(args):
    cfg = _config(args)
    c = load_image(args.image)
    init = load_mask(args.init_mask) if args.init_mask else None
    checkpoint = args.checkpoint or cfg.paths.checkpoint
    if checkpoint and args.trace:
        raise UsageError("--trace is only available for the model-based solver")
    if checkpoint:
        from .unfolded import forward, load_checkpoint, to_batch
        from .tensor_core import value

        params = load_checkpoint(checkpoint)
        init_b = None if init is None else init[None, None]
        out = forward(to_batch([c]), params, init_mask=init_b)
        mask = np.asarray(value(out.stages[-1].m))[0, 0]
        result = None
    else:
        result = solver.solve(c, cfg.solver, init_mask=init)
        mask = result.mask
    out_path = args.out or cfg.paths.output or os.path.splitext(os.path.basename(args.image))[0] + "_mask.pgm"
    save_mask(out_path, mask)
    if args.trace:
        gt = load_mask(args.gt) if args.gt else None
        emit_trace(args.trace, result, gt=gt, threshold=cfg.solver.threshold)
    if args.gt:
        r = metrics.evaluate(mask, load_mask(args.gt), threshold=cfg.solver.threshold)
        print(f"mae={r.mae:.6f} f_beta={r.f_beta:.6f} iou={r.iou:.6f} dice={r.dice:.6f}")
    print(out_path)


def cmd_train(args):
    from .unfolded import init_params, save_checkpoint, train

    cfg = _config(args)
    manifest = synth.read_manifest(args.manifest)
    dataset = manifest.load_all()
    channels = dataset[0][0].shape[2] if dataset else 1
    params = init_params(cfg.solver.stages, in_channels=channels, seed=cfg.training.seed, solver=cfg.solver)
    result = train(dataset, cfg.training, params, log_every=100)
    out = args.out or cfg.paths.output or "params.npz"
    save_checkpoint(out, result.params)
    if args.trace:
        emit_trace(args.trace, result)
    print(f"final loss {result.trace[-1].loss:.6f}" if result.trace else "no steps run")
    print(out)


def _pair_key(name):
    stem = os.path.splitext(name)[0]
    for suffix in ("_gt", "_mask", "_pred"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def cmd_eval(args):
    def listing(d):
        return {
            _pair_key(f): os.path.join(d, f)
            for f in sorted(os.listdir(d))
            if f.lower().endswith(_IMAGE_EXTS)
        }

    preds, gts = listing(args.pred_dir), listing(args.gt_dir)
    keys = sorted(set(preds) & set(gts))
    if not keys:
        raise InvalidArgumentError("no prediction/ground-truth pairs found")
    reports = []
    print("name\tmae\tf_beta\tiou\tdice")
    for key in keys:
        r = metrics.evaluate(load_mask(preds[key]), load_mask(gts[key]))
        reports.append(r)
        print(f"{key}\t{r.mae:.6f}\t{r.f_beta:.6f}\t{r.iou:.6f}\t{r.dice:.6f}")
    means = [np.mean([getattr(r, f) for r in reports]) for f in ("mae", "f_beta", "iou", "dice")]
    print("mean\t" + "\t".join(f"{m:.6f}" for m in means))
    print("unavailable: " + ", ".join(metrics.UNAVAILABLE))


def cmd_synth(args):
    path = synth.make_suite(args.n, args.difficulty, args.seed, args.out,
                            size=args.size, scale=args.scale, channels=args.channels)
    print(path)


def build_parser():
    p = _Parser(prog="unfoldseg", description="Concealed-object segmentation by unfolded optimisation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="segment one image")
    s.add_argument("image")
    s.add_argument("--config")
    s.add_argument("--init-mask", help="external mask used as M_0")
    s.add_argument("--checkpoint", help="run the trained unfolded model instead of the solver")
    s.add_argument("--out")
    s.add_argument("--trace", help="write the per-stage energy CSV here")
    s.add_argument("--gt", help="ground-truth mask for metrics")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train the unfolded model on a manifest")
    t.add_argument("manifest")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--trace")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score predicted masks against ground truth")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("synth", help="write a synthetic scene suite")
    y.add_argument("--n", type=int, required=True)
    y.add_argument("--difficulty", choices=tuple(synth.DIFFICULTY), required=True)
    y.add_argument("--seed", type=int, required=True)
    y.add_argument("--out", required=True)
    y.add_argument("--size", type=int, default=64)
    y.add_argument("--scale", type=float, default=0.45)
    y.add_argument("--channels", type=int, choices=(1, 3), default=1)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, UnsupportedFormatError, InvalidArgumentError, DegeneracyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
