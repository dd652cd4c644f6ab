"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
check failure.
"""
import argparse
import logging
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__, pipeline, trainer
from .errors import ContractError, FormatError, LptmError
from .imagecore import load_image, read_pfm, save_image, write_pfm
from .llf import RemapConfig, constant_params, refine_level_fast
from .lut import read_cube, trilinear_apply
from .metrics import psnr
from .predictor import describe, init_state, read_checkpoint, write_checkpoint
from .pyramid import decompose, reconstruct

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

logger = logging.getLogger("lptm")

RUN_KEYS = {"dataset": None, "checkpoint": None, "output_dir": ".", "log": None, "resume": None}


class UsageError(LptmError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------
# run configuration files
# ----------------------------------------------------------------------------

def _parse_value(raw, default, key, lineno):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise FormatError(f"bad value {raw!r} for key {key!r}", lineno) from None
    return raw


def read_run_config(path):
    """Parse a ``key = value`` file into ``(TrainConfig, paths)``.

    Keys are the TrainConfig fields plus dataset, checkpoint, output_dir,
    log and resume.  Unknown keys are rejected.  Relative paths resolve
    against the directory of the config file.
    """
    defaults = trainer.TrainConfig()
    train_kwargs, paths = {}, dict(RUN_KEYS)
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"expected key = value, got {line!r}", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            if key in paths:
                paths[key] = value if os.path.isabs(value) else os.path.join(base, value)
            elif key in trainer.TrainConfig.keys():
                train_kwargs[key] = _parse_value(value, getattr(defaults, key), key, lineno)
            else:
                raise FormatError(f"unknown key {key!r}", lineno)
    try:
        cfg = trainer.TrainConfig(**train_kwargs)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not os.path.isabs(paths["output_dir"]):
        paths["output_dir"] = os.path.join(base, paths["output_dir"])
    if paths["dataset"] is None or paths["checkpoint"] is None:
        raise FormatError(f"{path}: 'dataset' and 'checkpoint' are required")
    return cfg, paths


def run_config_template():
    lines = ["# lptm training configuration"]
    for key, default in RUN_KEYS.items():
        lines.append(f"# {key} = {default if default is not None else '<path>'}")
    for f in fields(trainer.TrainConfig):
        lines.append(f"# {f.name} = {f.default}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def _rgb(img):
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def _pipeline_cfg(args):
    return pipeline.PipelineConfig(target_low=args.target_low, k_samples=args.k_samples)


def cmd_tonemap(args):
    t0 = time.perf_counter()
    img = _rgb(load_image(args.input))
    state = read_checkpoint(args.checkpoint)
    t_load = time.perf_counter() - t0
    fwd = pipeline.forward(state, img, _pipeline_cfg(args))
    t0 = time.perf_counter()
    save_image(np.clip(fwd.output, 0.0, 1.0), args.output, args.bitdepth)
    t_save = time.perf_counter() - t0
    timings = {"load": t_load, **fwd.timings, "save": t_save}
    for stage, dt in timings.items():
        print(f"{stage:16s} {dt * 1000:9.1f} ms")
    print(f"{'total':16s} {sum(timings.values()) * 1000:9.1f} ms")
    return EXIT_OK


def cmd_train(args):
    cfg, paths = read_run_config(args.config)
    if not os.path.isdir(paths["dataset"]):
        raise FileNotFoundError(f"dataset directory not found: {paths['dataset']}")
    dataset = trainer.PairedDataset.open(paths["dataset"])
    state = read_checkpoint(paths["resume"]) if paths["resume"] else None
    result = trainer.train(dataset, cfg, state)
    os.makedirs(paths["output_dir"], exist_ok=True)
    write_checkpoint(result.state, paths["checkpoint"])
    log_path = paths["log"] or os.path.join(paths["output_dir"], "loss_log.csv")
    with open(log_path, "w") as fh:
        fh.write(result.log_text())
    if result.dead_parameters:
        print("warning: no gradient reached " + ", ".join(result.dead_parameters))
    print(f"trained {len(result.log)} steps; checkpoint {paths['checkpoint']}; log {log_path}")
    return EXIT_OK


def cmd_eval(args):
    dataset = trainer.PairedDataset.open(args.dataset)
    state = read_checkpoint(args.checkpoint)
    rows = trainer.evaluate(dataset, state, args.split, _pipeline_cfg(args))
    if args.csv:
        trainer.write_metrics_csv(rows, args.csv)
    print(trainer.format_metrics_table(rows))
    return EXIT_OK


def cmd_decompose(args):
    img = load_image(args.input)
    pyr, _ = decompose(img, args.target_low)
    os.makedirs(args.out_dir, exist_ok=True)
    for k, band in enumerate(pyr.bands):
        write_pfm(os.path.join(args.out_dir, f"band_{k:02d}.pfm"), band)
    write_pfm(os.path.join(args.out_dir, "low.pfm"), pyr.low)
    with open(os.path.join(args.out_dir, "sizes.txt"), "w") as fh:
        for w, h in pyr.sizes:
            fh.write(f"{w} {h}\n")
    print(f"{pyr.n_levels} bands + residual {pyr.sizes[-1][0]}x{pyr.sizes[-1][1]} "
          f"written to {args.out_dir}")
    return EXIT_OK


def read_band_dir(path):
    sizes = []
    with open(os.path.join(path, "sizes.txt")) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                parts = line.split()
                if len(parts) != 2:
                    raise FormatError("expected 'width height'", lineno)
                sizes.append((int(parts[0]), int(parts[1])))
    bands = [read_pfm(os.path.join(path, f"band_{k:02d}.pfm")) for k in range(len(sizes) - 1)]
    return bands, read_pfm(os.path.join(path, "low.pfm")), sizes


def cmd_reconstruct(args):
    bands, low, sizes = read_band_dir(args.in_dir)
    out = reconstruct(bands, low, sizes)
    save_image(out, args.output, args.bitdepth)
    if args.compare:
        ref = load_image(args.compare)
        print(f"PSNR vs {args.compare}: {psnr(np.clip(out, 0, 1), ref):.2f} dB")
    return EXIT_OK


def cmd_apply_lut(args):
    lut = read_cube(args.cube)
    img = _rgb(load_image(args.input))
    save_image(trilinear_apply(lut, img), args.output, args.bitdepth)
    return EXIT_OK


def cmd_llf(args):
    if args.alpha <= 0 or args.beta < 0:
        raise UsageError("need alpha > 0 and beta >= 0")
    img = load_image(args.input)
    pyr, gauss = decompose(img, args.target_low)
    cfg = RemapConfig(k_samples=args.k_samples)
    refined = [refine_level_fast(gauss.levels[k], band,
                                 constant_params(band.shape[:2], args.alpha, args.beta, k), cfg)
               for k, band in enumerate(pyr.bands)]
    if args.dump_bands:
        os.makedirs(args.dump_bands, exist_ok=True)
        for k, band in enumerate(refined):
            write_pfm(os.path.join(args.dump_bands, f"refined_{k:02d}.pfm"), band)
    save_image(np.clip(reconstruct(refined, pyr.low, pyr.sizes), 0, 1), args.output,
               args.bitdepth)
    return EXIT_OK


def cmd_grad_check(args):
    from .gradcheck import run_tiny_check
    results = run_tiny_check(args.seed, args.eps, args.max_coords)
    worst = 0.0
    for r in results:
        flag = "ok  " if r.rel_error <= args.tol else "FAIL"
        print(f"{flag} {r.name:26s} rel_err={r.rel_error:.3e} coords={r.n_coords}")
        worst = max(worst, r.rel_error)
    print(f"worst relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_CHECK


def cmd_init(args):
    state = init_state(args.levels, args.n_luts, args.n_bins, args.seed)
    write_checkpoint(state, args.checkpoint)
    print(f"wrote {args.checkpoint} ({state.n_params()} parameters)")
    return EXIT_OK


def cmd_describe(args):
    print(describe(read_checkpoint(args.checkpoint)))
    return EXIT_OK


def cmd_config_template(args):
    sys.stdout.write(run_config_template())
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for BLAS/OpenMP (default: $LPTM_THREADS or all "
                             "cores; 1 = canonical deterministic path)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress messages")

    pipe = _Parser(add_help=False)
    pipe.add_argument("--target-low", type=int, default=64,
                      help="approximate residual size in pixels (default 64)")
    pipe.add_argument("--k-samples", type=int, default=16,
                      help="reference samples of the fast local Laplacian filter (default 16)")

    out = _Parser(add_help=False)
    out.add_argument("--bitdepth", type=int, choices=(8, 16), default=8,
                     help="bit depth of integer output formats (default 8)")

    parser = _Parser(prog="lptm", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"lptm {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("tonemap", parents=[common, pipe, out],
                       help="tone-map one image with a trained checkpoint")
    p.add_argument("input", help="input image (PNG/PPM/PGM/PFM)")
    p.add_argument("--checkpoint", required=True, help="model checkpoint file")
    p.add_argument("--output", required=True, help="output image path")
    p.set_defaults(func=cmd_tonemap)

    p = sub.add_parser("train", parents=[common], help="train from a key=value config file")
    p.add_argument("config", help="run configuration (see 'config-template')")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, pipe], help="evaluate a checkpoint on a split")
    p.add_argument("--dataset", required=True, help="dataset root (input/, reference/)")
    p.add_argument("--checkpoint", required=True, help="model checkpoint file")
    p.add_argument("--split", default="test", help="split name: train or test (default test)")
    p.add_argument("--csv", help="write per-image metrics to this CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", parents=[common],
                       help="dump Laplacian bands and residual as PFM plus sizes.txt")
    p.add_argument("input", help="input image")
    p.add_argument("--out-dir", required=True, help="directory for band_XX.pfm, low.pfm, sizes.txt")
    p.add_argument("--target-low", type=int, default=64, help="approximate residual size")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", parents=[common, out],
                       help="collapse a directory written by 'decompose'")
    p.add_argument("--in-dir", required=True, help="directory written by 'decompose'")
    p.add_argument("--output", required=True, help="output image path")
    p.add_argument("--compare", help="print PSNR of the result against this image")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("apply-lut", parents=[common, out], help="apply a .cube 3D LUT")
    p.add_argument("input", help="input image")
    p.add_argument("--cube", required=True, help="Adobe .cube file")
    p.add_argument("--output", required=True, help="output image path")
    p.set_defaults(func=cmd_apply_lut)

    p = sub.add_parser("llf", parents=[common, out],
                       help="local Laplacian filter with global alpha/beta")
    p.add_argument("input", help="input image")
    p.add_argument("--alpha", type=float, required=True, help="detail exponent (> 0)")
    p.add_argument("--beta", type=float, required=True, help="edge slope (>= 0)")
    p.add_argument("--output", required=True, help="output image path")
    p.add_argument("--target-low", type=int, default=64, help="approximate residual size")
    p.add_argument("--k-samples", type=int, default=16, help="reference samples (default 16)")
    p.add_argument("--dump-bands", help="write refined bands as PFM into this directory")
    p.set_defaults(func=cmd_llf)

    p = sub.add_parser("grad-check", parents=[common],
                       help="finite-difference check of all gradients on a tiny instance")
    p.add_argument("--seed", type=int, default=0, help="instance seed")
    p.add_argument("--eps", type=float, default=1e-3, help="central-difference step")
    p.add_argument("--tol", type=float, default=1e-3, help="max relative error")
    p.add_argument("--max-coords", type=int, default=24, help="coordinates checked per tensor")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("init", parents=[common], help="write a near-identity checkpoint")
    p.add_argument("checkpoint", help="output checkpoint path")
    p.add_argument("--levels", type=int, default=3, help="number of PPBs (pyramid levels)")
    p.add_argument("--n-luts", type=int, default=3, help="basis LUT count")
    p.add_argument("--n-bins", type=int, default=33, help="lattice size per axis")
    p.add_argument("--seed", type=int, default=0, help="initialization seed")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("describe", parents=[common],
                       help="list checkpoint tensors, shapes and parameter totals")
    p.add_argument("checkpoint", help="checkpoint file")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("config-template", parents=[common],
                       help="print a commented training config with all defaults")
    p.set_defaults(func=cmd_config_template)
    return parser


def _thread_limit(args):
    n = args.threads
    if n is None and os.environ.get("LPTM_THREADS"):
        n = int(os.environ["LPTM_THREADS"])
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _thread_limit(args)
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, ContractError) as exc:
        print(f"lptm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, LptmError, OSError) as exc:
        print(f"lptm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
