"""Command line surface.

Subcommands: train, denoise, eval, trace-rf, gradcheck, ablate, params.
Every run prints its resolved configuration (including seeds) before doing
anything, so logs are self-describing. Exit codes: 0 success, 1 usage,
2 bad data or configuration, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_model
from .data import (GrayImage, NoiseConfig, add_awgn, load_image, read_manifest,
                   save_image)
from .errors import (ConfigError, DataError, GraphDnError, NumericError,
                     ShapeError, UsageError)
from .evaluate import (ablation_compare, denoise_image, evaluate_checkpoint,
                       psnr, trace_receptive_field)
from .model import (NetworkConfig, build_model, count_parameters,
                    network_config_to_text, with_nlg)
from .rng import substream_seed
from .training import TrainConfig, load_run_config, train_config_to_text, train_loop
from .verification import run_gradient_suite, suite_passed, suite_table


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; usage problems are exit 1 here
    def error(self, message):
        raise UsageError(message)


def _parse_pixel(text: str) -> tuple[int, int]:
    try:
        r, c = text.split(",")
        return int(r), int(c)
    except ValueError:
        raise UsageError(f"--pixel wants ROW,COL, got {text!r}") from None


def _resolve_configs(args) -> tuple[NetworkConfig, TrainConfig]:
    """Config file plus command line overrides; overrides win."""
    if getattr(args, "config", None):
        net, train = load_run_config(args.config)
    else:
        net, train = NetworkConfig(), TrainConfig()
    if getattr(args, "k", None) is not None:
        net = with_nlg(net, k=args.k)
    if getattr(args, "window", None) is not None:
        net = with_nlg(net, window_radius=args.window)
    if getattr(args, "seed", None) is not None:
        net = replace(net, seed=args.seed)
        train = replace(train, seed=args.seed)
    if getattr(args, "sigma", None) is not None:
        train = replace(train, sigma=args.sigma)
    return net, train


def _show(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


def _write_report(out_dir: str | None, filename: str, text: str) -> None:
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {path}")


# --------------------------------------------------------------------------
# subcommands

def _cmd_train(args) -> int:
    net, train = _resolve_configs(args)
    _show(network_config_to_text(net) + train_config_to_text(train))
    paths = read_manifest(args.manifest)
    result = train_loop(net, train, paths, args.out, resume=args.resume, log=print)
    print(f"final loss {result.final_loss:.6f} after step {result.state.global_step}")
    if not np.isnan(result.state.best_val_psnr):
        print(f"best validation psnr {result.state.best_val_psnr:.3f} dB")
    print(f"checkpoint {result.checkpoint_path}")
    print(f"metrics {result.metrics_path}")
    return 0


def _cmd_denoise(args) -> int:
    model = load_model(args.checkpoint)
    _show(network_config_to_text(model.config))
    print(f"run seed = {args.seed}")
    img = load_image(args.image)
    stem, ext = os.path.splitext(os.path.basename(args.image))
    os.makedirs(args.out, exist_ok=True)
    if args.sigma is not None:
        # treat the input as clean: inject noise, denoise, score both
        noisy = add_awgn(img, NoiseConfig(args.sigma, substream_seed(args.seed, "evalnoise")))
        den = denoise_image(model, noisy, tile=args.tile)
        noisy_path = os.path.join(args.out, f"{stem}-noisy{ext}")
        save_image(GrayImage(np.clip(noisy.pixels, 0.0, 1.0), noisy.name), noisy_path)
        print(f"wrote {noisy_path}")
        print(f"psnr noisy    {psnr(img, noisy):.3f} dB")
        print(f"psnr denoised {psnr(img, den):.3f} dB")
    else:
        den = denoise_image(model, img, tile=args.tile)
    out_path = os.path.join(args.out, f"{stem}-denoised{ext}")
    save_image(den, out_path)
    print(f"wrote {out_path}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    _show(network_config_to_text(model.config))
    print(f"run seed = {args.seed}, sigma = {args.sigma:g}")
    paths = read_manifest(args.manifest)
    report = evaluate_checkpoint(args.checkpoint, paths, args.sigma, args.seed,
                                 tile=args.tile)
    _show(report.to_tsv())
    _write_report(args.out, "report.tsv", report.to_tsv())
    return 0


def _cmd_trace_rf(args) -> int:
    model = load_model(args.checkpoint)
    _show(network_config_to_text(model.config))
    img = load_image(args.image)
    pixel = _parse_pixel(args.pixel)
    masks = trace_receptive_field(model, img, pixel)
    os.makedirs(args.out, exist_ok=True)
    lines = ["layer\tactive_pixels\tfile"]
    for li, mask in enumerate(masks, start=1):
        path = os.path.join(args.out, f"rf-layer{li:02d}.pgm")
        save_image(GrayImage(mask.astype(np.float64), name=f"rf{li}"), path)
        lines.append(f"{li}\t{int(mask.sum())}\t{path}")
    _show("\n".join(lines) + "\n")
    return 0


def _cmd_gradcheck(args) -> int:
    print(f"seed = {args.seed}, instances = {args.instances}, "
          f"fixed_graph = {args.fixed_graph}")
    if not args.fixed_graph:
        print("note: end-to-end check skipped; neighbor selection is discrete, so "
              "finite differences need --fixed-graph to freeze the graphs")
    entries = run_gradient_suite(seed=args.seed, instances=args.instances,
                                 include_end_to_end=args.fixed_graph)
    table = suite_table(entries)
    _show(table)
    _write_report(args.out, "gradcheck.tsv", table)
    if not suite_passed(entries):
        print("gradient check FAILED", file=sys.stderr)
        return 3
    return 0


def _cmd_ablate(args) -> int:
    net, train = _resolve_configs(args)
    k_hi = args.k if args.k is not None else (net.nlg.k or 8)
    if k_hi < 1:
        raise UsageError(f"--k must be >= 1 for an ablation, got {k_hi}")
    _show(network_config_to_text(net) + train_config_to_text(train))
    print(f"pairing k=0 against k={k_hi}")
    paths = read_manifest(args.manifest)
    report = ablation_compare(net, train, paths, args.out, k_values=(0, k_hi),
                              log=print)
    _show(report.to_tsv())
    _write_report(args.out, "ablation.tsv", report.to_tsv())
    return 0


def _cmd_params(args) -> int:
    if args.checkpoint:
        model = load_model(args.checkpoint)
    else:
        net, _ = _resolve_configs(args)
        model = build_model(net, init=False)
    _show(network_config_to_text(model.config))
    census = count_parameters(model)
    lines = ["module\tparameters"]
    for name, n in census.items():
        lines.append(f"{name}\t{n}")
    _show("\n".join(lines) + "\n")
    return 0


# --------------------------------------------------------------------------
# wiring

def _build_parser() -> _Parser:
    p = _Parser(prog="graphdn",
                description="Graph-convolutional image denoiser: training, "
                            "evaluation, and verification tools.")
    sub = p.add_subparsers(dest="command", required=True)

    def common_overrides(sp, sigma=True, seed=True, knobs=True):
        if sigma:
            sp.add_argument("--sigma", type=float, default=None,
                            help="noise standard deviation on the 0..255 scale")
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help="master seed override")
        if knobs:
            sp.add_argument("--k", type=int, default=None,
                            help="neighbors per pixel override")
            sp.add_argument("--window", type=int, default=None,
                            help="search window radius override")

    sp = sub.add_parser("train", help="train a model on a manifest of images")
    sp.add_argument("manifest", help="text file, one image path per line")
    sp.add_argument("--config", help="config file with [network]/[nlg]/[train]")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--resume", help="checkpoint to continue from")
    common_overrides(sp)
    sp.set_defaults(run=_cmd_train)

    sp = sub.add_parser("denoise", help="denoise one image with a checkpoint")
    sp.add_argument("image", help="PGM or PNG image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--sigma", type=float, default=None,
                    help="if set, the input is clean: noise it first and report PSNR")
    sp.add_argument("--seed", type=int, default=0, help="noise seed")
    sp.add_argument("--tile", type=int, default=None,
                    help="process in tiles of this extent (overlap 16, averaged)")
    sp.set_defaults(run=_cmd_denoise)

    sp = sub.add_parser("eval", help="PSNR over a manifest at a noise level")
    sp.add_argument("manifest")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sigma", type=float, default=25.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tile", type=int, default=None)
    sp.add_argument("--out", default=None, help="directory for report.tsv")
    sp.set_defaults(run=_cmd_eval)

    sp = sub.add_parser("trace-rf", help="per-layer receptive field of one pixel")
    sp.add_argument("image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--pixel", required=True, metavar="R,C",
                    help="traced output pixel, row,col")
    sp.add_argument("--out", required=True, help="directory for the mask PGMs")
    sp.set_defaults(run=_cmd_trace_rf)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--instances", type=int, default=3,
                    help="randomized instances per check")
    sp.add_argument("--fixed-graph", action="store_true",
                    help="freeze graphs and include the end-to-end check")
    sp.add_argument("--out", default=None, help="directory for gradcheck.tsv")
    sp.set_defaults(run=_cmd_gradcheck)

    sp = sub.add_parser("ablate", help="paired k=0 vs k=N training and evaluation")
    sp.add_argument("manifest")
    sp.add_argument("--config", help="config file with [network]/[nlg]/[train]")
    sp.add_argument("--out", required=True, help="output directory")
    common_overrides(sp)
    sp.set_defaults(run=_cmd_ablate)

    sp = sub.add_parser("params", help="parameter census for a config or checkpoint")
    sp.add_argument("--config", default=None)
    sp.add_argument("--checkpoint", default=None)
    common_overrides(sp, sigma=False, seed=False)
    sp.set_defaults(run=_cmd_params)

    return p


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.run(args)
    except BrokenPipeError:
        # downstream consumer (e.g. | head) closed stdout; not an error.
        # Point stdout at devnull so interpreter shutdown does not re-raise.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, ConfigError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except GraphDnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
