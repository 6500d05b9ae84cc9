"""Command-line entry point.

One binary, subcommand style. A config document is the single source of
architecture truth; individual keys can be overridden by flags. Exit codes:
0 success, 1 usage error, 2 check or validation failure, 3 runtime failure
(missing files, aborted training).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import (CONFIG_KEYS, CUNetConfig, DenseUNetConfig, format_config,
                     format_dense_config, parse_config, parse_dense_config)
from .fileio import atomic_write_text
from .gradcheck import finite_diff_check
from .graph import (CalibrationError, build_cu_net, build_dense_unet,
                    calibrate_dense, forward, param_breakdown, param_count,
                    to_dot)
from .supervision import total_loss
from .synth import DatasetReader, SubsetReader, default_sigma, write_dataset
from .tensor import Tensor
from .trainer import build_from_checkpoint, evaluate, train

__all__ = ["main", "dispatch"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here reserves 2 for
    failed checks, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# config resolution

_OVERRIDE_FLAGS = {k: k.replace("_", "-") for k in CONFIG_KEYS}


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="F", help="config document (key = value lines)")
    for key, flag in _OVERRIDE_FLAGS.items():
        if key == "coupling":
            p.add_argument("--coupling", choices=["true", "false"],
                           help="override: cross-cascade feature reuse on/off")
        else:
            p.add_argument(f"--{flag}", dest=key, type=int, metavar="N",
                           help=f"override config key {key}")


def _config_text(args) -> str | None:
    if not args.config:
        return None
    with open(args.config, "r", encoding="utf-8") as fh:
        return fh.read()


def _is_dense_doc(text: str) -> bool:
    keys = {line.partition("=")[0].strip()
            for line in text.splitlines() if "=" in line}
    return "arch" in keys


def _resolve_cu_config(args, text: str | None) -> CUNetConfig:
    base = parse_config(text) if text is not None else CUNetConfig()
    overrides = {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        overrides[key] = (value == "true") if key == "coupling" else value
    cfg = dataclasses.replace(base, **overrides)
    cfg.validate()
    return cfg


def _print_config(cfg) -> None:
    text = (format_dense_config(cfg) if isinstance(cfg, DenseUNetConfig)
            else format_config(cfg))
    sys.stdout.write(text)
    print()


def _dense_template(cfg: CUNetConfig) -> DenseUNetConfig:
    return DenseUNetConfig(layers=2, growth=16, width=32, depth=cfg.depth,
                           keypoints=cfg.keypoints, in_channels=cfg.in_channels,
                           input_res=cfg.input_res, seed=cfg.seed)


def _build_for_args(args, dtype=np.float32, init=True):
    """Resolve the network named by --config/--arch/override flags."""
    text = _config_text(args)
    arch = getattr(args, "arch", None)
    if text is not None and _is_dense_doc(text):
        if arch not in (None, "dense"):
            raise ValueError(f"--arch {arch} conflicts with a dense config document")
        cfg = parse_dense_config(text)
        return build_dense_unet(cfg, dtype=dtype, init=init)
    cfg = _resolve_cu_config(args, text)
    if arch == "cu":
        cfg = dataclasses.replace(cfg, coupling=True)
    elif arch == "stacked":
        cfg = dataclasses.replace(cfg, coupling=False)
    elif arch == "dense":
        dense_cfg = calibrate_dense(cfg, _dense_template(cfg), base_u=2)
        return build_dense_unet(dense_cfg, dtype=dtype, init=init)
    return build_cu_net(cfg, dtype=dtype, init=init)


def _split_readers(args) -> tuple:
    """Training/validation readers: --val-data if given, else a 90/10 holdout."""
    base = DatasetReader(args.data)
    if getattr(args, "val_data", None):
        return base, DatasetReader(args.val_data)
    if len(base) < 2:
        raise ValueError("train: dataset too small to hold out a validation split; "
                         "provide --val-data")
    n_val = max(1, len(base) // 10)
    cut = len(base) - n_val
    print(f"holding out the last {n_val} of {len(base)} samples for validation")
    return SubsetReader(base, range(cut)), SubsetReader(base, range(cut, len(base)))


# ---------------------------------------------------------------------------
# subcommands

def _cmd_count_params(args) -> int:
    graph = _build_for_args(args, init=False)
    _print_config(graph.config)
    for prefix, count in param_breakdown(graph).items():
        print(f"{prefix:12s} {count:12d}")
    print(f"{'TOTAL':12s} {param_count(graph):12d}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    graph = _build_for_args(args, init=False)
    _print_config(graph.config)
    atomic_write_text(args.dot, to_dot(graph))
    coupling = len(graph.coupling_edges())
    print(f"nodes {len(graph.nodes)}  edges {len(graph.edges)}  "
          f"coupling edges {coupling}  heads {len(graph.heads)}  "
          f"params {param_count(graph)}")
    print(f"wrote {args.dot}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    text = _config_text(args)
    cfg = _resolve_cu_config(args, text)
    _print_config(cfg)
    graph = build_cu_net(cfg, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    x = Tensor(rng.standard_normal((2, cfg.in_channels, cfg.input_res,
                                    cfg.input_res)))
    target = Tensor(rng.random((2, cfg.keypoints, cfg.heat_res, cfg.heat_res)))

    def objective(trace=None):
        heads = forward(graph, x, mode="train", update_stats=False,
                        kink_trace=trace)
        return total_loss(heads, target)

    report = finite_diff_check(objective, graph.params, epsilon=args.epsilon,
                               tol=args.tol, samples_per_group=args.samples,
                               rng=np.random.Generator(np.random.PCG64(cfg.seed + 2)))
    print(report)
    if not report.passed:
        fails = report.failures()
        blocked = sum(1 for g in fails if g.kink_blocked)
        parts = []
        if len(fails) - blocked:
            parts.append(f"{len(fails) - blocked} parameter group(s) above "
                         f"tol {args.tol:g}")
        if blocked:
            parts.append(f"{blocked} group(s) could not be probed without "
                         f"crossing activation gates (try a smaller config "
                         f"or --epsilon)")
        print("gradient check FAILED: " + "; ".join(parts), file=sys.stderr)
        return EXIT_CHECK
    print(f"gradient check passed: max relative error {report.max_rel_err:.3e}")
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    sigma = args.sigma if args.sigma is not None else default_sigma(args.input_res // 4)
    print(f"out = {args.out}\ncount = {args.count}\nseed = {args.seed}\n"
          f"input_res = {args.input_res}\nsigma = {sigma!r}\n")
    write_dataset(args.out, args.count, args.seed, args.input_res, sigma)
    print(f"wrote {args.count} samples to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    text = _config_text(args)
    cfg = _resolve_cu_config(args, text)
    _print_config(cfg)
    graph = build_cu_net(cfg)
    train_reader, val_reader = _split_readers(args)
    result = train(graph, train_reader, val_reader, args.out,
                   epochs=args.epochs, batch_size=args.batch_size,
                   initial_lr=args.lr, seed=cfg.seed,
                   augment_data=args.augment, alpha=args.alpha,
                   ref_kind=args.ref, target_metric=args.target_pck,
                   log_fn=print)
    if result.aborted:
        print(f"training aborted: {result.abort_reason}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best {args.ref}@{args.alpha:g} {result.best_metric:.4f} at epoch "
          f"{result.best_epoch}; checkpoint {result.checkpoint_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    graph, ckpt = build_from_checkpoint(args.checkpoint)
    sys.stdout.write(ckpt.config_text)
    print()
    reader = DatasetReader(args.data)
    result = evaluate(graph, reader, alpha=args.alpha, kind=args.ref)
    csv = result.to_csv()
    if args.out == "-":
        sys.stdout.write(csv)
    else:
        atomic_write_text(args.out, csv)
        print(f"wrote {args.out}")
    print(result)
    return EXIT_OK


def _cmd_compare(args) -> int:
    text = _config_text(args)
    cfg = _resolve_cu_config(args, text)
    coupled_cfg = dataclasses.replace(cfg, coupling=True)
    stacked_cfg = dataclasses.replace(cfg, coupling=False)
    dense_cfg = calibrate_dense(coupled_cfg, _dense_template(coupled_cfg), base_u=2)

    builds = [
        ("coupled", lambda: build_cu_net(coupled_cfg)),
        ("stacked", lambda: build_cu_net(stacked_cfg)),
        ("dense", lambda: build_dense_unet(dense_cfg)),
    ]
    # Shape-only builds: counting must not pay for initialization.
    counts = {
        "coupled": param_count(build_cu_net(coupled_cfg, init=False)),
        "stacked": param_count(build_cu_net(stacked_cfg, init=False)),
        "dense": param_count(build_dense_unet(dense_cfg, init=False)),
    }
    gap = abs(counts["dense"] - counts["coupled"]) / counts["coupled"]
    print(f"param counts: coupled {counts['coupled']}  stacked {counts['stacked']}  "
          f"dense {counts['dense']}  (dense/coupled gap {gap:.3%})")
    if gap > 0.02:
        print("compare: calibrated dense network misses the 2% parameter window",
              file=sys.stderr)
        return EXIT_CHECK

    train_reader, val_reader = _split_readers(args)
    scores = {}
    for name, make in builds:
        print(f"\n=== {name} ===")
        _print_config(dense_cfg if name == "dense" else
                      (coupled_cfg if name == "coupled" else stacked_cfg))
        graph = make()
        result = train(graph, train_reader, val_reader,
                       os.path.join(args.out, name), epochs=args.epochs,
                       batch_size=args.batch_size, seed=cfg.seed,
                       alpha=args.alpha, ref_kind=args.ref, log_fn=print)
        if result.aborted:
            print(f"compare: {name} training aborted: {result.abort_reason}",
                  file=sys.stderr)
            return EXIT_RUNTIME
        scores[name] = result.best_metric

    lines = ["arch,params,val_pck"]
    for name in ("coupled", "stacked", "dense"):
        lines.append(f"{name},{counts[name]},{scores[name]:.6f}")
    out_csv = os.path.join(args.out, "comparison.csv")
    atomic_write_text(out_csv, "\n".join(lines) + "\n")
    print(f"\nwrote {out_csv}")

    order = sorted(scores, key=scores.get, reverse=True)
    print(f"final {args.ref}@{args.alpha:g}: "
          + "  ".join(f"{n} {scores[n]:.4f}" for n in order))
    print(f"gap direction: {order[0]} leads (note: desk-scale synthetic data; "
          f"ordering is reported, not asserted)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly

def build_parser() -> _Parser:
    parser = _Parser(prog="cunet",
                     description="Coupled U-Net cascades: build, inspect, "
                                 "train, and evaluate on synthetic keypoints.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("count-params", help="print parameter totals by section")
    _add_override_flags(p)
    p.add_argument("--arch", choices=["cu", "stacked", "dense"],
                   help="cu/stacked force coupling on/off; dense counts the "
                        "parameter-matched dense network")
    p.set_defaults(func=_cmd_count_params)

    p = sub.add_parser("inspect", help="write the layer graph in DOT form")
    _add_override_flags(p)
    p.add_argument("--arch", choices=["cu", "stacked", "dense"])
    p.add_argument("--dot", required=True, metavar="OUT", help="output DOT path")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("grad-check",
                       help="finite-difference check of the full graph (binary64)")
    _add_override_flags(p)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=20,
                   help="coordinates sampled per parameter group")
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("gen-data", help="generate a synthetic keypoint dataset")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", required=True, type=int, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="S")
    p.add_argument("--input-res", type=int, default=64, metavar="R")
    p.add_argument("--sigma", type=float, default=None,
                   help="heatmap Gaussian width (default: scales with resolution)")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated dataset")
    _add_override_flags(p)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--val-data", metavar="DIR",
                   help="separate validation set (default: 10%% holdout)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2.5e-4)
    p.add_argument("--augment", action="store_true",
                   help="random scale/rotation/flip on training samples")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--ref", choices=["pckh", "pck"], default="pckh")
    p.add_argument("--target-pck", type=float, default=None,
                   help="stop once validation reaches this score")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, metavar="C")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--alpha", type=float, default=0.5, metavar="A")
    p.add_argument("--ref", choices=["pckh", "pck"], default="pckh")
    p.add_argument("--out", default="metrics.csv", metavar="FILE",
                   help="metrics CSV path, or - for stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare",
                       help="train coupled vs stacked vs parameter-matched dense")
    _add_override_flags(p)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--val-data", metavar="DIR")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--ref", choices=["pckh", "pck"], default="pckh")
    p.set_defaults(func=_cmd_compare)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except CalibrationError as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    return dispatch(argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
