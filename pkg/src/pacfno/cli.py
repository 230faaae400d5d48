"""Command-line entry point: ``pacfno <command> [--config FILE] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .blocks import FlopsConfig, flops_estimate, pacfno_param_count
from .checkpoint import CheckpointError
from .data import DataError, export_ppm_tree, write_idx
from .evaluation import (
    ConfigError,
    EvalReport,
    RunConfig,
    build_data,
    high_radius_mass,
    load_pacfno,
    run_experiment,
    spectra_report,
    write_spectra_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("pacfno")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    cfg.validate()
    return cfg


def _print_report(report: EvalReport) -> None:
    sys.stdout.write(report.to_csv())


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    data = build_data(cfg)
    root = Path(cfg.out) / "data"
    for split, multi in (("train", data.train), ("val", data.val), ("test", data.test)):
        count = export_ppm_tree(root / "ppm", multi, split)
        src = multi[multi.target]
        pixels = np.round(src.images.mean(axis=1) * 255).astype(np.uint8)
        write_idx(root / f"{split}-images.idx3-ubyte", root / f"{split}-labels.idx1-ubyte", pixels, src.labels)
        print(f"{split}: {count} PPM files, {len(src)} IDX images at {multi.target}x{multi.target}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    _print_report(run_experiment(_config(args), retrain=args.retrain, methods=set()))
    return EXIT_OK


def cmd_train(args) -> int:
    _print_report(run_experiment(_config(args), retrain=args.retrain, methods={"pacfno"}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    _print_report(run_experiment(cfg, methods={"pacfno"}, train_missing=False))
    return EXIT_OK


def cmd_ablate(args) -> int:
    _print_report(run_experiment(_config(args), retrain=args.retrain))
    return EXIT_OK


def _grid(text: str) -> list[tuple[int, int]]:
    try:
        pairs = [tuple(int(v) for v in item.lower().split("x")) for item in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected e.g. 1x1,2x1,2x2") from None
    if any(len(p) != 2 or min(p) < 1 for p in pairs):
        raise ConfigError(f"bad grid {text!r}; expected e.g. 1x1,2x1,2x2")
    return pairs


def cmd_sweep(args) -> int:
    """Sensitivity over (m, n); each cell reuses the shared backbone checkpoint layout."""
    cfg = _config(args)
    merged = EvalReport()
    for m, n in _grid(args.grid):
        cell = replace(cfg, m=m, n=n, out=str(Path(cfg.out) / f"m{m}n{n}"))
        report = run_experiment(cell, retrain=args.retrain, methods={"pacfno"})
        for row in report.rows:
            if row.method == "pacfno":
                merged.add(replace(row, method=f"pacfno-m{m}n{n}"))
    merged.sorted().write_csv(Path(cfg.out) / "sweep.csv")
    _print_report(merged.sorted())
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = _config(args)
    t = cfg.target
    fc = FlopsConfig(cfg.m, cfg.n, (t, t))
    print("resolution,params,gflops,gflops_no_fft")
    for r in sorted(cfg.eval_resolutions):
        full = flops_estimate(fc, (r, r)) / 1e9
        bare = flops_estimate(fc, (r, r), count_transforms=False) / 1e9
        print(f"{r},{pacfno_param_count(cfg.m, cfg.n, t, t)},{full:.6g},{bare:.6g}")
    return EXIT_OK


def cmd_spectra(args) -> int:
    cfg = _config(args)
    path = Path(cfg.out) / "checkpoints" / f"{args.method}.ckpt"
    layer, _ = load_pacfno(path)
    data = build_data(cfg)
    probe = data.test[args.resolution].images[: args.images]
    rows = spectra_report(layer, probe, bins=args.bins)
    dest = Path(cfg.out) / f"spectra-{args.method}-{args.resolution}.csv"
    write_spectra_csv(rows, dest)
    masses = {f"branch{i}": high_radius_mass(rows, f"branch{i}") for i in range(layer.m)}
    print(json.dumps({"csv": str(dest), "high_radius_mass": masses}, indent=2))
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic dataset as PPM trees and IDX files"),
    "pretrain": (cmd_pretrain, "pretrain the backbone and evaluate the resize baselines"),
    "train": (cmd_train, "two-stage training of the configured PAC-FNO"),
    "eval": (cmd_eval, "evaluate saved checkpoints without training"),
    "ablate": (cmd_ablate, "run every configured ablation (stages, parallel vs serial, frequency)"),
    "sweep": (cmd_sweep, "sensitivity sweep over (m, n)"),
    "flops": (cmd_flops, "parameter and FLOP counts at each eval resolution"),
    "spectra": (cmd_spectra, "radial spectra of each branch's first hidden vector"),
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands must not reset flags given before the command name
    default = argparse.SUPPRESS if suppress else None
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", type=Path, default=default, help="JSON run configuration")
    flags.add_argument("--seed", type=int, default=default, help="override the configured seed")
    flags.add_argument("--out", type=Path, default=default, help="output directory")
    flags.add_argument("-v", "--verbose", action="store_true", default=default if suppress else False)
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pacfno", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=fn)
        if name in ("pretrain", "train", "ablate", "sweep"):
            p.add_argument("--retrain", action="store_true", help="ignore existing checkpoints")
        if name == "sweep":
            p.add_argument("--grid", default="1x1,2x1,4x1,2x2", help="comma-separated MxN cells")
        if name == "spectra":
            p.add_argument("--method", default="pacfno")
            p.add_argument("--resolution", type=int, default=32)
            p.add_argument("--images", type=int, default=64)
            p.add_argument("--bins", type=int, default=16)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:  # NumericError included
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
