"""Command-line entry point: enhance, eval, train, gradcheck, bench-scan, ablate.

Exit codes: 0 success, 1 usage/config/shape errors, 2 I/O errors, 3 numeric failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import SCAN_TOL, bench_scan, single_lane, write_bench_csv
from .errors import ConfigError, DimensionError, ImageIOError, NumericError, RetinexSSMError, UsageError
from .gradsuite import run_suite
from .io import load_checkpoint, load_config, load_image, save_checkpoint, save_image
from .metrics import evaluate_pair, mean_report
from .model import VARIANTS, ModelWeights, apply_variant, build_model, model_forward
from .train import train_loop

logger = logging.getLogger("retinex_ssm")


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; 2 is reserved for I/O here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _enhance_tensor(weights: ModelWeights, path: Path):
    image, size = load_image(path)
    out = model_forward(image, weights)
    if not np.isfinite(out.data).all():
        raise NumericError(f"{path}: non-finite model output")
    return out, size


def _check_config_matches(weights: ModelWeights, config_path) -> None:
    if config_path is None:
        return
    model_cfg, _ = load_config(config_path)
    # the seed only affects initialisation, not the architecture
    model_cfg = dataclasses.replace(model_cfg, seed=weights.config.seed)
    if model_cfg != weights.config:
        diffs = [
            f.name
            for f in dataclasses.fields(model_cfg)
            if getattr(model_cfg, f.name) != getattr(weights.config, f.name)
        ]
        raise ConfigError(f"--config disagrees with the checkpoint on: {', '.join(diffs)}")


def cmd_enhance(args) -> int:
    weights = load_checkpoint(args.ckpt)
    _check_config_matches(weights, args.config)
    out, size = _enhance_tensor(weights, Path(args.input))
    save_image(out, args.output, size)
    return 0


def _png_names(directory: Path) -> set[str]:
    if not directory.is_dir():
        raise ImageIOError(f"{directory}: not a directory")
    return {p.name for p in directory.iterdir() if p.suffix.lower() == ".png"}


def _matched_pairs(low_dir, gt_dir) -> list[str]:
    low_dir, gt_dir = Path(low_dir), Path(gt_dir)
    low, gt = _png_names(low_dir), _png_names(gt_dir)
    for name in sorted(low ^ gt):
        side = "gt" if name in low else "low"
        print(f"skipping {name}: no {side} counterpart", file=sys.stderr)
    names = sorted(low & gt)
    if not names:
        raise ImageIOError(f"no matching PNG filenames between {low_dir} and {gt_dir}")
    return names


def _run_eval(weights: ModelWeights, args) -> int:
    names = _matched_pairs(args.low_dir, args.gt_dir)
    reports = []
    for name in names:
        pred, size = _enhance_tensor(weights, Path(args.low_dir) / name)
        gt, gt_size = load_image(Path(args.gt_dir) / name)
        if size != gt_size:
            print(f"skipping {name}: low {size} and gt {gt_size} sizes differ", file=sys.stderr)
            continue
        h, w = size
        reports.append(evaluate_pair(name, pred.data[0, :, :h, :w], gt.data[0, :, :h, :w]))
    if not reports:
        raise ImageIOError("no evaluable image pairs")
    rows = reports + [mean_report(reports)]
    try:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr", "ssim", "rmse"])
            for r in rows:
                writer.writerow([r.name, repr(r.psnr_db), repr(r.ssim), repr(r.rmse)])
    except OSError as exc:
        raise ImageIOError(f"{args.out}: cannot write CSV ({exc})") from None
    mean = rows[-1]
    print(f"{len(reports)} pairs  PSNR {mean.psnr_db:.3f} dB  SSIM {mean.ssim:.4f}  RMSE {mean.rmse:.3f}")
    return 0


def cmd_eval(args) -> int:
    weights = load_checkpoint(args.ckpt)
    variant = getattr(args, "variant", None)
    if variant and apply_variant(weights.config, variant) != weights.config:
        raise ConfigError(f"checkpoint {args.ckpt} was not built as variant {variant!r}")
    return _run_eval(weights, args)


def _load_dataset(low_dir, gt_dir) -> list[tuple[np.ndarray, np.ndarray]]:
    dataset = []
    for name in _matched_pairs(low_dir, gt_dir):
        low, low_size = load_image(Path(low_dir) / name)
        gt, gt_size = load_image(Path(gt_dir) / name)
        if low_size != gt_size:
            raise DimensionError(f"{name}: low {low_size} and gt {gt_size} sizes differ")
        dataset.append((low.data[0], gt.data[0]))
    return dataset


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config(args.config)
    if args.seed is not None:
        model_cfg = dataclasses.replace(model_cfg, seed=args.seed)
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    variant = getattr(args, "variant", None)
    if variant:
        model_cfg = apply_variant(model_cfg, variant)
    dataset = _load_dataset(args.low_dir, args.gt_dir)
    result = train_loop(dataset, build_model(model_cfg), model_cfg, train_cfg, trace_path=args.trace)
    if not np.isfinite(result.losses).all():
        raise NumericError("training produced a non-finite loss")
    save_checkpoint(args.out_ckpt, result.weights)
    print(f"trained {train_cfg.total_steps} steps, final L1 {result.losses[-1]:.5f}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_suite(args.seed or 0)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 3


def cmd_bench_scan(args) -> int:
    if args.length < 1 or args.d_state < 1 or args.trials < 1:
        raise UsageError("--length, --d-state and --trials must be positive")
    rows = bench_scan(args.length, args.d_state, args.trials, args.seed or 0)
    try:
        write_bench_csv(rows, args.out)
    except OSError as exc:
        raise ImageIOError(f"{args.out}: cannot write CSV ({exc})") from None
    worst = max(r.max_abs_diff for r in rows)
    for kernel in ("sequential", "parallel"):
        times = [r.ns_per_token for r in rows if r.kernel == kernel]
        print(f"{kernel:<10} median {np.median(times):.0f} ns/token")
    print(f"max |sequential - parallel| = {worst:.3e}")
    if worst > SCAN_TOL:
        print(f"kernel disagreement above {SCAN_TOL:g}", file=sys.stderr)
        return 3
    return 0


def _add_seed(p) -> None:
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: from config, else 0)")


def _add_eval_args(p) -> None:
    p.add_argument("--low-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    _add_seed(p)


def _add_train_args(p) -> None:
    p.add_argument("--low-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--trace", default=None, help="CSV loss trace (step,lr,l1)")
    _add_seed(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retinex-ssm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("enhance", help="enhance one PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", default=None)
    _add_seed(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM/RMSE over matched low/gt directories")
    _add_eval_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train from low/gt directories")
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_seed(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench-scan", help="sequential vs parallel scan timing and agreement")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--d-state", type=int, required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=cmd_bench_scan)

    p = sub.add_parser("ablate", help="train or eval an ablation variant")
    p.add_argument("--variant", required=True, choices=sorted(VARIANTS))
    inner = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = inner.add_parser("train")
    _add_train_args(q)
    q.set_defaults(func=cmd_train)
    q = inner.add_parser("eval")
    _add_eval_args(q)
    q.set_defaults(func=cmd_eval)
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        with single_lane():
            return args.func(args)
    except RetinexSSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
