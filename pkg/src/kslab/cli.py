"""``kslab`` command-line harness.

Subcommands::

    kslab mask      --scheme radial --size 218x170 --r 10 --seed 1 --out masks/
    kslab simulate  [--config desk.ini] [--set data.noise_std=0] --out data/
    kslab train     --data data/ [--scheme radial] --out models/
    kslab recon     --data data/ --method rim --scheme radial --r 5 --checkpoint models/radial/best.rimckpt --out recon/
    kslab compare   --data data/ --method rim --models models/ --out compare/
    kslab pipeline  [--config desk.ini] --out run/

Exit codes: 0 success, 2 infeasible mask or bad arguments, 3 IO failure,
4 missing input artifact, 5 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from kslab import experiment as ex
from kslab import plotting
from kslab import rim as rimlib
from kslab.config import METHODS, load_config, output_path, parse_overrides
from kslab.dataset import MANIFEST, load_split, write_dataset
from kslab.errors import (
    InfeasibleAccelerationError,
    InvalidArgumentError,
    InvalidMaskError,
    NumericalDivergenceError,
    TensorFormatError,
)
from kslab.metrics import evaluate_pair_set
from kslab.sampling import achieved_acceleration, make_mask
from kslab.tensorio import write_png16, write_tensor

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MISSING = 4
EXIT_DIVERGED = 5
SCHEMES = ("rectilinear", "radial")


class MissingArtifactError(Exception):
    """A required input file or directory does not exist."""


def _require(path, what):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _size(text):
    try:
        height, width = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    return height, width


def _out_dir(path):
    out = output_path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _file_id(slice_id):
    return slice_id.replace("/", "_")


def _config(args, extra=None):
    """Defaults < config file (or the dataset's config.ini) < --set < dedicated flags."""
    path = getattr(args, "config", None)
    data = getattr(args, "data", None)
    if path is not None:
        path = _require(path, "config file")
    elif data is not None and (Path(data) / "config.ini").exists():
        path = Path(data) / "config.ini"
    overrides = parse_overrides(getattr(args, "set", None))
    overrides.update(extra or {})
    return load_config(path, overrides)


def _data_root(args):
    root = Path(args.data)
    _require(root / MANIFEST, "dataset manifest")
    return root


def _say(text):
    print(text, flush=True)


# --- commands ----------------------------------------------------------------


def cmd_mask(args):
    height, width = args.size
    mask = make_mask(args.scheme, height, width, args.r, args.seed)
    out = _out_dir(args.out)
    stem = f"mask_{args.scheme}_{height}x{width}_R{args.r:g}_seed{args.seed}"
    write_tensor(out / f"{stem}.tensor", mask.bits)
    write_png16(out / f"{stem}.png", mask.bits, vmin=0, vmax=1)
    _say(f"wrote {out / stem}.tensor and .png ({mask.n_sampled} of {mask.bits.size} samples)")
    _say(f"ACHIEVED_R={achieved_acceleration(mask)!r}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    out = _out_dir(args.out)
    entries = write_dataset(cfg, out)
    counts = {split: sum(e.split == split for e in entries) for split in ("train", "val", "test")}
    _say(f"wrote {len(entries)} slices to {out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def _train_overrides(args):
    extra = {}
    if args.iterations is not None:
        extra[("train", "iterations")] = str(args.iterations)
    return extra


def _train_one(cfg, data, scheme, out, resume=False, stop_after=None, quiet=False):
    every = max(cfg.validate_every, 1)

    def progress(it, loss, result):
        if quiet or (it + 1) % every:
            return
        val = f" val_ssim={result.validation[-1][1]:.4f}" if result.validation else ""
        print(f"  [{scheme}] iteration {it + 1}: loss={loss:.5f}{val}", file=sys.stderr, flush=True)

    if resume:
        _require(out / ex.LAST_CHECKPOINT, "checkpoint to resume from")
    run = ex.train_scheme(cfg, data, scheme, out, resume=resume, stop_after=stop_after, progress=progress)
    plotting.plot_training_curves(run.result.losses, run.result.validation, out / "loss.png", title=f"{scheme} RIM")
    return run


def cmd_train(args):
    cfg = _config(args, _train_overrides(args))
    data = _data_root(args)
    out = _out_dir(args.out)
    schemes = [args.scheme] if args.scheme else list(cfg.schemes)
    for scheme in schemes:
        started = time.perf_counter()
        run = _train_one(cfg, data, scheme, out / scheme, args.resume, args.stop_after)
        losses = run.result.losses
        _say(
            f"{scheme}: {run.result.iteration} iterations in {time.perf_counter() - started:.1f} s, "
            f"final loss {losses[-1] if losses else float('nan'):.5f}, best val SSIM {run.result.best_score:.4f}"
        )
    return EXIT_OK


def _load_model(path):
    return rimlib.load_checkpoint(_require(path, "checkpoint"))


def cmd_recon(args):
    cfg = _config(args)
    data = _data_root(args)
    if args.method == "rim" and args.checkpoint is None:
        raise MissingArtifactError("--checkpoint is required for --method rim")
    model = _load_model(args.checkpoint) if args.method == "rim" else None
    out = _out_dir(args.out)
    items = load_split(data, args.split)
    preds, dumps = [], []
    for item in items:
        mask = ex.eval_mask(cfg, args.scheme, args.r, item.volume)
        pred, trajectory = ex.reconstruct(cfg, args.method, item, mask, model)
        name = _file_id(item.slice_id)
        write_tensor(out / f"{name}_recon.tensor", pred)
        write_png16(out / f"{name}_recon.png", pred)
        write_png16(out / f"{name}_error.png", np.abs(pred - item.target), vmin=0, vmax=float(item.target.max()))
        if args.dump_trajectory and trajectory is not None:
            write_tensor(out / f"{name}_trajectory.tensor", np.stack(trajectory))
            for t, frame in enumerate(trajectory, 1):
                write_png16(out / f"{name}_t{t:02d}.png", frame)
            dumps.append(name)
        preds.append(pred)
    report = evaluate_pair_set(preds, [item.target for item in items], [item.slice_id for item in items])
    report.write_csv(out / "metrics.csv")
    if items:
        label = f"{args.method} {args.scheme} R={args.r:g}"
        plotting.plot_error_panel(items[0].target, {label: preds[0]}, out / "error_panel.png", title=items[0].slice_id)
    m, s = report.mean, report.std
    _say(
        f"{len(items)} slices: PSNR {m['psnr']:.2f} ± {s['psnr']:.2f} dB, "
        f"SSIM {m['ssim']:.4f} ± {s['ssim']:.4f}, VIF {m['vif']:.4f} ± {s['vif']:.4f}"
    )
    return EXIT_OK


def _compare_models(args):
    paths = {"rectilinear": args.rectilinear_checkpoint, "radial": args.radial_checkpoint}
    for scheme in SCHEMES:
        if paths[scheme] is None and args.models is not None:
            paths[scheme] = Path(args.models) / scheme / ex.BEST_CHECKPOINT
        if paths[scheme] is None:
            raise MissingArtifactError(f"no {scheme} checkpoint given (--{scheme}-checkpoint or --models)")
    return {scheme: _load_model(path) for scheme, path in paths.items()}


def run_compare(cfg, data, method, out, models=None, same_masks=None):
    """Write the comparison table and figure for one method; returns (rows, ordering)."""
    items = load_split(data, "test")
    if not items:
        raise MissingArtifactError(f"dataset {data} has no test slices")
    rows = ex.compare(cfg, items, method, models, same_masks)
    verdict = ex.ordering(rows)
    title = f"{method} on {len(items)} test slices"
    (out / "table.csv").write_text(ex.table_csv(rows), encoding="utf-8")
    (out / "table.txt").write_text(ex.table_text(rows, title), encoding="utf-8")
    for row in rows:
        row.report.write_csv(out / ex.row_filename(row))
    plotting.plot_comparison(rows, out / "comparison.png", title=title)
    example = items[0]
    panel = {}
    for row in rows:
        panel[f"{row.scheme} R={float(row.acceleration):g}"] = row.predictions[0]
    plotting.plot_error_panel(example.target, panel, out / "error_panel.png", title=f"{method}: {example.slice_id}")
    return rows, verdict


def cmd_compare(args):
    cfg = _config(args)
    data = _data_root(args)
    models = _compare_models(args) if args.method == "rim" else None
    out = _out_dir(args.out)
    rows, verdict = run_compare(cfg, data, args.method, out, models, args.same_masks)
    _say(ex.table_text(rows, f"{args.method} on the test split").rstrip())
    _say(f"ORDERING={verdict}")
    return EXIT_OK


def cmd_pipeline(args):
    """Simulate, compare zero-filled baselines, train one RIM per scheme, compare RIMs."""
    cfg = _config(args, _train_overrides(args))
    out = _out_dir(args.out)
    timings = {}
    started = time.perf_counter()

    t0 = time.perf_counter()
    data = out / "data"
    write_dataset(cfg, data)
    timings["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    zf_dir = out / "compare-zero-filled"
    zf_dir.mkdir(exist_ok=True)
    _, zf_verdict = run_compare(cfg, data, "zero-filled", zf_dir)
    timings["zero-filled compare"] = time.perf_counter() - t0
    _say(f"zero-filled: ORDERING={zf_verdict}")

    models = {}
    for scheme in SCHEMES:
        t0 = time.perf_counter()
        models[scheme] = _train_one(cfg, data, scheme, out / "models" / scheme, quiet=args.quiet).best
        timings[f"train {scheme}"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rim_dir = out / "compare-rim"
    rim_dir.mkdir(exist_ok=True)
    rows, verdict = run_compare(cfg, data, "rim", rim_dir, models)
    timings["rim compare"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - started

    _say(ex.table_text(rows, "rim on the test split").rstrip())
    for name, seconds in timings.items():
        _say(f"time {name}: {seconds:.1f} s")
    _say(f"zero-filled: ORDERING={zf_verdict}")
    _say(f"ORDERING={verdict}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_config(p):
    p.add_argument("--config", help="INI config file (default: the dataset's config.ini when --data is given)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")


def build_parser():
    parser = argparse.ArgumentParser(prog="kslab", description="Rectilinear vs radial k-space subsampling lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="generate one subsampling mask")
    p.add_argument("--scheme", choices=SCHEMES, required=True)
    p.add_argument("--size", type=_size, required=True, help="HxW")
    p.add_argument("--r", type=float, required=True, help="target acceleration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("simulate", help="synthesize a multicoil phantom dataset")
    _add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one RIM per scheme")
    _add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", choices=SCHEMES, help="train only this scheme")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", action="store_true", help="continue from <out>/<scheme>/last.rimckpt")
    p.add_argument("--stop-after", type=int, help="stop at this iteration, as if interrupted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct a split and score it")
    _add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--scheme", choices=SCHEMES, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--dump-trajectory", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("compare", help="rectilinear vs radial table on the test split")
    _add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, default="rim")
    p.add_argument("--models", help="directory holding <scheme>/best.rimckpt")
    p.add_argument("--rectilinear-checkpoint")
    p.add_argument("--radial-checkpoint")
    p.add_argument("--same-masks", choices=SCHEMES, help="evaluate both rows with this scheme's masks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("pipeline", help="simulate, train both schemes and compare")
    _add_config(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--quiet", action="store_true", help="no per-iteration progress")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleAccelerationError as exc:
        hint = f" (nearest feasible R {exc.nearest_acceleration:g})" if exc.nearest_acceleration else ""
        print(f"error: {exc}{hint}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidArgumentError, InvalidMaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalDivergenceError as exc:
        print(f"error: {exc}; last finite iteration {exc.last_finite_iteration}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, TensorFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
