"""Experiment logic shared by the command-line harness: evaluation masks,
reconstruction by method, the scheme comparison table and RIM training runs."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kslab import rim as rimlib
from kslab.classical import MapObjective, solve_map_cg, zero_filled_rss
from kslab.dataset import load_split
from kslab.errors import InvalidArgumentError
from kslab.forward import MulticoilKSpace, NllConfig, estimate_sensitivities_from_acs
from kslab.metrics import MetricsReport, evaluate_pair_set, ssim
from kslab.sampling import Scheme, apply_mask, extract_acs, make_mask

SCHEME_CODES = {Scheme.RECTILINEAR.value: 1, Scheme.RADIAL.value: 2}
SCHEME_LABELS = {Scheme.RECTILINEAR.value: "Rectilinear", Scheme.RADIAL.value: "Radial"}
BEST_CHECKPOINT = "best.rimckpt"
LAST_CHECKPOINT = "last.rimckpt"


def derived_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def eval_mask(cfg, scheme, acceleration, volume):
    """Fixed mask of one volume for evaluation (validation or test).

    The seed depends on the scheme, acceleration and volume only, so two runs
    asked for the same scheme get the same masks.
    """
    seed = derived_seed(cfg.mask_seed, SCHEME_CODES[scheme], round(float(acceleration) * 1000), volume)
    return make_mask(scheme, cfg.height, cfg.width, acceleration, seed)


def subsample(item, mask):
    return apply_mask(mask, MulticoilKSpace(item.kspace))


def sensitivities_for(cfg, item, y, mask):
    if cfg.sensitivities == "true":
        return item.sensitivities
    return estimate_sensitivities_from_acs(y, extract_acs(mask))


def reconstruct(cfg, method, item, mask, model=None):
    """Magnitude reconstruction of one slice, plus the RIM trajectory (or None)."""
    if method not in ("zero-filled", "map-cg", "rim"):
        raise InvalidArgumentError(f"unknown method {method!r}")
    y = subsample(item, mask)
    if method == "zero-filled":
        return zero_filled_rss(y), None
    maps = sensitivities_for(cfg, item, y, mask)
    if method == "map-cg":
        obj = MapObjective(reg_lambda=cfg.map_lambda, max_iters=cfg.map_iters, tol=cfg.map_tol)
        return np.abs(solve_map_cg(y, maps, mask, obj).x), None
    if model is None:
        raise InvalidArgumentError("the rim method needs a model")
    trajectory = [np.abs(x) for x in rimlib.rim_infer(model, y, maps, mask)]
    return trajectory[-1], trajectory


@dataclass(frozen=True, eq=False)
class RowResult:
    acceleration: float
    scheme: str
    report: MetricsReport
    predictions: list


def evaluate(cfg, items, method, scheme, acceleration, model=None, mask_scheme=None):
    """Reconstruct and score every slice; ``mask_scheme`` overrides the mask family."""
    mask_scheme = mask_scheme or scheme
    preds = [reconstruct(cfg, method, item, eval_mask(cfg, mask_scheme, acceleration, item.volume), model)[0]
             for item in items]
    report = evaluate_pair_set(preds, [item.target for item in items], [item.slice_id for item in items])
    return RowResult(acceleration, scheme, report, preds)


def compare(cfg, items, method, models=None, same_masks=None):
    """Table rows for every acceleration and both schemes, R-major.

    ``models`` maps scheme to a RIM model (needed for ``method='rim'``);
    ``same_masks`` makes both rows of an acceleration use that scheme's masks.
    """
    models = models or {}
    rows = []
    for acceleration in cfg.accelerations:
        for scheme in (Scheme.RECTILINEAR.value, Scheme.RADIAL.value):
            rows.append(evaluate(cfg, items, method, scheme, acceleration, models.get(scheme), same_masks))
    return rows


def ordering(rows):
    """``RADIAL`` if radial mean SSIM strictly exceeds rectilinear at every R, else ``MIXED``."""
    by_r = {}
    for row in rows:
        by_r.setdefault(row.acceleration, {})[row.scheme] = row.report.mean["ssim"]
    radial_wins = all(
        pair.get(Scheme.RADIAL.value, -math.inf) > pair.get(Scheme.RECTILINEAR.value, math.inf) for pair in by_r.values()
    )
    return "RADIAL" if radial_wins else "MIXED"


def _r_label(acceleration):
    value = float(acceleration)
    return str(int(value)) if value.is_integer() else repr(value)


def table_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["acceleration", "scheme", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "vif_mean", "vif_std"])
    for row in rows:
        m, s = row.report.mean, row.report.std
        writer.writerow([_r_label(row.acceleration), row.scheme] + [repr(v) for k in ("psnr", "ssim", "vif") for v in (m[k], s[k])])
    return buf.getvalue()


def table_text(rows, title=""):
    header = ("R", "Scheme", "PSNR (dB)", "SSIM", "VIF")
    lines = []
    for row in rows:
        m, s = row.report.mean, row.report.std
        lines.append((
            _r_label(row.acceleration),
            SCHEME_LABELS[row.scheme],
            f"{m['psnr']:.2f} ± {s['psnr']:.2f}",
            f"{m['ssim']:.4f} ± {s['ssim']:.4f}",
            f"{m['vif']:.4f} ± {s['vif']:.4f}",
        ))
    widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [title] if title else []
    out.append(fmt.format(*header))
    out.append("  ".join("-" * w for w in widths))
    out.extend(fmt.format(*r) for r in lines)
    return "\n".join(out) + "\n"


def row_filename(row):
    return f"metrics_R{_r_label(row.acceleration)}_{row.scheme}.csv"


# --- training --------------------------------------------------------------


def training_samples(cfg, items):
    maps_fixed = cfg.sensitivities == "true"
    return [
        rimlib.TrainingSample(item.kspace, item.target, item.volume, item.sensitivities if maps_fixed else None)
        for item in items
    ]


def validation_subset(items, count):
    """Up to ``count`` slices spread evenly over the validation set."""
    if count <= 0 or not items:
        return []
    if count >= len(items):
        return list(items)
    picks = np.linspace(0, len(items) - 1, count).round().astype(int)
    return [items[i] for i in sorted(set(picks))]


def validation_score(cfg, model, scheme, items):
    """Mean SSIM of the final RIM estimate over the slices and accelerations."""
    scores = [
        ssim(reconstruct(cfg, "rim", item, eval_mask(cfg, scheme, r, item.volume), model)[0], item.target)
        for r in cfg.accelerations
        for item in items
    ]
    return float(np.mean(scores))


@dataclass(eq=False)
class TrainingRun:
    result: rimlib.TrainResult
    best: rimlib.RimModel
    initial: rimlib.RimModel


def initial_model(cfg, scheme, samples):
    model = rimlib.init_model(cfg.rim, seed=cfg.init_seed)
    if cfg.rim.normalize_inputs:
        model.input_scale = rimlib.estimate_input_scale(samples, scheme, cfg.schedule())
    return model


def train_scheme(cfg, data_root, scheme, out_dir, resume=False, stop_after=None, progress=None):
    """Train a RIM for one scheme, writing checkpoints and curves to ``out_dir``.

    ``best.rimckpt`` holds the best validation-SSIM model (the final model if
    validation never ran) and ``last.rimckpt`` the latest model with optimizer
    state. With ``resume`` the run continues from ``last.rimckpt``;
    ``stop_after`` ends the run early at that iteration, as an interruption would.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = training_samples(cfg, load_split(data_root, "train"))
    if not samples:
        raise InvalidArgumentError("the dataset has no training slices")
    val_items = validation_subset(load_split(data_root, "val"), cfg.validation_slices)

    last_path, best_path = out_dir / LAST_CHECKPOINT, out_dir / BEST_CHECKPOINT
    if resume:
        model, extra = rimlib.parse_checkpoint(last_path.read_bytes())
        best_model = rimlib.load_checkpoint(best_path) if best_path.exists() else None
        state = rimlib.restore_training_state(model, extra, best_model)
        initial = None
    else:
        initial = initial_model(cfg, scheme, samples)
        state = None

    schedule = cfg.schedule()
    if stop_after is not None:
        schedule = dataclasses.replace(schedule, iterations=min(stop_after, schedule.iterations))

    def validate(model):
        return validation_score(cfg, model, scheme, val_items)

    def on_iteration(it, loss, result):
        if progress is not None:
            progress(it, loss, result)
        if cfg.validate_every and result.iteration % cfg.validate_every == 0:
            _save_state(last_path, result)

    start_model = initial if initial is not None else state.model
    result = rimlib.rim_train(
        start_model,
        samples,
        scheme,
        schedule,
        NllConfig(),
        resume=state,
        validate=validate if val_items else None,
        validate_every=cfg.validate_every,
        on_iteration=on_iteration,
    )
    _save_state(last_path, result)
    best = result.best_model if result.best_model is not None else result.model
    rimlib.save_checkpoint(best_path, best)
    if initial is not None:
        rimlib.save_checkpoint(out_dir / "initial.rimckpt", initial)
    write_curves(out_dir, result, schedule)
    return TrainingRun(result, best, initial)


def _save_state(path, result):
    rimlib.save_checkpoint(path, result.model, rimlib.training_state_tensors(result))


def write_curves(out_dir, result, schedule):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "loss", "learning_rate"])
    for it, loss in enumerate(result.losses):
        writer.writerow([it, repr(float(loss)), repr(rimlib.learning_rate(schedule, it))])
    (Path(out_dir) / "loss.csv").write_text(buf.getvalue(), encoding="utf-8")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "val_ssim"])
    for it, score in result.validation:
        writer.writerow([it, repr(float(score))])
    (Path(out_dir) / "validation.csv").write_text(buf.getvalue(), encoding="utf-8")


def read_loss_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [float(r[1]) for r in rows]
