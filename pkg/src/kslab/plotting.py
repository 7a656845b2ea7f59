"""Report figures rendered with matplotlib's Agg backend.

Figures are written without the software/date metadata so re-running a command
reproduces the PNG byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEME_COLORS = {"rectilinear": "#4c72b0", "radial": "#dd8452"}
METRIC_TITLES = (("psnr", "PSNR (dB)"), ("ssim", "SSIM"), ("vif", "VIF"))


def save_figure(fig, path, dpi=100):
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def plot_comparison(rows, path, title=None):
    """Grouped bars (mean with std whiskers) per acceleration and scheme."""
    accelerations = sorted({float(r.acceleration) for r in rows})
    schemes = [s for s in SCHEME_COLORS if any(r.scheme == s for r in rows)]
    lookup = {(float(r.acceleration), r.scheme): r.report for r in rows}
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    x = np.arange(len(accelerations))
    width = 0.8 / max(len(schemes), 1)
    for ax, (key, label) in zip(axes, METRIC_TITLES):
        for i, scheme in enumerate(schemes):
            means = [lookup[(r, scheme)].mean[key] for r in accelerations]
            stds = [lookup[(r, scheme)].std[key] for r in accelerations]
            ax.bar(x + (i - (len(schemes) - 1) / 2) * width, means, width, yerr=stds, capsize=3,
                   color=SCHEME_COLORS[scheme], label=scheme.capitalize())
        ax.set_xticks(x)
        ax.set_xticklabels([f"R={r:g}" for r in accelerations])
        ax.set_title(label)
        ax.grid(axis="y", alpha=0.3)
    axes[0].legend(frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    save_figure(fig, path)


def plot_training_curves(losses, validation, path, title=None):
    """Per-iteration loss with a 20-iteration running mean, and validation SSIM."""
    fig, ax = plt.subplots(figsize=(7, 3.6))
    losses = np.asarray(losses, dtype=float)
    if losses.size:
        ax.plot(np.arange(losses.size), losses, color="0.75", lw=0.8, label="loss")
        window = min(20, losses.size)
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, losses.size), smooth, color="k", lw=1.2, label=f"{window}-iteration mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    if validation:
        twin = ax.twinx()
        its, scores = zip(*validation)
        twin.plot(its, scores, "o-", color="#c44e52", ms=3, lw=1, label="validation SSIM")
        twin.set_ylabel("validation SSIM")
        twin.legend(loc="upper right", frameon=False)
    if losses.size:
        ax.legend(loc="upper center", frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    save_figure(fig, path)


def plot_error_panel(target, reconstructions, path, title=None):
    """Ground truth and reconstructions on top, absolute error maps below.

    All images share the ground truth's gray scale and all error maps share one
    color scale, ``[0, max(target) / 4]``.
    """
    n = len(reconstructions) + 1
    fig, axes = plt.subplots(2, n, figsize=(2.4 * n, 5.0), squeeze=False)
    vmax = float(np.max(target))
    err_max = vmax / 4 if vmax > 0 else 1.0
    axes[0, 0].imshow(target, cmap="gray", vmin=0, vmax=vmax)
    axes[0, 0].set_title("ground truth", fontsize=9)
    axes[1, 0].axis("off")
    for col, (label, image) in enumerate(reconstructions.items(), start=1):
        axes[0, col].imshow(image, cmap="gray", vmin=0, vmax=vmax)
        axes[0, col].set_title(label, fontsize=9)
        im = axes[1, col].imshow(np.abs(image - target), cmap="magma", vmin=0, vmax=err_max)
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    if len(reconstructions):
        fig.colorbar(im, ax=axes[1, 1:].tolist(), shrink=0.8, label="|error|")
    if title:
        fig.suptitle(title)
    save_figure(fig, path)


def plot_mask(mask_bits, path, title=None):
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(mask_bits, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    save_figure(fig, path)
