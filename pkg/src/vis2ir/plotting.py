"""Report figures, rendered headless to PNG next to the text reports."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "vis2ir",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_quality(per_image, path):
    """Histograms of per-image SSIM and PSNR."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 2.6))
        ssims = [r["ssim"] for r in per_image]
        psnrs = [r["psnr"] for r in per_image]
        ax1.hist(ssims, bins=20, color="0.35")
        ax1.set_xlabel("SSIM")
        ax1.set_ylabel("images")
        ax2.hist(psnrs, bins=20, color="0.35")
        ax2.set_xlabel("PSNR (dB)")
        return _save(fig, path)


def plot_pr_curves(curves, per_class_ap, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        for cls in sorted(curves):
            recall, precision = curves[cls]
            if len(recall):
                ax.step(recall, precision, where="post", label=f"class {cls} (AP {per_class_ap[cls]:.3f})")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        if curves:
            ax.legend(loc="lower left", frameon=False)
        return _save(fig, path)


def read_training_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_training_log(records, path):
    """Loss trajectories; the stage switch is marked with a dashed line."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.5, 3))
        steps = [r["step"] for r in records]
        for key in ("gan_g", "gan_d", "fm", "total_g"):
            ax.plot(steps, [r[key] for r in records], lw=0.8, label=key)
        switch = next((r["step"] for r in records if r["stage"] == "joint"), None)
        if switch is not None and records[0]["stage"] != "joint":
            ax.axvline(switch, color="0.5", ls="--", lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)
