"""Matplotlib report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .discretize import DiscretizationScheme  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def prediction_panels(path, truth: np.ndarray, pred: np.ndarray, image: np.ndarray | None = None,
                      title: str | None = None):
    """Image / reference DSM / prediction / signed error, side by side."""
    panels = ([("image", image)] if image is not None else []) + [("reference", truth), ("prediction", pred)]
    fig, axes = plt.subplots(1, len(panels) + 1, figsize=(3.2 * (len(panels) + 1), 3.2))
    vmin, vmax = float(np.nanmin(truth)), float(np.nanmax(truth))
    for ax, (name, arr) in zip(axes, panels):
        if name == "image":
            ax.imshow(arr)
        else:
            im = ax.imshow(arr, cmap="viridis", vmin=vmin, vmax=vmax)
            fig.colorbar(im, ax=ax, fraction=0.046, label="m")
        ax.set_title(name)
        ax.axis("off")
    err = pred - truth
    lim = float(np.nanmax(np.abs(err))) or 1.0
    im = axes[-1].imshow(err, cmap="RdBu_r", vmin=-lim, vmax=lim)
    fig.colorbar(im, ax=axes[-1], fraction=0.046, label="m")
    axes[-1].set_title("prediction - reference")
    axes[-1].axis("off")
    if title:
        fig.suptitle(title)
    _save(fig, path)


def training_curves(path, history):
    epochs = [r.epoch for r in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    a.plot(epochs, [r.mean_loss for r in history], marker="o")
    a.set_xlabel("epoch")
    a.set_ylabel("mean training loss")
    b.plot(epochs, [r.val_rmse for r in history], marker="o", label="val RMSE (m)")
    b.plot(epochs, [r.val_rel for r in history], marker="s", label="val Rel")
    b.set_xlabel("epoch")
    b.legend(frameon=False)
    _save(fig, path)


def threshold_bins(path, scheme: DiscretizationScheme):
    edges = scheme.bin_edges_m()
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(np.arange(scheme.K), np.diff(edges), color="C0")
    ax.set_xlabel("class index")
    ax.set_ylabel("bin width (m)")
    ax.set_title(f"{scheme.kind.value.upper()} a={scheme.a:g} b={scheme.b:g} K={scheme.K}")
    _save(fig, path)


def ablation_bars(path, reports: dict):
    """Grouped bars of Rel and RMSE per model variant."""
    names = list(reports)
    x = np.arange(len(names))
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    a.bar(x, [reports[n].rel for n in names], color="C1")
    a.set_xticks(x, names)
    a.set_ylabel("Rel")
    b.bar(x, [reports[n].rmse for n in names], color="C2")
    b.set_xticks(x, names)
    b.set_ylabel("RMSE (m)")
    _save(fig, path)
