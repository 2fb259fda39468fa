"""Matplotlib figure rendering for the report path of the CLI.

Figures are written straight to files (Agg backend); they accompany the
metrics CSV and the raw PGM field images rather than replacing them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.dpi"] = 110
plt.rcParams["font.size"] = 9


def sample_figure(pressure: np.ndarray, permeability: np.ndarray, path,
                  title: str = ""):
    """Side-by-side pressure / permeability heatmaps for one Darcy sample."""
    fig, axes = plt.subplots(1, 2, figsize=(7.2, 3.2))
    for ax, field, label in zip(axes, (pressure, permeability),
                                ("pressure", "permeability")):
        im = ax.imshow(field.T, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        ax.set_title(label)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def slab_figure(slab: np.ndarray, dt: float, L: float, path, title: str = ""):
    """Space-time heatmap of a Burgers slab (time on the vertical axis)."""
    nt = slab.shape[0]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    im = ax.imshow(slab, origin="lower", aspect="auto",
                   extent=(0, L, 0, nt * dt), cmap="RdBu_r")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def residual_histogram(residual_norms, path, title: str = ""):
    """Distribution of per-sample summed squared residuals (log10 bins)."""
    vals = np.asarray(list(residual_norms), dtype=np.float64)
    vals = vals[vals > 0]
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    if vals.size:
        ax.hist(np.log10(vals), bins=min(30, max(5, vals.size // 5)),
                color="steelblue", edgecolor="black", linewidth=0.4)
    ax.set_xlabel("log10 sum r^2 per sample")
    ax.set_ylabel("samples")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def metrics_trend_figure(rows, x_field: str, path, title: str = ""):
    """Residual and reconstruction-error trends across metrics rows."""
    xs = [getattr(r, x_field) for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(xs, [r.mean_sum_sq_residual for r in rows], "o-",
            label="mean sum r^2")
    perr = [r.pressure_sq_error for r in rows]
    if np.all(np.isfinite(perr)):
        ax2 = ax.twinx()
        ax2.plot(xs, perr, "s--", color="firebrick", label="pressure sq error")
        ax2.set_yscale("log")
        ax2.set_ylabel("pressure sq error")
    ax.set_xlabel(x_field)
    ax.set_ylabel("mean sum r^2")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
