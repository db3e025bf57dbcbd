"""PNG heatmaps of space-time fields (time on the horizontal axis)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import SpaceTimeGrid  # noqa: E402

CMAP = "viridis"


def _panel(ax, grid: SpaceTimeGrid, values, title: str, label: str):
    z = np.asarray(values, float)
    finite = z[np.isfinite(z)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    im = ax.imshow(z, origin="lower", aspect="auto", cmap=CMAP, vmin=lo, vmax=hi if hi > lo else lo + 1e-12,
                   extent=(grid.t_min, grid.t_max, grid.x_min, grid.x_max), interpolation="nearest")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("x [m]")
    ax.set_title(title)
    cb = ax.figure.colorbar(im, ax=ax)
    cb.set_label(label)
    ax.annotate(f"min {lo:.4g}  max {hi:.4g}", xy=(0.0, -0.22), xycoords="axes fraction", fontsize=8)
    return im


def plot_field(path, grid: SpaceTimeGrid, rho, v, var_rho=None, var_v=None, title: str = "") -> None:
    """Density and speed rows; means on the left, variances on the right when given."""
    ncol = 2 if var_rho is not None and var_v is not None else 1
    fig, axes = plt.subplots(2, ncol, figsize=(5.5 * ncol, 7), squeeze=False, dpi=100)
    _panel(axes[0, 0], grid, rho, "density", "veh/m")
    _panel(axes[1, 0], grid, v, "speed", "m/s")
    if ncol == 2:
        _panel(axes[0, 1], grid, var_rho, "density variance", "(veh/m)^2")
        _panel(axes[1, 1], grid, var_v, "speed variance", "(m/s)^2")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
