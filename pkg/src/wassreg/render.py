"""Heat maps of two-dimensional grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import DensityGrid, DiscreteMeasure
from .io import write_grid

__all__ = ["render_heatmap"]


def render_heatmap(obj: DiscreteMeasure | DensityGrid, path, *, cmap="viridis",
                   pixels_per_node: int | None = None) -> tuple[Path, Path]:
    """Write a raster heat map and the grid values next to it as CSV.

    Each grid node becomes a square block of ``pixels_per_node`` pixels
    (default: enough for roughly 400 pixels per side); axis 0 runs left to
    right and axis 1 bottom to top.

    Returns
    -------
    (image path, CSV path)
    """
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    if obj.spec.dim != 2:
        raise ValueError(f"heat maps need a 2-D grid, got dim={obj.spec.dim}")
    arr = obj.as_array()
    if pixels_per_node is None:
        pixels_per_node = max(1, 400 // max(arr.shape))
    img = np.kron(arr.T, np.ones((pixels_per_node, pixels_per_node)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vmin, vmax = float(img.min()), float(img.max())
    if vmax == vmin:
        vmax = vmin + 1.0
    plt.imsave(path, img, cmap=cmap, origin="lower", vmin=vmin, vmax=vmax)
    return path, write_grid(path.with_suffix(".csv"), obj)
