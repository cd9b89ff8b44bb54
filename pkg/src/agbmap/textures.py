"""Gray-level co-occurrence textures over a sliding window.

Cell values are quantized to a fixed number of gray levels over the global
valid min-max, then a symmetric co-occurrence matrix is accumulated per
window over four unit-distance offsets (E, S, SE, NE) by default. Eight
statistics are emitted: mean, variance, homogeneity, contrast,
dissimilarity, entropy (natural log), second_moment and correlation.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRange
from .raster import Grid, GridStack

BAND_NAMES = ("mean", "variance", "homogeneity", "contrast",
              "dissimilarity", "entropy", "second_moment", "correlation")

DEFAULT_OFFSETS = ((0, 1), (1, 0), (1, 1), (-1, 1))


def quantize(values: np.ndarray, levels: int, vmin: float, vmax: float) -> np.ndarray:
    """Integer gray levels in [0, levels). A degenerate range maps to level 0."""
    if vmax <= vmin:
        return np.zeros(values.shape, dtype=np.int64)
    q = np.floor((values - vmin) / (vmax - vmin) * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def _cooccurrence(q: np.ndarray, levels: int, offsets) -> np.ndarray:
    """Symmetric co-occurrence counts for one window; invalid cells are < 0."""
    counts = np.zeros((levels, levels))
    nr, nc = q.shape
    for dr, dc in offsets:
        r0 = max(0, -dr)
        r1 = min(nr, nr - dr)
        c0 = max(0, -dc)
        c1 = min(nc, nc - dc)
        if r0 >= r1 or c0 >= c1:
            continue
        a = q[r0:r1, c0:c1]
        b = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        ok = (a >= 0) & (b >= 0)
        if not ok.any():
            continue
        np.add.at(counts, (a[ok], b[ok]), 1)
        np.add.at(counts, (b[ok], a[ok]), 1)
    return counts


def _stats(counts: np.ndarray) -> np.ndarray:
    """The 8 texture statistics of one normalized co-occurrence matrix."""
    total = counts.sum()
    p = counts / total
    ii, jj = np.nonzero(p)
    pv = p[ii, jj]
    mu = float(np.sum(ii * pv))
    var = float(np.sum((ii - mu) ** 2 * pv))
    diff = ii - jj
    contrast = float(np.sum(diff ** 2 * pv))
    dissim = float(np.sum(np.abs(diff) * pv))
    homog = float(np.sum(pv / (1.0 + diff ** 2)))
    entropy = float(-np.sum(pv * np.log(pv)))
    asm = float(np.sum(pv ** 2))
    if var > 1e-300:
        corr = float(np.sum((ii - mu) * (jj - mu) * pv) / var)
    else:
        corr = 1.0
    return np.array([mu, var, homog, contrast, dissim, entropy, asm, corr])


def glcm_textures(grid: Grid, window: int = 3, levels: int = 32,
                  offsets=DEFAULT_OFFSETS) -> GridStack:
    """Per-cell texture bands from windowed co-occurrence matrices.

    `window` must be odd. Windows are clipped at grid edges; a cell whose
    window holds no valid co-occurring pair comes out nodata. A constant
    grid quantizes to a single level and yields the degenerate textures
    (contrast 0, homogeneity 1, entropy 0, second_moment 1).
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    mask = grid.valid_mask()
    if not mask.any():
        raise DegenerateRange("no valid cells to quantize")
    vmin = float(grid.values[mask].min())
    vmax = float(grid.values[mask].max())
    q = quantize(grid.values, levels, vmin, vmax)
    q[~mask] = -1

    half = window // 2
    nr, nc = q.shape
    out = np.full((8, nr, nc), grid.nodata)
    for r in range(nr):
        for c in range(nc):
            if not mask[r, c]:
                continue
            sub = q[max(0, r - half):r + half + 1, max(0, c - half):c + half + 1]
            counts = _cooccurrence(sub, levels, offsets)
            if counts.sum() == 0:
                continue
            out[:, r, c] = _stats(counts)
    return GridStack([(name, grid.copy_with(out[i]))
                      for i, name in enumerate(BAND_NAMES)])
