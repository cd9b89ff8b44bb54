"""Georeferenced single-band grids and the covariate-engineering kernels.

Conventions follow the ESRI ASCII grid layout: row 0 is the northern edge,
(origin_x, origin_y) is the lower-left corner in a projected metre CRS, and
a sentinel value marks missing cells. Reprojection is out of scope; every
grid entering a computation is assumed co-registered.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import BadFactor, TooFewBands

DEFAULT_NODATA = -9999.0


@dataclass
class Grid:
    values: np.ndarray  # shape (nrows, ncols), row 0 = north
    origin_x: float
    origin_y: float
    cellsize: float
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("grid values must be 2-D")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be > 0")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> float:
        return self.ncols * self.cellsize

    @property
    def height(self) -> float:
        return self.nrows * self.cellsize

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values != self.nodata)

    def masked(self) -> np.ndarray:
        """Values with nodata cells replaced by NaN."""
        return np.where(self.valid_mask(), self.values, np.nan)

    def copy_with(self, values: np.ndarray) -> "Grid":
        return Grid(np.array(values, dtype=float), self.origin_x, self.origin_y,
                    self.cellsize, self.nodata)

    def like(self, fill: float) -> "Grid":
        return self.copy_with(np.full((self.nrows, self.ncols), fill))

    def cell_of(self, x: float, y: float):
        """(row, col) of the cell containing the point, or None if outside."""
        col = int(np.floor((x - self.origin_x) / self.cellsize))
        row_from_bottom = int(np.floor((y - self.origin_y) / self.cellsize))
        row = self.nrows - 1 - row_from_bottom
        if 0 <= row < self.nrows and 0 <= col < self.ncols:
            return row, col
        return None

    def cell_center(self, row: int, col: int):
        x = self.origin_x + (col + 0.5) * self.cellsize
        y = self.origin_y + (self.nrows - row - 0.5) * self.cellsize
        return x, y

    def cell_centers(self):
        """Arrays (X, Y) of all cell-center coordinates, shape (nrows, ncols)."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.origin_x + (cols + 0.5) * self.cellsize
        y = self.origin_y + (self.nrows - rows - 0.5) * self.cellsize
        return np.meshgrid(x, y)

    def sample(self, x: float, y: float) -> float:
        """Value of the containing cell; NaN outside the grid or on nodata."""
        rc = self.cell_of(x, y)
        if rc is None:
            return float("nan")
        v = self.values[rc]
        if not np.isfinite(v) or v == self.nodata:
            return float("nan")
        return float(v)

    def patch3x3(self, x: float, y: float) -> np.ndarray:
        """3x3 neighbourhood of the containing cell, edges replicated.

        Returns None when the point falls outside the grid.
        """
        rc = self.cell_of(x, y)
        if rc is None:
            return None
        r, c = rc
        rows = np.clip([r - 1, r, r + 1], 0, self.nrows - 1)
        cols = np.clip([c - 1, c, c + 1], 0, self.ncols - 1)
        return self.values[np.ix_(rows, cols)]


class GridStack:
    """Named co-registered grids sharing geometry."""

    def __init__(self, bands):
        """bands: iterable of (name, Grid) pairs."""
        self._names = []
        self._grids = {}
        for name, grid in bands:
            if name in self._grids:
                raise ValueError(f"duplicate band name {name!r}")
            if self._names:
                ref = self._grids[self._names[0]]
                same = (grid.nrows == ref.nrows and grid.ncols == ref.ncols
                        and grid.cellsize == ref.cellsize
                        and grid.origin_x == ref.origin_x
                        and grid.origin_y == ref.origin_y)
                if not same:
                    raise ValueError(f"band {name!r} geometry differs from {self._names[0]!r}")
            self._names.append(name)
            self._grids[name] = grid
        if not self._names:
            raise ValueError("empty stack")

    @property
    def names(self):
        return list(self._names)

    @property
    def nbands(self) -> int:
        return len(self._names)

    def band(self, name: str) -> Grid:
        return self._grids[name]

    def geometry(self) -> Grid:
        return self._grids[self._names[0]]

    def array(self) -> np.ndarray:
        """(nbands, nrows, ncols) with nodata as NaN."""
        return np.stack([self._grids[n].masked() for n in self._names])

    def complete_mask(self) -> np.ndarray:
        """Cells valid in every band."""
        return np.all(np.isfinite(self.array()), axis=0)

    def items(self):
        return [(n, self._grids[n]) for n in self._names]


# ---------------------------------------------------------------------------
# ESRI ASCII grid I/O

def _fmt(v: float) -> str:
    return "%.9g" % v


def write_ascii_grid(grid: Grid, path) -> None:
    vals = grid.values
    mask = grid.valid_mask()
    with open(path, "w") as f:
        f.write(f"ncols {grid.ncols}\n")
        f.write(f"nrows {grid.nrows}\n")
        f.write(f"xllcorner {_fmt(grid.origin_x)}\n")
        f.write(f"yllcorner {_fmt(grid.origin_y)}\n")
        f.write(f"cellsize {_fmt(grid.cellsize)}\n")
        f.write(f"NODATA_value {_fmt(grid.nodata)}\n")
        for r in range(grid.nrows):
            row = [(_fmt(vals[r, c]) if mask[r, c] else _fmt(grid.nodata))
                   for c in range(grid.ncols)]
            f.write(" ".join(row))
            f.write("\n")


def read_ascii_grid(path) -> Grid:
    header = {}
    with open(path) as f:
        pos = f.tell()
        for _ in range(6):
            line = f.readline()
            parts = line.split()
            if len(parts) != 2 or not parts[0][0].isalpha():
                f.seek(pos)
                break
            header[parts[0].lower()] = parts[1]
            pos = f.tell()
        body = f.read().split()
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        x0 = float(header["xllcorner"])
        y0 = float(header["yllcorner"])
        cs = float(header["cellsize"])
    except KeyError as e:
        raise ValueError(f"missing ASCII grid header key: {e}") from None
    nodata = float(header.get("nodata_value", DEFAULT_NODATA))
    if len(body) != ncols * nrows:
        raise ValueError(f"expected {ncols * nrows} values, found {len(body)}")
    values = np.array(body, dtype=float).reshape(nrows, ncols)
    return Grid(values, x0, y0, cs, nodata)


def write_png_quicklook(grid: Grid, path) -> None:
    """8-bit grayscale PNG with a linear min-max stretch; nodata renders black."""
    mask = grid.valid_mask()
    img = np.zeros((grid.nrows, grid.ncols), dtype=np.uint8)
    if mask.any():
        lo = grid.values[mask].min()
        hi = grid.values[mask].max()
        if hi > lo:
            scaled = (grid.values - lo) / (hi - lo) * 254.0 + 1.0
        else:
            scaled = np.full_like(grid.values, 128.0)
        img[mask] = np.clip(scaled[mask], 1, 255).astype(np.uint8)

    def chunk(tag: bytes, data: bytes) -> bytes:
        payload = tag + data
        return struct.pack(">I", len(data)) + payload + struct.pack(">I", zlib.crc32(payload))

    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(grid.nrows))
    ihdr = struct.pack(">IIBBBBB", grid.ncols, grid.nrows, 8, 0, 0, 0, 0)
    png = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
           + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))
    with open(path, "wb") as f:
        f.write(png)


# ---------------------------------------------------------------------------
# kernels

def resample(grid: Grid, factor: int, scheme: str = "mean") -> Grid:
    """Aggregate factor x factor blocks, ignoring nodata.

    Blocks are anchored at the lower-left corner; a ragged northern or
    eastern edge aggregates whatever cells exist. All-nodata blocks come
    out nodata. The global mean is conserved exactly only when both
    dimensions divide by `factor`.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise BadFactor(f"factor must be a positive integer, got {factor!r}")
    if scheme not in ("mean", "median"):
        raise BadFactor(f"scheme must be 'mean' or 'median', got {scheme!r}")
    if factor == 1:
        return grid.copy_with(grid.values)

    vals = grid.masked()
    pad_rows = (-grid.nrows) % factor
    pad_cols = (-grid.ncols) % factor
    # partial blocks sit at the north/east edge, so pad the top and right
    vals = np.pad(vals, ((pad_rows, 0), (0, pad_cols)), constant_values=np.nan)
    nro = vals.shape[0] // factor
    nco = vals.shape[1] // factor
    blocks = vals.reshape(nro, factor, nco, factor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if scheme == "mean":
            agg = np.nanmean(blocks, axis=(1, 3))
        else:
            agg = np.nanmedian(blocks, axis=(1, 3))
    out = np.where(np.isfinite(agg), agg, grid.nodata)
    return Grid(out, grid.origin_x, grid.origin_y, grid.cellsize * factor, grid.nodata)


def temporal_composites(stack: GridStack) -> GridStack:
    """Per-cell min / mean / max over the bands, nodata-aware."""
    cube = stack.array()
    geom = stack.geometry()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        stats = [np.nanmin(cube, axis=0), np.nanmean(cube, axis=0), np.nanmax(cube, axis=0)]
    bands = []
    for name, arr in zip(("min", "mean", "max"), stats):
        vals = np.where(np.isfinite(arr), arr, geom.nodata)
        bands.append((name, geom.copy_with(vals)))
    return GridStack(bands)


@dataclass
class PcaResult:
    loadings: np.ndarray     # (nbands, nbands), rows = components
    eigenvalues: np.ndarray  # descending
    band_means: np.ndarray


def band_pca(stack: GridStack) -> PcaResult:
    """Eigendecomposition of the band covariance over complete cells.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    cube = stack.array()
    k = cube.shape[0]
    complete = stack.complete_mask()
    if complete.sum() < 2:
        raise TooFewBands("fewer than 2 complete cells for PCA")
    data = cube[:, complete]  # (k, m)
    means = data.mean(axis=1)
    centered = data - means[:, None]
    cov = centered @ centered.T / (centered.shape[1] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    loadings = eigvecs[:, order].T  # rows are components
    for i in range(k):
        j = int(np.argmax(np.abs(loadings[i])))
        if loadings[i, j] < 0:
            loadings[i] = -loadings[i]
    return PcaResult(loadings, eigvals, means)


def pca_stack(stack: GridStack, n_components: int) -> GridStack:
    """Principal-component score grids, ordered by descending eigenvalue.

    Cells missing in any band are nodata in every component.
    """
    if n_components < 1 or n_components > stack.nbands:
        raise TooFewBands(f"requested {n_components} components from {stack.nbands} bands")
    pca = band_pca(stack)
    cube = stack.array()
    geom = stack.geometry()
    complete = stack.complete_mask()
    data = cube[:, complete] - pca.band_means[:, None]
    scores = pca.loadings[:n_components] @ data
    bands = []
    for i in range(n_components):
        vals = np.full(cube.shape[1:], geom.nodata)
        vals[complete] = scores[i]
        bands.append((f"pc{i + 1}", geom.copy_with(vals)))
    return GridStack(bands)


def _window9(padded: np.ndarray) -> np.ndarray:
    """The 9 shifted views of a 1-cell-padded array, shape (9, nr, nc)."""
    nr = padded.shape[0] - 2
    nc = padded.shape[1] - 2
    return np.stack([padded[r:r + nr, c:c + nc]
                     for r in range(3) for c in range(3)])


def dem_derivatives(dem: Grid):
    """Slope (degrees, Horn gradient) and roughness (3x3 standard deviation).

    Boundary cells reuse edge-replicated neighbours; any nodata inside the
    window makes the output cell nodata.
    """
    vals = dem.masked()
    padded = np.pad(vals, 1, mode="edge")
    w = _window9(padded)
    bad = np.any(~np.isfinite(w), axis=0)
    # indices in w: 0 1 2 / 3 4 5 / 6 7 8
    dzdx = ((w[2] + 2 * w[5] + w[8]) - (w[0] + 2 * w[3] + w[6])) / (8 * dem.cellsize)
    dzdy = ((w[0] + 2 * w[1] + w[2]) - (w[6] + 2 * w[7] + w[8])) / (8 * dem.cellsize)
    slope = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    rough = np.std(w, axis=0)  # population sd over the 9 cells
    slope[bad] = dem.nodata
    rough[bad] = dem.nodata
    return dem.copy_with(slope), dem.copy_with(rough)


def match_points(a: np.ndarray, b: np.ndarray, max_dist: float):
    """Nearest b-point for every a-point, kept when within max_dist.

    a, b: (n, 2) projected coordinates. Returns a list of (i_a, i_b, dist).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        return []
    tree = cKDTree(b)
    dists, idx = tree.query(a, k=1)
    pairs = []
    for i, (d, j) in enumerate(zip(dists, idx)):
        if d <= max_dist:
            pairs.append((i, int(j), float(d)))
    return pairs
