import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agbmap.errors import BadFactor, TooFewBands
from agbmap.raster import (Grid, GridStack, band_pca, dem_derivatives, match_points,
                           pca_stack, read_ascii_grid, resample, temporal_composites,
                           write_ascii_grid, write_png_quicklook)


def make_grid(values, cellsize=100.0, nodata=-9999.0):
    return Grid(np.asarray(values, dtype=float), 0.0, 0.0, cellsize, nodata)


# ---------------------------------------------------------------- geometry

def test_cell_of_and_center_roundtrip():
    g = make_grid(np.arange(12).reshape(3, 4))
    for r in range(3):
        for c in range(4):
            x, y = g.cell_center(r, c)
            assert g.cell_of(x, y) == (r, c)
    assert g.cell_of(-1, 50) is None
    assert g.cell_of(50, 10 * g.cellsize) is None


def test_patch3x3_replicates_edges():
    g = make_grid(np.arange(9).reshape(3, 3))
    x, y = g.cell_center(0, 0)  # top-left corner cell
    patch = g.patch3x3(x, y)
    assert patch.shape == (3, 3)
    assert patch[0, 0] == g.values[0, 0]
    x, y = g.cell_center(1, 1)
    assert np.array_equal(g.patch3x3(x, y), g.values)


# ---------------------------------------------------------------- ascii io

def test_ascii_round_trip_is_stable(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(137.2, 55.0, (7, 5))
    vals[2, 3] = -9999.0
    g = make_grid(vals, cellsize=90.0)
    p1 = tmp_path / "a.asc"
    p2 = tmp_path / "b.asc"
    write_ascii_grid(g, p1)
    g2 = read_ascii_grid(p1)
    write_ascii_grid(g2, p2)
    g3 = read_ascii_grid(p2)
    # after one 9-significant-digit quantization the cycle is bit-exact
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(g2.values, g3.values)
    assert (g2.nrows, g2.ncols, g2.cellsize) == (7, 5, 90.0)
    assert not g2.valid_mask()[2, 3]


def test_ascii_values_match_9_significant_digits(tmp_path):
    g = make_grid([[123.456789123, 0.000012345678]], cellsize=1.0)
    path = tmp_path / "g.asc"
    write_ascii_grid(g, path)
    g2 = read_ascii_grid(path)
    assert g2.values[0, 0] == pytest.approx(123.456789123, rel=1e-9)
    assert g2.values[0, 1] == pytest.approx(0.000012345678, rel=1e-9)


def test_png_quicklook_writes_valid_signature(tmp_path):
    g = make_grid(np.random.default_rng(1).uniform(0, 300, (6, 6)))
    path = tmp_path / "ql.png"
    write_png_quicklook(g, path)
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# ---------------------------------------------------------------- resample

def test_resample_block_examples():
    g = make_grid([[1.0, 2.0], [3.0, 4.0]])
    assert resample(g, 2, "mean").values[0, 0] == 2.5
    assert resample(g, 2, "median").values[0, 0] == 2.5
    g2 = make_grid([[1.0, 2.0], [3.0, 100.0]])
    # median shrugs at the outlier, the mean does not
    assert resample(g2, 2, "median").values[0, 0] == 2.5
    assert resample(g2, 2, "mean").values[0, 0] == 26.5


def test_resample_constant_and_nodata():
    g = make_grid(np.full((4, 4), 7.0))
    assert np.all(resample(g, 2).values == 7.0)
    vals = np.full((2, 2), -9999.0)
    g2 = make_grid(vals)
    assert resample(g2, 2).values[0, 0] == -9999.0
    part = make_grid([[5.0, -9999.0], [-9999.0, -9999.0]])
    assert resample(part, 2).values[0, 0] == 5.0


def test_resample_rejects_bad_factor():
    g = make_grid(np.zeros((2, 2)))
    with pytest.raises(BadFactor):
        resample(g, 0)
    with pytest.raises(BadFactor):
        resample(g, 2, "mode")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_resample_mean_conserves_global_mean(bh, bw, factor, seed):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-50, 400, (bh * factor, bw * factor))
    g = make_grid(vals)
    out = resample(g, factor, "mean")
    assert out.values.mean() == pytest.approx(vals.mean(), abs=1e-9)


# ---------------------------------------------------------------- composites

def test_temporal_composites_example():
    geom = dict(cellsize=100.0)
    b = [("t1", make_grid([[0.2]])), ("t2", make_grid([[0.4]])), ("t3", make_grid([[0.9]]))]
    out = temporal_composites(GridStack(b))
    assert out.band("min").values[0, 0] == pytest.approx(0.2)
    assert out.band("mean").values[0, 0] == pytest.approx(0.5)
    assert out.band("max").values[0, 0] == pytest.approx(0.9)


def test_temporal_composites_single_band_and_nodata():
    single = temporal_composites(GridStack([("a", make_grid([[3.0]]))]))
    assert single.band("min").values[0, 0] == single.band("max").values[0, 0] == 3.0
    stack = GridStack([("a", make_grid([[-9999.0]])), ("b", make_grid([[4.0]])),
                       ("c", make_grid([[8.0]]))])
    out = temporal_composites(stack)
    assert out.band("mean").values[0, 0] == pytest.approx(6.0)
    allbad = temporal_composites(GridStack([("a", make_grid([[-9999.0]]))]))
    assert allbad.band("mean").values[0, 0] == -9999.0


# ---------------------------------------------------------------- pca

def _random_stack(seed, k=4, shape=(12, 10)):
    rng = np.random.default_rng(seed)
    return GridStack([(f"b{i}", make_grid(rng.normal(i, 1 + i, shape)))
                      for i in range(k)])


def test_pca_perfectly_correlated_bands():
    base = np.random.default_rng(3).normal(0, 2, (9, 9))
    stack = GridStack([("a", make_grid(base)), ("b", make_grid(3 * base))])
    pca = band_pca(stack)
    assert pca.eigenvalues[0] > 0
    assert pca.eigenvalues[1] == pytest.approx(0, abs=1e-9 * pca.eigenvalues[0])


def test_pca_eigenvalues_match_band_variances_for_orthogonal_bands():
    # bands built from orthogonal patterns: covariance is diagonal
    n = 64
    t = np.arange(n)
    b1 = np.sqrt(2) * np.cos(2 * np.pi * t / n)
    b2 = 3 * np.sqrt(2) * np.sin(2 * np.pi * t / n)
    stack = GridStack([("a", make_grid(b1.reshape(8, 8))),
                       ("b", make_grid(b2.reshape(8, 8)))])
    pca = band_pca(stack)
    v1 = b1.var(ddof=1)
    v2 = b2.var(ddof=1)
    assert pca.eigenvalues[0] == pytest.approx(max(v1, v2), rel=1e-9)
    assert pca.eigenvalues[1] == pytest.approx(min(v1, v2), rel=1e-9)


def test_pca_orthonormal_and_reconstruction():
    stack = _random_stack(11)
    pca = band_pca(stack)
    gram = pca.loadings @ pca.loadings.T
    assert np.max(np.abs(gram - np.eye(4))) < 1e-8
    cube = stack.array()
    data = cube.reshape(4, -1)
    centered = data - pca.band_means[:, None]
    scores = pca.loadings @ centered
    recon = pca.loadings.T @ scores
    assert np.max(np.abs(recon - centered)) < 1e-8


def test_pca_stack_nodata_and_band_count():
    stack = _random_stack(12, k=3)
    stack.band("b1").values[4, 4] = -9999.0
    out = pca_stack(stack, 2)
    assert out.names == ["pc1", "pc2"]
    assert out.band("pc1").values[4, 4] == -9999.0
    with pytest.raises(TooFewBands):
        pca_stack(stack, 5)


# ---------------------------------------------------------------- dem

def test_dem_flat_and_ramp():
    flat = make_grid(np.full((5, 5), 200.0), cellsize=90.0)
    slope, rough = dem_derivatives(flat)
    assert np.allclose(slope.values, 0.0)
    assert np.allclose(rough.values, 0.0)

    cols = np.arange(6, dtype=float)
    ramp = make_grid(np.tile(cols, (6, 1)), cellsize=90.0)  # 1 m rise per cell
    slope, rough = dem_derivatives(ramp)
    want = math.degrees(math.atan(1.0 / 90.0))
    assert np.allclose(slope.values[1:-1, 1:-1], want, atol=1e-12)


def test_roughness_equals_population_sd():
    g = make_grid(np.arange(9, dtype=float).reshape(3, 3), cellsize=30.0)
    _, rough = dem_derivatives(g)
    assert rough.values[1, 1] == pytest.approx(np.std(np.arange(9.0)))


def test_dem_nodata_propagates():
    vals = np.full((4, 4), 10.0)
    vals[1, 1] = -9999.0
    slope, rough = dem_derivatives(make_grid(vals))
    assert slope.values[2, 2] == -9999.0  # window touches the hole
    assert slope.values[3, 3] != -9999.0


# ---------------------------------------------------------------- matching

def test_match_points_examples():
    a = [(0.0, 0.0)]
    b = [(240.0, 0.0), (400.0, 0.0)]
    pairs = match_points(a, b, 250.0)
    assert pairs == [(0, 0, 240.0)]
    assert match_points(a, [], 250.0) == []
    assert match_points(a, b, 100.0) == []


def test_match_points_against_brute_force():
    rng = np.random.default_rng(17)
    a = rng.uniform(0, 5000, (400, 2))
    b = rng.uniform(0, 5000, (300, 2))
    got = match_points(a, b, 300.0)
    want = []
    for i in range(a.shape[0]):
        d = np.hypot(b[:, 0] - a[i, 0], b[:, 1] - a[i, 1])
        j = int(np.argmin(d))
        if d[j] <= 300.0:
            want.append((i, j, float(d[j])))
    assert [(i, j) for i, j, _ in got] == [(i, j) for i, j, _ in want]
    assert np.allclose([d for _, _, d in got], [d for _, _, d in want])


def test_match_points_translation_invariant():
    rng = np.random.default_rng(23)
    a = rng.uniform(0, 1000, (50, 2))
    b = rng.uniform(0, 1000, (60, 2))
    p1 = match_points(a, b, 150.0)
    p2 = match_points(a + 5000.0, b + 5000.0, 150.0)
    assert [(i, j) for i, j, _ in p1] == [(i, j) for i, j, _ in p2]
