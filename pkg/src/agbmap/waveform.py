"""Large-footprint LiDAR waveform processing.

A waveform is a sequence of return intensities over elevation bins ordered
top to bottom. Processing runs in four stages: background-noise estimation
and signal-bound detection against a mean + k*sd threshold, Gaussian
decomposition of the noise-subtracted signal with BIC model-order
selection, ground-peak identification as the stronger of the two lowest
peaks, and extraction of the canopy metrics (extent, canopy-top height,
leading/trailing edges, energy quantile depths, terrain index and slope).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateNoise, FitFailure, NoSignal

DETECT_K = 4.5
SNR_MIN = 15.0
CLOUD_OK = 15
MAX_ELEV_GAP = 100.0
QUANTILES = (10, 20, 30, 40, 50, 60, 70, 80, 90)


@dataclass
class WaveformRecord:
    id: str
    lon: float
    lat: float
    bin_top_elev: float      # elevation of bin 0, metres
    bin_size: float          # metres, > 0
    intensities: np.ndarray  # counts, top to bottom
    sat_ndx: int = 0
    cloud_flag: int = CLOUD_OK
    srtm_elev: float = 0.0
    acquired_at: str | None = None

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.intensities.ndim != 1 or self.intensities.size < 10:
            raise ValueError(f"waveform {self.id}: need >= 10 intensity bins")
        if not self.bin_size > 0:
            raise ValueError(f"waveform {self.id}: bin_size must be > 0")
        if np.any(self.intensities < 0) or not np.all(np.isfinite(self.intensities)):
            raise ValueError(f"waveform {self.id}: intensities must be finite and >= 0")

    @property
    def nbins(self) -> int:
        return self.intensities.size

    @property
    def elevations(self) -> np.ndarray:
        return self.bin_top_elev - np.arange(self.nbins) * self.bin_size


@dataclass(frozen=True)
class NoiseStats:
    mean: float
    sd: float
    snr: float


@dataclass(frozen=True)
class GaussianComponent:
    amplitude: float
    center_elev: float
    sigma: float


@dataclass
class WaveformMetrics:
    wext: float
    tch: float
    lead: float
    trail: float
    h10: float
    h20: float
    h30: float
    h40: float
    h50: float
    h60: float
    h70: float
    h80: float
    h90: float
    ti: float
    slope: float
    begin_elev: float
    end_elev: float
    ground_elev: float

    def quantile_depths(self) -> np.ndarray:
        return np.array([getattr(self, f"h{q}") for q in QUANTILES])


@dataclass(frozen=True)
class FilterResult:
    kept: bool
    reason: str = ""


def _noise_window(n: int):
    m = max(1, int(round(0.1 * n)))
    idx = np.zeros(n, dtype=bool)
    idx[:m] = True
    idx[n - m:] = True
    return idx


def detect_signal_bounds(w: WaveformRecord, k: float = DETECT_K):
    """(NoiseStats, begin_elev, end_elev) from a mean + k*sd threshold.

    Noise comes from the first and last 10 percent of bins; if the detected
    signal reaches into that window the estimate is refined once with the
    signal bins excluded. Raises NoSignal when nothing clears the
    threshold and DegenerateNoise when the noise window has zero spread
    while the waveform itself varies.
    """
    if not k > 0:
        raise ValueError("k must be > 0")
    v = w.intensities
    window = _noise_window(w.nbins)
    mean = float(v[window].mean())
    sd = float(v[window].std())
    if sd == 0.0:
        if np.ptp(v) == 0.0:
            raise NoSignal(f"waveform {w.id}: flat waveform")
        raise DegenerateNoise(f"waveform {w.id}: zero noise spread in window")

    def bounds(mean_, sd_):
        above = np.flatnonzero(v > mean_ + k * sd_)
        if above.size == 0:
            return None
        return int(above[0]), int(above[-1])

    b = bounds(mean, sd)
    if b is not None:
        sig = np.zeros(w.nbins, dtype=bool)
        sig[b[0]:b[1] + 1] = True
        refined = window & ~sig
        if refined.sum() >= 2 and refined.sum() < window.sum():
            mean = float(v[refined].mean())
            sd = float(v[refined].std())
            if sd > 0.0:
                b = bounds(mean, sd)
    if b is None:
        raise NoSignal(f"waveform {w.id}: no bin exceeds mean + {k}*sd")
    snr = (float(v.max()) - mean) / sd if sd > 0 else float("inf")
    elev = w.elevations
    return NoiseStats(mean, sd, snr), float(elev[b[0]]), float(elev[b[1]])


def _gaussian_sum(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for a, c, s in params.reshape(-1, 3):
        out += a * np.exp(-0.5 * ((x - c) / s) ** 2)
    return out


def _gaussian_jac(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    cols = []
    for a, c, s in params.reshape(-1, 3):
        z = (x - c) / s
        e = np.exp(-0.5 * z ** 2)
        cols.extend([e, a * e * z / s, a * e * z ** 2 / s])
    return np.column_stack(cols)


def _initial_centers(y: np.ndarray, x: np.ndarray, ncomp: int, bin_size: float):
    """Candidate centers from local maxima of a lightly smoothed signal."""
    kernel = np.exp(-0.5 * (np.arange(-4, 5) / 2.0) ** 2)
    kernel /= kernel.sum()
    ys = np.convolve(y, kernel, mode="same")
    interior = (ys[1:-1] >= ys[:-2]) & (ys[1:-1] > ys[2:]) & (ys[1:-1] > 0)
    peaks = np.flatnonzero(interior) + 1
    peaks = peaks[np.argsort(ys[peaks])[::-1]]
    centers = list(x[peaks[:ncomp]])
    amps = list(np.maximum(ys[peaks[:ncomp]], 1e-3))
    while len(centers) < ncomp:
        # fall back to evenly spaced centers through the window
        frac = (len(centers) + 1) / (ncomp + 1)
        centers.append(x[0] + frac * (x[-1] - x[0]))
        amps.append(max(float(ys.max()), 1e-3) / 2)
    sigma0 = max(2.0 * bin_size, 0.5)
    return centers, amps, sigma0


def decompose_gaussians(w: WaveformRecord, noise: NoiseStats,
                        max_components: int = 6, bounds=None,
                        min_amplitude_sds: float = 3.0,
                        min_amplitude_frac: float = 0.08):
    """Gaussian mixture fit of the noise-subtracted signal.

    The component count minimizing BIC over 1..max_components wins; each
    count is fitted by bounded nonlinear least squares initialized from
    smoothed local maxima. The scan stops early once two consecutive
    counts fail to improve the best BIC. Components are discarded as
    insignificant when their amplitude stays under min_amplitude_sds
    noise spreads, or under min_amplitude_frac of the strongest component
    (shoulder artifacts of an overparameterized mixture fit); the
    strongest one always survives. Returns (components ordered by
    descending center elevation, residual RMS). Raises FitFailure when no
    count converges.
    """
    if not 1 <= max_components <= 6:
        raise ValueError("max_components must be in 1..6")
    if bounds is None:
        _, begin_elev, end_elev = detect_signal_bounds(w)
    else:
        begin_elev, end_elev = bounds
    elev = w.elevations
    margin = 3 * w.bin_size
    sel = (elev <= begin_elev + margin) & (elev >= end_elev - margin)
    x = elev[sel]
    y = w.intensities[sel] - noise.mean
    m = x.size
    if m < 4:
        raise FitFailure(f"waveform {w.id}: too few signal bins to fit")
    amp_hi = 2.0 * max(float(y.max()), 1e-6)
    lo_c = x.min() - 2 * w.bin_size
    hi_c = x.max() + 2 * w.bin_size
    sig_lo = 0.4 * w.bin_size
    sig_hi = max(x.max() - x.min(), 1.0)

    best = None
    stale = 0
    for ncomp in range(1, max_components + 1):
        centers, amps, sigma0 = _initial_centers(y, x, ncomp, w.bin_size)
        p0, lo, hi = [], [], []
        for c0, a0 in zip(centers, amps):
            p0.extend([min(max(a0, 1e-6), amp_hi * 0.99), c0, sigma0])
            lo.extend([1e-9, lo_c, sig_lo])
            hi.extend([amp_hi, hi_c, sig_hi])
        try:
            res = least_squares(lambda p: _gaussian_sum(p, x) - y, x0=p0,
                                jac=lambda p: _gaussian_jac(p, x),
                                bounds=(lo, hi), xtol=1e-10, ftol=1e-10,
                                max_nfev=400)
        except Exception:
            continue
        if not res.success:
            continue
        rss = float(res.fun @ res.fun)
        bic = m * math.log(max(rss, 1e-300) / m) + 3 * ncomp * math.log(m)
        if best is None or bic < best[0]:
            best = (bic, ncomp, res.x, rss)
            stale = 0
        else:
            stale += 1
            if stale >= 2:
                break
    if best is None:
        raise FitFailure(f"waveform {w.id}: Gaussian decomposition did not converge")
    _, ncomp, params, rss = best
    comps = [GaussianComponent(float(a), float(c), float(s))
             for a, c, s in params.reshape(-1, 3)]
    floor = max(min_amplitude_sds * noise.sd,
                min_amplitude_frac * max(g.amplitude for g in comps))
    significant = [g for g in comps if g.amplitude >= floor]
    if not significant:
        significant = [max(comps, key=lambda g: g.amplitude)]
    significant.sort(key=lambda g: -g.center_elev)
    return significant, math.sqrt(rss / m)


def identify_ground_peak(components) -> GaussianComponent:
    """The stronger of the two lowest-elevation components.

    Components must be ordered by descending center elevation. Equal
    amplitudes break toward the lower component; a single component is
    its own ground.
    """
    if not components:
        raise ValueError("no components")
    if len(components) == 1:
        return components[0]
    upper, lower = components[-2], components[-1]
    return upper if upper.amplitude > lower.amplitude else lower


def _plane_slope_deg(patch: np.ndarray, cellsize: float) -> float:
    """Slope of the least-squares plane through a 3x3 elevation patch."""
    yy, xx = np.mgrid[0:3, 0:3]
    a = np.column_stack([np.ones(9), xx.ravel() * cellsize, -yy.ravel() * cellsize])
    coef, _, _, _ = np.linalg.lstsq(a, patch.ravel(), rcond=None)
    return math.degrees(math.atan(math.hypot(coef[1], coef[2])))


def extract_metrics(w: WaveformRecord, components, dem_patch,
                    noise: NoiseStats | None = None, bounds=None,
                    dem_cellsize: float = 90.0) -> WaveformMetrics:
    """Canopy metrics from decomposed components and a 3x3 DEM patch.

    Quantile heights are depths below the signal beginning at which the
    cumulative noise-subtracted energy (top-down, inside the signal
    bounds) reaches 10..90 percent, linearly interpolated between bins.
    """
    if noise is None or bounds is None:
        noise, begin_elev, end_elev = detect_signal_bounds(w)
    else:
        begin_elev, end_elev = bounds
    ground = identify_ground_peak(components)
    top = components[0]
    wext = begin_elev - end_elev
    tch = top.center_elev - ground.center_elev
    lead = max(begin_elev - top.center_elev, 0.0)
    trail = max(ground.center_elev - end_elev, 0.0)

    elev = w.elevations
    sel = (elev <= begin_elev) & (elev >= end_elev)
    energy = np.maximum(w.intensities[sel] - noise.mean, 0.0)
    depths = begin_elev - elev[sel]
    total = float(energy.sum())
    if total <= 0:
        hq = np.full(len(QUANTILES), wext)
    else:
        cum = np.cumsum(energy) / total
        hq = np.empty(len(QUANTILES))
        for qi, q in enumerate(QUANTILES):
            t = q / 100.0
            j = int(np.searchsorted(cum, t))
            if j == 0:
                prev_c, prev_d = 0.0, 0.0
            else:
                prev_c, prev_d = cum[j - 1], depths[j - 1]
            j = min(j, cum.size - 1)
            dc = cum[j] - prev_c
            frac = (t - prev_c) / dc if dc > 0 else 1.0
            hq[qi] = prev_d + frac * (depths[j] - prev_d)

    patch = np.asarray(dem_patch, dtype=float)
    ti = float(np.ptp(patch))
    slope = _plane_slope_deg(patch, dem_cellsize)
    return WaveformMetrics(
        wext=wext, tch=tch, lead=lead, trail=trail,
        h10=hq[0], h20=hq[1], h30=hq[2], h40=hq[3], h50=hq[4],
        h60=hq[5], h70=hq[6], h80=hq[7], h90=hq[8],
        ti=ti, slope=slope,
        begin_elev=begin_elev, end_elev=end_elev,
        ground_elev=ground.center_elev)


def centroid_elevation(w: WaveformRecord, noise: NoiseStats,
                       begin_elev: float, end_elev: float) -> float:
    """Energy-weighted mean elevation of the noise-subtracted signal."""
    elev = w.elevations
    sel = (elev <= begin_elev) & (elev >= end_elev)
    energy = np.maximum(w.intensities[sel] - noise.mean, 0.0)
    total = energy.sum()
    if total <= 0:
        return 0.5 * (begin_elev + end_elev)
    return float((energy * elev[sel]).sum() / total)


def quality_filter(w: WaveformRecord, bounds_result,
                   snr_min: float = SNR_MIN, cloud_ok: int = CLOUD_OK,
                   max_elev_gap: float = MAX_ELEV_GAP) -> FilterResult:
    """Keep a footprint only when it passes, in order: signal-to-noise at
    least snr_min, cloud flag equal to cloud_ok, saturation index zero, and
    reference-elevation gap within max_elev_gap metres."""
    noise, begin_elev, end_elev = bounds_result
    if noise.snr < snr_min:
        return FilterResult(False, "SNR")
    if w.cloud_flag != cloud_ok:
        return FilterResult(False, "Cloud")
    if w.sat_ndx > 0:
        return FilterResult(False, "Saturated")
    centroid = centroid_elevation(w, noise, begin_elev, end_elev)
    if abs(w.srtm_elev - centroid) > max_elev_gap:
        return FilterResult(False, "ElevationMismatch")
    return FilterResult(True)


# ---------------------------------------------------------------------------
# batch processing and file interfaces

@dataclass
class FootprintResult:
    record: WaveformRecord
    result: FilterResult
    metrics: WaveformMetrics | None = None


def process_waveform(w: WaveformRecord, dem_patch=None, k: float = DETECT_K,
                     max_components: int = 6, snr_min: float = SNR_MIN,
                     max_elev_gap: float = MAX_ELEV_GAP,
                     dem_cellsize: float = 90.0) -> FootprintResult:
    """Bounds, filter, decomposition and metrics for one footprint.

    Detection or fit failures become rejects carrying the error name.
    """
    try:
        noise, begin_elev, end_elev = detect_signal_bounds(w, k)
    except (NoSignal, DegenerateNoise) as e:
        return FootprintResult(w, FilterResult(False, type(e).__name__))
    fr = quality_filter(w, (noise, begin_elev, end_elev), snr_min=snr_min,
                        max_elev_gap=max_elev_gap)
    if not fr.kept:
        return FootprintResult(w, fr)
    try:
        comps, _ = decompose_gaussians(w, noise, max_components,
                                       bounds=(begin_elev, end_elev))
        patch = dem_patch if dem_patch is not None else np.zeros((3, 3))
        metrics = extract_metrics(w, comps, patch, noise=noise,
                                  bounds=(begin_elev, end_elev),
                                  dem_cellsize=dem_cellsize)
    except (FitFailure, NoSignal) as e:
        return FootprintResult(w, FilterResult(False, type(e).__name__))
    return FootprintResult(w, fr, metrics)


def read_waveforms(path) -> list:
    """Newline-delimited records, one JSON object per waveform."""
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            records.append(WaveformRecord(
                id=d["id"], lon=d["lon"], lat=d["lat"],
                bin_top_elev=d["bin_top_elev"], bin_size=d["bin_size"],
                intensities=np.array(d["intensities"], dtype=float),
                sat_ndx=d.get("sat_ndx", 0), cloud_flag=d.get("cloud_flag", CLOUD_OK),
                srtm_elev=d.get("srtm_elev", 0.0),
                acquired_at=d.get("acquired_at")))
    return records


def write_waveforms(records, path) -> None:
    with open(path, "w") as f:
        for w in records:
            d = {"id": w.id, "lon": w.lon, "lat": w.lat,
                 "bin_top_elev": w.bin_top_elev, "bin_size": w.bin_size,
                 "intensities": [round(float(v), 6) for v in w.intensities],
                 "sat_ndx": w.sat_ndx, "cloud_flag": w.cloud_flag,
                 "srtm_elev": w.srtm_elev}
            if w.acquired_at is not None:
                d["acquired_at"] = w.acquired_at
            f.write(json.dumps(d, sort_keys=True))
            f.write("\n")


METRIC_COLUMNS = ("wext", "tch", "lead", "trail", "h10", "h20", "h30", "h40",
                  "h50", "h60", "h70", "h80", "h90", "ti", "slope",
                  "begin_elev", "end_elev", "ground_elev")


def write_metrics_csv(results, f) -> None:
    """One row per kept footprint; the reject_reason column stays empty."""
    w = csv.writer(f)
    w.writerow(["id", "lon", "lat", *METRIC_COLUMNS, "reject_reason"])
    for fr in results:
        if not fr.result.kept or fr.metrics is None:
            continue
        row = [fr.record.id, "%.10g" % fr.record.lon, "%.10g" % fr.record.lat]
        row += ["%.10g" % getattr(fr.metrics, col) for col in METRIC_COLUMNS]
        row.append("")
        w.writerow(row)


def read_metrics_csv(path):
    """Rows of (id, lon, lat, {metric: value})."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            metrics = {col: float(row[col]) for col in METRIC_COLUMNS}
            out.append((row["id"], float(row["lon"]), float(row["lat"]), metrics))
    return out


def write_filter_csv(results, f) -> None:
    w = csv.writer(f)
    w.writerow(["id", "kept", "reason"])
    for fr in results:
        w.writerow([fr.record.id, int(fr.result.kept), fr.result.reason])
