"""Spatial analysis of learned units: autocorrelograms, gridness, scale fits.

The gridness procedure follows the standard rotational-correlation recipe:
find the ring of peaks around the autocorrelogram center, correlate an
annulus containing that ring with rotated copies of itself, and score
min(corr at 60, 120 degrees) - max(corr at 30, 90, 150 degrees). A unit
counts as a grid cell when the score is positive.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DegenerateMapError, GridnessUndefinedError
from .model import Codebook

MIN_OVERLAP = 20          # offsets with fewer overlapping sites are undefined
PEAK_THRESHOLD = 0.1      # minimum correlation for a peak
PEAK_SEPARATION = 2       # minimum offset distance between peaks


@dataclass
class ResponseMap:
    """One unit's response over a 2D lattice; NaN marks masked-out sites."""

    unit: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ConfigurationError("response maps are 2D")


def response_map(codebook: Codebook, unit: int) -> ResponseMap:
    """Unit responses arranged on the lattice (2D domains only)."""
    dom = codebook.domain
    if dom.dim != 2:
        raise ConfigurationError("response maps are defined for 2D domains")
    grid = np.full((dom.side, dom.side), np.nan)
    grid[dom.grid_index[:, 0], dom.grid_index[:, 1]] = codebook.values[unit]
    return ResponseMap(unit=unit, values=grid)


def autocorrelogram(map_values: np.ndarray, min_overlap: int = MIN_OVERLAP) -> np.ndarray:
    """Pearson spatial autocorrelation at every integer offset.

    Returns a (2N-1, 2N-1) array; entry [N-1+di, N-1+dj] correlates the map
    with itself shifted by (di, dj) over their overlap. Offsets with fewer
    than `min_overlap` overlapping finite sites (or zero variance) are 0.
    The sums are computed with FFT cross-correlations, exactly equivalent to
    the direct per-offset formula up to float rounding.
    """
    A = np.asarray(map_values, dtype=np.float64)
    if A.ndim != 2:
        raise ConfigurationError("autocorrelogram expects a 2D map")
    valid = np.isfinite(A)
    if not valid.any():
        raise DegenerateMapError("map has no finite values")
    vals = np.where(valid, A, 0.0)
    if np.allclose(vals[valid], vals[valid].flat[0], rtol=0.0, atol=0.0):
        raise DegenerateMapError("constant map has no autocorrelation")

    m, n = A.shape
    shape = (2 * m - 1, 2 * n - 1)
    fsize = [int(2 ** np.ceil(np.log2(s))) for s in shape]

    def corr(x, y):
        fx = np.fft.rfft2(x, fsize)
        fy = np.fft.rfft2(y, fsize)
        out = np.fft.irfft2(fx * np.conj(fy), fsize)
        # reorder so index [m-1+di, n-1+dj] is offset (di, dj)
        out = np.roll(out, (m - 1, n - 1), axis=(0, 1))
        return out[:shape[0], :shape[1]]

    ones = valid.astype(np.float64)
    cnt = np.rint(corr(ones, ones))
    s_xy = corr(vals, vals)
    s_x = corr(vals, ones)        # sum of x over overlap, indexed by offset
    s_y = corr(ones, vals)        # sum of y over overlap
    s_xx = corr(vals * vals, ones)
    s_yy = corr(ones, vals * vals)

    with np.errstate(invalid="ignore", divide="ignore"):
        cov = cnt * s_xy - s_x * s_y
        var_x = cnt * s_xx - s_x**2
        var_y = cnt * s_yy - s_y**2
        r = cov / np.sqrt(var_x * var_y)
    bad = (cnt < min_overlap) | ~np.isfinite(r)
    r[bad] = 0.0
    return np.clip(r, -1.0, 1.0)


def _find_peaks(acorr: np.ndarray) -> np.ndarray:
    """Local maxima above threshold, excluding the center, sorted by distance.

    Returns integer offsets (n, 2) relative to the center; peaks closer than
    PEAK_SEPARATION to a stronger peak are suppressed.
    """
    c = (np.array(acorr.shape) - 1) // 2
    mx = ndimage.maximum_filter(acorr, size=3, mode="constant", cval=-np.inf)
    cand = np.argwhere((acorr >= mx) & (acorr > PEAK_THRESHOLD))
    offs = cand - c
    dist = np.linalg.norm(offs, axis=1)
    keep = dist > 0.5          # drop the central peak itself
    cand, offs, dist = cand[keep], offs[keep], dist[keep]
    order = np.argsort(-acorr[cand[:, 0], cand[:, 1]], kind="stable")
    chosen: list[int] = []
    for i in order:
        if all(np.linalg.norm(offs[i] - offs[j]) >= PEAK_SEPARATION for j in chosen):
            chosen.append(i)
    chosen_offs = offs[chosen]
    return chosen_offs[np.argsort(np.linalg.norm(chosen_offs, axis=1), kind="stable")]


def _rotate_about_center(arr: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the array center; outside samples become NaN."""
    c = (np.array(arr.shape, dtype=np.float64) - 1.0) / 2.0
    th = np.deg2rad(degrees)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    ii, jj = np.meshgrid(np.arange(arr.shape[0]), np.arange(arr.shape[1]), indexing="ij")
    tgt = np.stack([ii - c[0], jj - c[1]], axis=0).reshape(2, -1)
    src = rot.T @ tgt + c[:, None]
    out = ndimage.map_coordinates(arr, src, order=1, mode="constant", cval=np.nan)
    return out.reshape(arr.shape)


def gridness(acorr: np.ndarray) -> float:
    """Rotational-symmetry score of an autocorrelogram.

    An annulus around the central peak (inner radius: half the distance to the
    nearest peak; outer: 1.25x the distance to the sixth peak, falling back to
    0.7x the map half-width when fewer than six peaks exist) is correlated
    with rotated copies; positive scores indicate six-fold symmetry.
    """
    acorr = np.asarray(acorr, dtype=np.float64)
    peaks = _find_peaks(acorr)
    if peaks.shape[0] == 0:
        raise GridnessUndefinedError("no peaks around the center")
    dist = np.linalg.norm(peaks, axis=1)
    half_width = (min(acorr.shape) - 1) // 2
    inner = dist[0] / 2.0
    outer = 1.25 * dist[5] if peaks.shape[0] >= 6 else 0.7 * half_width
    outer = min(outer, float(half_width))
    if outer <= inner:
        raise GridnessUndefinedError("annulus is empty")
    c = (np.array(acorr.shape) - 1) // 2
    ii, jj = np.meshgrid(np.arange(acorr.shape[0]), np.arange(acorr.shape[1]), indexing="ij")
    radius = np.hypot(ii - c[0], jj - c[1])
    annulus = (radius >= inner) & (radius <= outer)

    base = acorr[annulus]
    corrs = {}
    for ang in (30, 60, 90, 120, 150):
        rot = _rotate_about_center(acorr, ang)
        ok = annulus & np.isfinite(rot)
        x = acorr[ok]
        y = rot[ok]
        if x.size < MIN_OVERLAP or np.std(x) == 0 or np.std(y) == 0:
            raise GridnessUndefinedError(f"degenerate annulus at rotation {ang}")
        corrs[ang] = float(np.corrcoef(x, y)[0, 1])
    del base
    return min(corrs[60], corrs[120]) - max(corrs[30], corrs[90], corrs[150])


def scale_orientation(acorr: np.ndarray, spacing: float) -> tuple[float, float]:
    """Grid scale (domain lengths) and orientation (degrees in [0, 60)).

    Scale is the median distance from the center to the six inner peaks;
    orientation is the smallest positive counterclockwise peak angle from the
    horizontal axis, reduced modulo 60 degrees.
    """
    peaks = _find_peaks(acorr)
    if peaks.shape[0] < 3:
        raise GridnessUndefinedError("need at least 3 inner peaks")
    inner = peaks[:6]
    dist = np.linalg.norm(inner, axis=1)
    scale = float(np.median(dist) * spacing)
    # row offset = first axis = x1; angle measured counterclockwise from +x1
    ang = np.degrees(np.arctan2(inner[:, 1], inner[:, 0])) % 360.0
    orientation = float(np.min(ang % 60.0))
    return scale, orientation


@dataclass
class UnitReport:
    unit: int
    block: int
    alpha: Optional[float]
    gridness: Optional[float]
    is_grid: bool
    scale: Optional[float]
    orientation: Optional[float]
    error: Optional[str] = None


@dataclass
class GridnessReport:
    units: list[UnitReport]

    @property
    def n_grid(self) -> int:
        return sum(u.is_grid for u in self.units)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def block_mean_scales(self, K: int) -> dict[int, float]:
        """Mean scale over grid-classified units of each block (valid only)."""
        out = {}
        for k in range(K):
            scales = [u.scale for u in self.units
                      if u.block == k and u.is_grid and u.scale is not None]
            if scales:
                out[k] = float(np.mean(scales))
        return out


def gridness_report(codebook: Codebook) -> GridnessReport:
    """Score every unit of a 2D codebook; per-unit failures are recorded,
    not raised."""
    units = []
    for i in range(codebook.n_units):
        block = i // codebook.d
        alpha = None if codebook.alphas is None else float(codebook.alphas[block])
        try:
            acorr = autocorrelogram(response_map(codebook, i).values)
            score = gridness(acorr)
        except (DegenerateMapError, GridnessUndefinedError) as e:
            units.append(UnitReport(unit=i, block=block, alpha=alpha, gridness=None,
                                    is_grid=False, scale=None, orientation=None,
                                    error=str(e)))
            continue
        is_grid = score > 0.0
        scale = orientation = None
        if is_grid:
            try:
                scale, orientation = scale_orientation(acorr, codebook.domain.spacing)
            except GridnessUndefinedError:
                pass
        units.append(UnitReport(unit=i, block=block, alpha=alpha, gridness=score,
                                is_grid=is_grid, scale=scale, orientation=orientation))
    return GridnessReport(units=units)


def scale_alpha_fit(mean_scales: dict[int, float], alphas: np.ndarray
                    ) -> tuple[float, float]:
    """Least-squares slope (through the origin) and Pearson correlation of
    block mean scale against 1/sqrt(alpha_k)."""
    ks = sorted(mean_scales)
    if len(ks) < 3:
        raise ConfigurationError("need at least 3 blocks with valid mean scales")
    y = np.array([mean_scales[k] for k in ks])
    x = 1.0 / np.sqrt(np.asarray(alphas, dtype=np.float64)[ks])
    slope = float(np.sum(x * y) / np.sum(x * x))
    corr = float(np.corrcoef(x, y)[0, 1])
    return slope, corr


def autocorrelation_1d(series: np.ndarray, min_overlap: int = 10) -> np.ndarray:
    """Pearson autocorrelation of a 1D series at non-negative integer lags."""
    s = np.asarray(series, dtype=np.float64)
    n = s.size
    if np.std(s) == 0:
        raise DegenerateMapError("constant series")
    out = np.zeros(n)
    out[0] = 1.0
    for lag in range(1, n - 1):
        a = s[:-lag] if lag else s
        b = s[lag:]
        if a.size < min_overlap:
            break
        if np.std(a) == 0 or np.std(b) == 0:
            continue
        out[lag] = float(np.corrcoef(a, b)[0, 1])
    return out


def dominant_period(series: np.ndarray, min_overlap: int = 10) -> tuple[int, float]:
    """Lag and value of the dominant nonzero-lag autocorrelation peak.

    Returns the first local maximum whose value reaches 90% of the strongest
    local maximum, which resolves exact-harmonic ties (a pure cosine peaks at
    every multiple of its period) to the fundamental; (0, 0.0) when the
    series has no interior local maximum.
    """
    ac = autocorrelation_1d(series, min_overlap=min_overlap)
    peaks = [(lag, float(ac[lag])) for lag in range(1, ac.size - 1)
             if ac[lag] > ac[lag - 1] and ac[lag] >= ac[lag + 1]]
    if not peaks:
        return 0, 0.0
    top = max(v for _, v in peaks)
    for lag, v in peaks:
        if v >= 0.9 * top:
            return lag, v
    return 0, 0.0
