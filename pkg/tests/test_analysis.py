import numpy as np
import pytest

from gridrep.analysis import (autocorrelation_1d, autocorrelogram, dominant_period,
                              gridness, gridness_report, response_map,
                              scale_alpha_fit, scale_orientation, _find_peaks)
from gridrep.domain import build_domain
from gridrep.errors import (ConfigurationError, DegenerateMapError,
                            GridnessUndefinedError)
from gridrep.rng import make_rng

N = 40
DOM = build_domain(2, N, "square")


def synthetic_hexagon(alpha=72.0, base=0.0, phase=(0.3, 0.7), side=N):
    """Three cosine gratings at 120-degree wave-vector spacing."""
    a = 2.0 * np.sqrt(alpha)
    angs = base + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    wv = a * np.stack([np.cos(angs), np.sin(angs)], axis=1)
    xy = (np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"),
                   axis=-1) + 0.5) / side - np.array(phase)
    return np.cos(xy @ wv.T).sum(axis=-1)


def direct_pearson_acorr(A, min_overlap):
    """Loop-and-slice oracle for the FFT implementation."""
    m, n = A.shape
    out = np.zeros((2 * m - 1, 2 * n - 1))
    for di in range(-m + 1, m):
        for dj in range(-n + 1, n):
            xs, ys = [], []
            for i in range(m):
                for j in range(n):
                    i2, j2 = i + di, j + dj
                    if 0 <= i2 < m and 0 <= j2 < n:
                        x, y = A[i, j], A[i2, j2]
                        if np.isfinite(x) and np.isfinite(y):
                            xs.append(x)
                            ys.append(y)
            if len(xs) >= min_overlap:
                sx, sy = np.std(xs), np.std(ys)
                if sx > 0 and sy > 0:
                    out[m - 1 + di, n - 1 + dj] = np.corrcoef(xs, ys)[0, 1]
    return out


def test_fft_autocorrelogram_matches_direct_oracle():
    rng = make_rng(3)
    small = rng.normal(size=(12, 12))
    small[2, 3] = np.nan
    small[10, 1] = np.nan
    got = autocorrelogram(small, min_overlap=5)
    want = direct_pearson_acorr(small, 5)
    assert np.max(np.abs(got - want)) <= 1e-9


def test_autocorrelogram_center_is_one():
    m = synthetic_hexagon()
    ac = autocorrelogram(m)
    assert ac[N - 1, N - 1] == pytest.approx(1.0, abs=1e-9)


def test_autocorrelogram_point_symmetric():
    ac = autocorrelogram(synthetic_hexagon(base=0.2))
    assert np.max(np.abs(ac - ac[::-1, ::-1])) <= 1e-9


def test_autocorrelogram_mirror_commutes():
    m = synthetic_hexagon(base=0.37)
    ac_mirrored = autocorrelogram(m[::-1, :])
    assert np.max(np.abs(ac_mirrored - autocorrelogram(m)[::-1, :])) <= 1e-9


def test_autocorrelogram_low_overlap_zeroed():
    ac = autocorrelogram(synthetic_hexagon(), min_overlap=20)
    assert ac[0, 0] == 0.0    # extreme corner offset has a single overlap site


def test_constant_map_raises():
    with pytest.raises(DegenerateMapError):
        autocorrelogram(np.ones((10, 10)))


def test_synthetic_hexagon_six_fold_peaks():
    ac = autocorrelogram(synthetic_hexagon())
    peaks = _find_peaks(ac)[:6]
    assert peaks.shape[0] == 6
    dists = np.linalg.norm(peaks, axis=1)
    assert np.allclose(dists, np.median(dists), rtol=0.1)
    angles = np.sort(np.degrees(np.arctan2(peaks[:, 1], peaks[:, 0])) % 360)
    gaps = np.diff(np.concatenate([angles, [angles[0] + 360]]))
    assert np.allclose(gaps, 60.0, atol=8.0)


def test_gridness_high_for_synthetic_hexagon():
    assert gridness(autocorrelogram(synthetic_hexagon())) > 1.0


def test_gridness_noise_median_nonpositive():
    scores = []
    for seed in range(20):
        m = make_rng(seed).normal(size=(N, N))
        try:
            scores.append(gridness(autocorrelogram(m)))
        except GridnessUndefinedError:
            scores.append(0.0)
    assert np.median(scores) <= 0.0


def test_gridness_invariant_under_affine_rescaling():
    ac_base = autocorrelogram(synthetic_hexagon())
    g0 = gridness(ac_base)
    m2 = 3.7 * synthetic_hexagon() + 11.0
    g1 = gridness(autocorrelogram(m2))
    assert g1 == pytest.approx(g0, abs=1e-9)


def test_scale_matches_analytic_period():
    alpha = 72.0
    ac = autocorrelogram(synthetic_hexagon(alpha))
    scale, _ = scale_orientation(ac, DOM.spacing)
    expected = 4.0 * np.pi / (np.sqrt(3.0) * 2.0 * np.sqrt(alpha))
    assert scale == pytest.approx(expected, rel=0.10)


def test_orientation_equivariance_mod_60():
    _, o0 = scale_orientation(autocorrelogram(synthetic_hexagon(base=0.0)),
                              DOM.spacing)
    _, o15 = scale_orientation(autocorrelogram(
        synthetic_hexagon(base=np.deg2rad(15.0))), DOM.spacing)
    assert (o15 - o0) % 60.0 == pytest.approx(15.0, abs=2.0)
    assert 0.0 <= o0 < 60.0 and 0.0 <= o15 < 60.0


def test_scale_orientation_requires_peaks():
    rng = make_rng(1)
    blob = np.exp(-((np.arange(N) - 20) ** 2)[:, None] / 20.0
                  - ((np.arange(N) - 20) ** 2)[None, :] / 20.0)
    ac = autocorrelogram(blob + 1e-3 * rng.normal(size=(N, N)))
    peaks = _find_peaks(ac)
    if peaks.shape[0] < 3:
        with pytest.raises(GridnessUndefinedError):
            scale_orientation(ac, DOM.spacing)


def test_units_within_block_share_scale(analytic1):
    cb, _ = analytic1
    scales = []
    for unit in range(6):
        ac = autocorrelogram(response_map(cb, unit).values)
        scales.append(scale_orientation(ac, DOM.spacing)[0])
    assert (max(scales) - min(scales)) / np.mean(scales) <= 0.15


def test_gridness_report_on_analytic_blocks(analytic1):
    cb, _ = analytic1
    rep = gridness_report(cb)
    assert rep.n_units == 6
    assert rep.n_grid == 6
    means = rep.block_mean_scales(cb.K)
    assert 0 in means


def test_scale_alpha_fit_exact_relation():
    alphas = np.array([10.0, 20.0, 40.0, 80.0])
    scales = {k: 0.9 / np.sqrt(alphas[k]) for k in range(4)}
    slope, corr = scale_alpha_fit(scales, alphas)
    assert corr == pytest.approx(1.0, abs=1e-12)
    assert slope == pytest.approx(0.9, abs=1e-12)


def test_scale_alpha_fit_shuffled_pairing_degrades():
    rng = make_rng(9)
    alphas = np.linspace(5, 90, 12)
    scales = {k: 0.85 / np.sqrt(alphas[k]) for k in range(12)}
    _, corr = scale_alpha_fit(scales, alphas)
    perm = rng.permutation(12)
    shuffled = {k: scales[int(perm[k])] for k in range(12)}
    _, corr_shuffled = scale_alpha_fit(shuffled, alphas)
    assert corr_shuffled < corr


def test_scale_alpha_fit_needs_three_blocks():
    with pytest.raises(ConfigurationError):
        scale_alpha_fit({0: 0.5, 1: 0.3}, np.array([10.0, 20.0]))


def test_response_map_requires_2d():
    dom1 = build_domain(1, 100, "square")
    from gridrep.model import Codebook
    cb = Codebook(domain=dom1, K=1, d=2,
                  values=make_rng(0).normal(size=(2, 100)), normalized=False)
    with pytest.raises(ConfigurationError):
        response_map(cb, 0)


def test_autocorrelation_1d_periodic_series():
    t = np.arange(100)
    s = np.cos(2 * np.pi * t / 25.0)
    lag, peak = dominant_period(s)
    assert lag == 25
    assert peak > 0.9


def test_autocorrelation_1d_constant_raises():
    with pytest.raises(DegenerateMapError):
        autocorrelation_1d(np.ones(50))


def test_dominant_period_no_peak_for_monotone():
    lag, peak = dominant_period(np.linspace(0, 1, 80) ** 2)
    assert lag == 0 and peak == 0.0
