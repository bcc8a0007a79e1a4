import numpy as np
import pytest

from gridrep.analysis import autocorrelogram, gridness, response_map
from gridrep.model import (Kernel, apply_motion, decode_site, encode,
                           motion_matrix, motion_power)
from gridrep.rng import make_rng
from gridrep.theory import (analytic_M, analytic_block, analytic_model,
                            analytic_v, fourier_kernel_fit, tight_frame_residual,
                            verify_theorem)
from gridrep.weights import load_model, save_model


@pytest.fixture(scope="module")
def block72():
    return analytic_block(72.0, base_angle=0.3, rng=make_rng(21))


def test_wavevector_norm(block72):
    assert np.allclose(np.linalg.norm(block72.wavevectors, axis=1), 2 * np.sqrt(72.0))


def test_wavevector_mutual_angles(block72):
    a = block72.wavevectors
    for i in range(3):
        j = (i + 1) % 3
        cosang = a[i] @ a[j] / (np.linalg.norm(a[i]) * np.linalg.norm(a[j]))
        assert cosang == pytest.approx(np.cos(2 * np.pi / 3), abs=1e-9)


def test_unitarity_residual(block72):
    C = block72.C
    assert np.linalg.norm(C.conj().T @ C - np.eye(3)) <= 1e-10


def test_tight_frame_identity(block72):
    xs = make_rng(3).normal(size=(100, 2))
    assert tight_frame_residual(block72, xs) <= 1e-9


def test_motion_relation_exact(block72):
    rng = make_rng(4)
    for _ in range(20):
        x = rng.uniform(0, 1, 2)
        dx = rng.uniform(-0.2, 0.2, 2)
        lhs = analytic_v(block72, x + dx)
        rhs = analytic_M(block72, dx) @ analytic_v(block72, x)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_motion_matrix_identity_at_zero(block72):
    assert np.allclose(analytic_M(block72, np.zeros(2)), np.eye(6), atol=1e-12)


def test_isometry_second_order(block72):
    # real inner product over 3 = (1/3) sum cos<a_j, dx> ~ 1 - alpha |dx|^2
    rng = make_rng(5)
    for _ in range(50):
        x = rng.uniform(0, 1, 2)
        dx = rng.uniform(-1, 1, 2)
        dx *= 0.025 / max(np.linalg.norm(dx), 1e-12)
        ip = analytic_v(block72, x) @ analytic_v(block72, x + dx) / 3.0
        target = 1.0 - 72.0 * float(dx @ dx)
        u = 2 * np.sqrt(72.0) * np.linalg.norm(dx)
        assert abs(ip - target) <= 3 * u**4 / 24 / 3 + 1e-12


def test_analytic_M_orthogonal(block72):
    rng = make_rng(6)
    for _ in range(10):
        M = analytic_M(block72, rng.uniform(-0.3, 0.3, 2))
        assert np.linalg.norm(M.T @ M - np.eye(6)) <= 1e-10


def test_analytic_M_composition(block72):
    rng = make_rng(7)
    for _ in range(10):
        d1 = rng.uniform(-0.1, 0.1, 2)
        d2 = rng.uniform(-0.1, 0.1, 2)
        assert np.allclose(analytic_M(block72, d1) @ analytic_M(block72, d2),
                           analytic_M(block72, d1 + d2), atol=1e-9)


def test_verify_theorem_acceptance_tolerances():
    rep = verify_theorem(72.0, 0.025, tol_motion=1e-10, tol_isometry=5e-3)
    assert rep.max_motion_residual <= 1e-10
    assert rep.max_isometry_residual <= 5e-3
    assert rep.passed


def test_verify_theorem_zero_displacement():
    rep = verify_theorem(72.0, 0.0)
    assert rep.max_motion_residual <= 1e-12
    assert rep.max_isometry_residual <= 1e-12


def test_isometry_residual_monotone_in_alpha():
    r18 = verify_theorem(18.0, 0.025)
    r72 = verify_theorem(72.0, 0.025)
    assert r18.max_isometry_residual < r72.max_isometry_residual


def test_theorem_rejects_bad_tolerances():
    with pytest.raises(Exception):
        verify_theorem(72.0, 0.025, tol_motion=0.0)


# --- analytic blocks as a standard model -------------------------------------

def test_analytic_model_unit_columns(analytic16):
    cb, _ = analytic16
    assert np.max(np.abs(np.linalg.norm(cb.values, axis=0) - 1.0)) <= 1e-9


def test_analytic_model_decode_encode_identity(analytic16):
    cb, _ = analytic16
    h = cb.values.T @ cb.values
    assert np.array_equal(np.argmax(h, axis=0), np.arange(cb.domain.n_sites))


def test_analytic_model_motion_via_model_ops(analytic1):
    cb, mm = analytic1
    dom = cb.domain
    x = dom.coords[dom.site_of_grid(np.array([20, 20]))]
    dx = np.array([0.05, -0.025])
    lhs = encode(cb, x + dx)
    rhs = apply_motion(mm, encode(cb, x), dx)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_analytic_power_equals_scaled_displacement(analytic1):
    _, mm = analytic1
    dx = np.array([0.01, 0.015])
    for k in (2, 3, 5):
        assert np.allclose(motion_power(mm, dx, k), motion_matrix(mm, k * dx),
                           atol=1e-9)


def test_analytic_units_are_grid_cells(analytic1):
    cb, _ = analytic1
    for unit in range(6):
        score = gridness(autocorrelogram(response_map(cb, unit).values))
        assert score > 0


def test_analytic_weight_file_roundtrip(tmp_path, analytic1):
    cb, mm = analytic1
    stem = str(tmp_path / "analytic")
    save_model(stem, cb, mm, seed=7)
    cb2, mm2, header = load_model(stem)
    assert header["mode"] == "analytic"
    assert mm2.mode == "analytic"
    # float32 storage: columns agree to float32 resolution and decode identically
    assert np.allclose(cb2.values, cb.values, atol=1e-6)
    x = cb.domain.coords[100]
    assert decode_site(cb2, encode(cb2, x)) == decode_site(cb, encode(cb, x))
    M2 = motion_matrix(mm2, np.array([0.02, 0.01]))
    M = motion_matrix(mm, np.array([0.02, 0.01]))
    assert np.allclose(M2, M, atol=1e-6)


# --- kernel Fourier diagnostics ----------------------------------------------

def test_fourier_fit_exact_at_zero_distance():
    blocks = [analytic_block(40.0, 0.1, make_rng(31))]
    # the pair grid includes x == y, where the cosine sum is exactly 1 = f(0)
    k = Kernel("gaussian", 0.08)
    res1 = fourier_kernel_fit(blocks, k)
    assert np.isfinite(res1)
    b = blocks[0]
    assert np.cos(np.zeros(2) @ b.wavevectors.T).sum() / 3.0 == pytest.approx(1.0)


def test_fourier_fit_improves_with_more_blocks():
    kernel = Kernel("gaussian", 0.08)
    alphas = np.linspace(4.0, 95.0, 16)
    rng = make_rng(17)
    blocks16 = [analytic_block(a, rng.uniform(0, 2 * np.pi / 3), rng) for a in alphas]
    res16 = fourier_kernel_fit(blocks16, kernel)
    res1 = fourier_kernel_fit([blocks16[10]], kernel)
    assert res16 < res1


def test_fourier_fit_golden_value():
    # frozen diagnostic: 16 paper-like blocks vs gaussian sigma=0.08
    kernel = Kernel("gaussian", 0.08)
    alphas = np.linspace(4.0, 95.0, 16)
    rng = make_rng(17)
    blocks = [analytic_block(a, rng.uniform(0, 2 * np.pi / 3), rng) for a in alphas]
    res = fourier_kernel_fit(blocks, kernel)
    assert res == pytest.approx(0.0852, abs=0.02)
