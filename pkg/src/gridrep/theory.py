"""Closed-form hexagonal code blocks used as an executable oracle.

A block is built from three planar wave vectors at mutual angle 2*pi/3 with
common norm 2*sqrt(alpha), mixed by a random 3x3 unitary C. The complex code
e(x) = exp(i <a_j, x>) satisfies the motion relation exactly (the transport
matrix is diagonal in the wave basis) and the local isometry up to the
fourth-order cosine remainder, so these blocks pin down tolerances for the
learned system. Everything here is realified: a complex component c maps to
the interleaved pair (Re c, Im c), making each block a 6-real-unit code.
"""

from dataclasses import dataclass

import numpy as np

from .domain import Domain
from .errors import ConfigurationError
from .model import Codebook, Kernel, MotionModel, kernel_eval


def _realify_vector(z: np.ndarray) -> np.ndarray:
    out = np.empty(2 * z.shape[0], dtype=np.float64)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def _realify_matrix(A: np.ndarray) -> np.ndarray:
    n, m = A.shape
    out = np.empty((2 * n, 2 * m), dtype=np.float64)
    out[0::2, 0::2] = A.real
    out[0::2, 1::2] = -A.imag
    out[1::2, 0::2] = A.imag
    out[1::2, 1::2] = A.real
    return out


@dataclass(frozen=True)
class AnalyticBlock:
    """One hexagonal code block: wave vectors, mixing unitary, scale."""

    alpha: float
    base_angle: float
    wavevectors: np.ndarray      # (3, 2), |a_j| = 2 sqrt(alpha), mutual angle 2 pi / 3
    C: np.ndarray                # (3, 3) complex, C* C = I

    def phases(self, x: np.ndarray) -> np.ndarray:
        """e(x) = exp(i <a_j, x>), shape (3,) complex (x may be (..., 2))."""
        x = np.asarray(x, dtype=np.float64)
        return np.exp(1j * (x @ self.wavevectors.T))

    def complex_v(self, x: np.ndarray) -> np.ndarray:
        return self.phases(x) @ self.C.T

    def realified_v(self, x: np.ndarray) -> np.ndarray:
        """6-real-component code vector (interleaved Re/Im), norm sqrt(3)."""
        return _realify_vector(self.complex_v(x))

    def realified_motion(self, delta: np.ndarray) -> np.ndarray:
        """Exact 6x6 real motion matrix for a displacement."""
        D = np.diag(self.phases(delta))
        return _realify_matrix(self.C @ D @ self.C.conj().T)


def analytic_block(alpha: float, base_angle: float = 0.0,
                   rng: np.random.Generator | None = None) -> AnalyticBlock:
    """Construct a block with wave vectors at base_angle + {0, 2pi/3, 4pi/3}.

    C is drawn as a random unitary by QR of a complex Gaussian matrix with the
    R diagonal phase-fixed to be positive real, so the construction is
    deterministic per rng state.
    """
    if not alpha > 0:
        raise ConfigurationError("alpha must be > 0")
    if rng is None:
        raise ConfigurationError("analytic_block requires an explicit seeded rng")
    angles = base_angle + np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    norm = 2.0 * np.sqrt(alpha)
    a = norm * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    G = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(G)
    phase = np.diag(R).copy()
    phase /= np.abs(phase)
    C = Q * phase[None, :]
    return AnalyticBlock(alpha=float(alpha), base_angle=float(base_angle), wavevectors=a, C=C)


def analytic_v(block: AnalyticBlock, x: np.ndarray) -> np.ndarray:
    return block.realified_v(np.asarray(x, dtype=np.float64))


def analytic_M(block: AnalyticBlock, delta: np.ndarray) -> np.ndarray:
    return block.realified_motion(np.asarray(delta, dtype=np.float64))


def analytic_model(domain: Domain, alphas, base_angles=None,
                   rng: np.random.Generator | None = None,
                   kernel: Kernel | None = None) -> tuple[Codebook, MotionModel]:
    """Bundle K analytic blocks into a standard normalized codebook + motion model.

    Each block contributes 6 units; columns are scaled by 1/sqrt(3K) so the
    full vectors are unit norm and per-block inner products follow the
    (1 - alpha_k |dx|^2)/K convention.
    """
    if domain.dim != 2:
        raise ConfigurationError("analytic blocks are defined on 2D domains")
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    K = alphas.shape[0]
    if base_angles is None:
        if rng is None:
            raise ConfigurationError("need base_angles or an rng to draw them")
        base_angles = rng.uniform(0.0, 2.0 * np.pi / 3.0, size=K)
    base_angles = np.atleast_1d(np.asarray(base_angles, dtype=np.float64))
    blocks = [analytic_block(alphas[k], base_angles[k], rng) for k in range(K)]
    scale = 1.0 / np.sqrt(3.0 * K)
    values = np.concatenate(
        [scale * np.stack([b.realified_v(x) for x in domain.coords], axis=1) for b in blocks],
        axis=0)
    codebook = Codebook(domain=domain, K=K, d=6, values=values,
                        alphas=alphas, normalized=True, kernel=kernel)
    motion = MotionModel(mode="analytic", dim=2, K=K, d=6, analytic_blocks=blocks)
    return codebook, motion


@dataclass(frozen=True)
class TheoremReport:
    alpha: float
    dx_max: float
    max_motion_residual: float
    max_isometry_residual: float
    tol_motion: float
    tol_isometry: float

    @property
    def motion_ok(self) -> bool:
        return self.max_motion_residual <= self.tol_motion

    @property
    def isometry_ok(self) -> bool:
        return self.max_isometry_residual <= self.tol_isometry

    @property
    def passed(self) -> bool:
        return self.motion_ok and self.isometry_ok


def verify_theorem(alpha: float, dx_max: float, tol_motion: float = 1e-10,
                   tol_isometry: float = 5e-3, seed: int = 0,
                   n_positions: int = 25, n_directions: int = 12,
                   n_radii: int = 5) -> TheoremReport:
    """Exercise the analytic block over a grid of positions and displacements.

    The motion relation is exact in the construction (residuals are float
    roundoff); the isometry relation carries the cosine fourth-order remainder
    (|a| |dx|)^4 / 24 per wave, which sets the tolerance scale.
    """
    if tol_motion <= 0 or tol_isometry <= 0:
        raise ConfigurationError("tolerances must be > 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    block = analytic_block(alpha, base_angle=rng.uniform(0, 2 * np.pi / 3), rng=rng)
    g = int(np.ceil(np.sqrt(n_positions)))
    axis = np.linspace(0.05, 0.95, g)
    xs = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)[:n_positions]
    if dx_max > 0:
        radii = np.linspace(0.0, dx_max, n_radii + 1)[1:]
        ang = 2 * np.pi * np.arange(n_directions) / n_directions
        deltas = np.concatenate(
            [np.zeros((1, 2))] +
            [np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1) for r in radii])
    else:
        deltas = np.zeros((1, 2))
    max_motion = 0.0
    max_iso = 0.0
    for dx in deltas:
        M = block.realified_motion(dx)
        target = 1.0 - alpha * float(dx @ dx)
        for x in xs:
            vx = block.realified_v(x)
            vy = block.realified_v(x + dx)
            max_motion = max(max_motion, float(np.max(np.abs(vy - M @ vx))))
            max_iso = max(max_iso, abs(float(vx @ vy) / 3.0 - target))
    return TheoremReport(alpha=float(alpha), dx_max=float(dx_max),
                         max_motion_residual=max_motion, max_isometry_residual=max_iso,
                         tol_motion=tol_motion, tol_isometry=tol_isometry)


def tight_frame_residual(block: AnalyticBlock, xs: np.ndarray) -> float:
    """Max deviation of sum_j <x, a_j>^2 from (3/2) |a|^2 |x|^2, relative."""
    xs = np.asarray(xs, dtype=np.float64)
    proj = (xs @ block.wavevectors.T) ** 2
    lhs = proj.sum(axis=1)
    a2 = float(block.wavevectors[0] @ block.wavevectors[0])
    rhs = 1.5 * a2 * np.sum(xs**2, axis=1)
    scale = np.maximum(np.abs(rhs), 1e-12)
    return float(np.max(np.abs(lhs - rhs) / scale))


def fourier_kernel_fit(blocks: list[AnalyticBlock], kernel: Kernel,
                       grid: int = 12) -> float:
    """RMS residual of the block cosine sum against the kernel over pair grid.

    Evaluates (1/3K) sum_k sum_j cos(<a_kj, y - x>) - f(|y - x|) on all pairs
    of a deterministic grid x grid lattice in [0, 1]^2; diagnostic only.
    """
    axis = (np.arange(grid) + 0.5) / grid
    pts = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    diff = pts[None, :, :] - pts[:, None, :]
    diff = diff.reshape(-1, 2)
    total = np.zeros(diff.shape[0])
    for b in blocks:
        total += np.cos(diff @ b.wavevectors.T).sum(axis=1)
    total /= 3.0 * len(blocks)
    target = kernel_eval(kernel, np.linalg.norm(diff, axis=1))
    return float(np.sqrt(np.mean((total - target) ** 2)))
