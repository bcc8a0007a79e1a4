"""Position codebook, adjacency kernels, and motion matrices.

The codebook V holds one column per masked-in site (K blocks of d units,
stacked). Motions act block-wise: each block's sub-vector is transformed by
its own d x d matrix. Parametric motion matrices are residual second-order
polynomials of the displacement; the monomial order is fixed per dimension
and recorded in weight-file headers.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .domain import Domain
from .errors import ConfigurationError, DecodeDomainError, LookupError_

KERNEL_FAMILIES = ("gaussian", "exponential", "vonmises")

# Monomial order of the second-order displacement expansion. For 2D this is
# (dx1, dx2, dx1^2, dx2^2, dx1*dx2); 1D and 3D follow the same
# linear-then-square-then-cross pattern.
_MONOMIALS = {
    1: ["dx1", "dx1^2"],
    2: ["dx1", "dx2", "dx1^2", "dx2^2", "dx1*dx2"],
    3: ["dx1", "dx2", "dx3", "dx1^2", "dx2^2", "dx3^2", "dx1*dx2", "dx1*dx3", "dx2*dx3"],
}


def monomial_names(dim: int) -> list[str]:
    return list(_MONOMIALS[dim])


def n_monomials(dim: int) -> int:
    return len(_MONOMIALS[dim])


def monomials(deltas: np.ndarray) -> np.ndarray:
    """Evaluate the second-order monomials for displacements (..., dim)."""
    deltas = np.asarray(deltas, dtype=np.float64)
    dim = deltas.shape[-1]
    cols = [deltas[..., i] for i in range(dim)]
    cols += [deltas[..., i] ** 2 for i in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            cols.append(deltas[..., i] * deltas[..., j])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Kernel:
    """Adjacency kernel f with f(0) = 1, monotone non-increasing in distance."""

    family: str
    sigma: float

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError(f"kernel family must be one of {KERNEL_FAMILIES}")
        if not self.sigma > 0:
            raise ConfigurationError(f"kernel sigma must be > 0, got {self.sigma}")


def kernel_eval(kernel: Kernel, r: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Evaluate the kernel at distance r (angular distance for von Mises)."""
    if not kernel.sigma > 0:
        raise ConfigurationError("kernel sigma must be > 0")
    r = np.asarray(r, dtype=np.float64)
    if kernel.family == "gaussian":
        out = np.exp(-(r**2) / (2.0 * kernel.sigma**2))
    elif kernel.family == "exponential":
        out = np.exp(-r / kernel.sigma)
    else:  # vonmises, r is an angle
        out = np.exp((np.cos(r) - 1.0) / kernel.sigma**2)
    return out if out.ndim else float(out)


@dataclass
class Codebook:
    """Matrix of per-site code vectors plus per-block scale parameters.

    values has shape (K*d, n_sites), column-major by site so a heat map is a
    single matrix-vector product. Unit i belongs to block i // d. The
    normalized convention (unit-norm columns) is the package default.
    """

    domain: Domain
    K: int
    d: int
    values: np.ndarray
    alphas: Optional[np.ndarray] = None
    normalized: bool = True
    kernel: Optional[Kernel] = None

    def __post_init__(self):
        kd = self.K * self.d
        if self.values.shape != (kd, self.domain.n_sites):
            raise ConfigurationError(
                f"codebook values must have shape ({kd}, {self.domain.n_sites}), got {self.values.shape}")
        if self.alphas is not None:
            self.alphas = np.asarray(self.alphas, dtype=np.float64)
            if self.alphas.shape != (self.K,):
                raise ConfigurationError("alphas must have one entry per block")

    @property
    def n_units(self) -> int:
        return self.K * self.d

    def block(self, k: int) -> np.ndarray:
        """View of block k's rows, shape (d, n_sites)."""
        return self.values[k * self.d:(k + 1) * self.d]

    def blocked(self) -> np.ndarray:
        """values reshaped to (K, d, n_sites) without copying."""
        return self.values.reshape(self.K, self.d, self.domain.n_sites)


def normalize_columns(values: np.ndarray) -> None:
    """Project every column onto the unit sphere, in place."""
    norms = np.linalg.norm(values, axis=0)
    np.maximum(norms, np.finfo(values.dtype).tiny, out=norms)
    values /= norms[None, :]


def encode(codebook: Codebook, position: np.ndarray) -> np.ndarray:
    """Code vector for a position: exact column on the lattice, multilinear
    interpolation of the 2^dim nearest columns off the lattice (renormalized
    to unit length when the codebook is normalized)."""
    dom = codebook.domain
    position = np.asarray(position, dtype=np.float64)
    if position.shape != (dom.dim,):
        raise ConfigurationError(f"position must have {dom.dim} components")
    if not dom.contains(position):
        raise DecodeDomainError(f"position {position} is outside the domain mask")
    u = position * dom.side - 0.5
    nearest = np.rint(u).astype(int)
    if np.max(np.abs(u - nearest)) < 1e-9:
        site = dom.site_of_grid(np.clip(nearest, 0, dom.side - 1))
        if site >= 0:
            return codebook.values[:, int(site)].copy()
    u = np.clip(u, 0.0, dom.side - 1.0)
    i0 = np.minimum(u.astype(int), dom.side - 2)
    w = u - i0
    v = np.zeros(codebook.n_units, dtype=codebook.values.dtype)
    total = 0.0
    for corner in range(2**dom.dim):
        bits = np.array([(corner >> a) & 1 for a in range(dom.dim)])
        weight = float(np.prod(np.where(bits, w, 1.0 - w)))
        if weight == 0.0:
            continue
        site = dom.site_of_grid(i0 + bits)
        if site < 0:
            continue  # corner outside the mask; weights are renormalized below
        v += weight * codebook.values[:, int(site)]
        total += weight
    if total == 0.0:
        raise DecodeDomainError(f"no masked-in lattice corner near {position}")
    v /= total
    if codebook.normalized:
        n = np.linalg.norm(v)
        if n > 0:
            v = v / n
    return v


def heatmap(codebook: Codebook, v: np.ndarray) -> np.ndarray:
    """Per-site inner products V^T v; v may be a single vector or (Kd, B)."""
    v = np.asarray(v)
    if v.shape[0] != codebook.n_units:
        raise ConfigurationError(f"state vector must have {codebook.n_units} entries")
    return codebook.values.T @ v


def decode_site(codebook: Codebook, v: np.ndarray) -> int:
    """Compact site id with the largest heat-map value (ties: smallest id)."""
    return int(np.argmax(heatmap(codebook, v)))


def decode(codebook: Codebook, v: np.ndarray) -> np.ndarray:
    """Decoded position: coordinates of the heat-map argmax."""
    return codebook.domain.coords[decode_site(codebook, v)].copy()


def decode_block(codebook: Codebook, v: np.ndarray, k: int, center: np.ndarray,
                 radius: float) -> np.ndarray:
    """Per-block local decode: argmax of block k's heat map within `radius`
    of `center` (the local-neighborhood projection onto one sub-manifold)."""
    dom = codebook.domain
    vb = np.asarray(v)[k * codebook.d:(k + 1) * codebook.d]
    near = np.where(np.linalg.norm(dom.coords - np.asarray(center), axis=1) <= radius)[0]
    if near.size == 0:
        raise DecodeDomainError("no sites within the requested neighborhood")
    h = codebook.block(k)[:, near].T @ vb
    return dom.coords[near[int(np.argmax(h))]].copy()


def project(codebook: Codebook, v: np.ndarray) -> np.ndarray:
    """Projection onto the codebook: the column maximizing the inner product."""
    v = np.asarray(v)
    if v.ndim == 1:
        return codebook.values[:, decode_site(codebook, v)].copy()
    sites = np.argmax(heatmap(codebook, v), axis=0)
    return codebook.values[:, sites].copy()


@dataclass
class MotionModel:
    """Displacement-to-matrix map, block-diagonal in the parametric mode.

    parametric:    beta (K, d, d, P); M^(k)(dx) = I + sum_p beta[k,:,:,p] m_p(dx)
    nonparametric: one full (Kd, Kd) matrix per discrete grid-unit displacement
    analytic:      closed-form rotation blocks supplied by the theory oracle
    """

    mode: str
    dim: int
    K: int
    d: int
    beta: Optional[np.ndarray] = None                 # parametric
    matrices: Optional[dict] = None                   # nonparametric: {grid offset tuple: (Kd,Kd)}
    spacing: Optional[float] = None                   # nonparametric key scale
    analytic_blocks: Optional[list] = None            # analytic: objects with realified_motion(delta)

    def __post_init__(self):
        if self.mode not in ("parametric", "nonparametric", "analytic"):
            raise ConfigurationError(f"unknown motion mode {self.mode!r}")
        if self.mode == "parametric":
            P = n_monomials(self.dim)
            if self.beta is None or self.beta.shape != (self.K, self.d, self.d, P):
                raise ConfigurationError(f"beta must have shape ({self.K}, {self.d}, {self.d}, {P})")
        if self.mode == "nonparametric" and (self.matrices is None or self.spacing is None):
            raise ConfigurationError("nonparametric mode needs matrices and spacing")
        if self.mode == "analytic" and not self.analytic_blocks:
            raise ConfigurationError("analytic mode needs analytic blocks")

    @property
    def n_units(self) -> int:
        return self.K * self.d


def parametric_motion_model(dim: int, K: int, d: int, beta: Optional[np.ndarray] = None) -> MotionModel:
    if beta is None:
        beta = np.zeros((K, d, d, n_monomials(dim)))
    return MotionModel(mode="parametric", dim=dim, K=K, d=d, beta=beta)


def _nonparam_key(motion: MotionModel, delta: np.ndarray) -> tuple:
    grid = np.asarray(delta, dtype=np.float64) / motion.spacing
    key = tuple(int(round(g)) for g in grid)
    if np.max(np.abs(grid - np.array(key))) > 1e-6:
        raise LookupError_(f"displacement {delta} is not on the stored grid")
    return key


def motion_matrix(motion: MotionModel, delta: np.ndarray) -> np.ndarray:
    """Block matrices (K, d, d) for one displacement (full (Kd, Kd) for the
    nonparametric mode, which stores unconstrained matrices)."""
    delta = np.atleast_1d(np.asarray(delta, dtype=np.float64))
    if delta.shape != (motion.dim,):
        raise ConfigurationError(f"displacement must have {motion.dim} components")
    if motion.mode == "parametric":
        m = monomials(delta)
        mats = np.einsum("kijp,p->kij", motion.beta, m)
        mats += np.eye(motion.d)[None, :, :]
        return mats
    if motion.mode == "nonparametric":
        key = _nonparam_key(motion, delta)
        if key not in motion.matrices:
            raise LookupError_(f"no stored motion matrix for grid offset {key}")
        return motion.matrices[key].copy()
    return np.stack([blk.realified_motion(delta) for blk in motion.analytic_blocks])


def motion_matrices_for(motion: MotionModel, deltas: np.ndarray) -> np.ndarray:
    """Batched motion matrices for deltas (G, dim) -> (G, K, d, d).

    Only block modes support batching; the nonparametric mode stores full
    matrices and is handled by its own group path in the training code.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    if motion.mode == "parametric":
        m = monomials(deltas)                                     # (G, P)
        mats = np.einsum("kijp,gp->gkij", motion.beta, m)
        mats += np.eye(motion.d)[None, None, :, :]
        return mats
    if motion.mode == "analytic":
        return np.stack([motion_matrix(motion, dx) for dx in deltas])
    raise ConfigurationError("batched matrices are not defined for nonparametric mode")


def full_matrix(motion: MotionModel, delta: np.ndarray) -> np.ndarray:
    """Assemble the (Kd, Kd) matrix; off-block entries are exactly zero for
    block modes."""
    mats = motion_matrix(motion, delta)
    if motion.mode == "nonparametric":
        return mats
    kd = motion.n_units
    out = np.zeros((kd, kd), dtype=mats.dtype)
    for k in range(motion.K):
        s = slice(k * motion.d, (k + 1) * motion.d)
        out[s, s] = mats[k]
    return out


def apply_motion(motion: MotionModel, v: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Block-wise matrix-vector product; v may be (Kd,) or (Kd, B)."""
    v = np.asarray(v)
    if v.shape[0] != motion.n_units:
        raise ConfigurationError(f"state vector must have {motion.n_units} entries")
    mats = motion_matrix(motion, delta)
    if motion.mode == "nonparametric":
        return mats @ v
    single = v.ndim == 1
    vb = v.reshape(motion.K, motion.d, -1)
    out = np.matmul(mats, vb)
    out = out.reshape(motion.n_units, -1)
    return out[:, 0] if single else out


def motion_power(motion: MotionModel, delta: np.ndarray, k: int) -> np.ndarray:
    """k-fold matrix power of the motion matrix, block-wise."""
    if k < 1:
        raise ConfigurationError("power must be >= 1")
    mats = motion_matrix(motion, delta)
    if motion.mode == "nonparametric":
        return np.linalg.matrix_power(mats, k)
    return np.stack([np.linalg.matrix_power(mats[i], k) for i in range(motion.K)])


def apply_blocks(mats: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply block matrices (K, d, d) to stacked vectors (Kd,) or (Kd, B)."""
    K, d = mats.shape[0], mats.shape[1]
    single = v.ndim == 1
    vb = v.reshape(K, d, -1)
    out = np.matmul(mats, vb).reshape(K * d, -1)
    return out[:, 0] if single else out
