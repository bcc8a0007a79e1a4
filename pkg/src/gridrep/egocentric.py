"""Head-direction coupling: angular codes, attention-mixed motions, clock view.

A ring of stored directions gets its own code (von Mises adjacency plus an
angular motion matrix, second order in the turn angle). Scalar motion along
the current heading is realized by an attention mixture over per-direction
motion matrices; because those matrices share the quadratic monomial basis,
mixing the coefficient tensors and mixing the matrices are the same thing.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analysis import dominant_period
from .errors import ConfigurationError, DegenerateQueryError
from .model import (Codebook, Kernel, MotionModel, apply_blocks, decode, encode,
                    kernel_eval, monomials, normalize_columns)
from .rng import make_rng
from .training import Adam, _scatter_add
from . import weights as weights_io


@dataclass
class HeadDirectionConfig:
    n_dirs: int = 72
    K: int = 8
    d: int = 6
    sigma: float = 0.3          # von Mises kernel scale
    lr: float = 0.03
    iterations: int = 4000
    batch: int = 8192
    max_step: int = 3           # angular grid units per turn
    normalize_after: int = 2600
    lambda_motion: float = 0.5
    seed: int = 0
    init_scale: float = 1e-3
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_dirs < 8:
            raise ConfigurationError("need at least 8 stored directions")


@dataclass
class HeadDirectionModel:
    """Angular code: columns are unit vectors for equally spaced directions."""

    angles: np.ndarray          # (n_dirs,)
    values: np.ndarray          # (K*d, n_dirs)
    K: int
    d: int
    kernel: Kernel
    beta: np.ndarray            # (K, d, d, 2): angular motion, monomials (dt, dt^2)

    @property
    def n_dirs(self) -> int:
        return self.angles.size

    @property
    def n_units(self) -> int:
        return self.K * self.d

    def encode_angle(self, theta: float) -> np.ndarray:
        """Code of the nearest stored direction."""
        idx = int(np.argmin(np.abs(np.angle(np.exp(1j * (self.angles - theta))))))
        return self.values[:, idx].copy()

    def rotation_blocks(self, dtheta: float) -> np.ndarray:
        m = monomials(np.array([[dtheta]]))[0]       # (2,): dtheta, dtheta^2
        mats = np.einsum("kijp,p->kij", self.beta, m)
        mats += np.eye(self.d)[None]
        return mats

    def rotate(self, vhat: np.ndarray, dtheta: float) -> np.ndarray:
        return apply_blocks(self.rotation_blocks(dtheta).astype(vhat.dtype), vhat)


def train_head_direction(cfg: HeadDirectionConfig,
                         rng: Optional[np.random.Generator] = None) -> HeadDirectionModel:
    """Fit the angular code: von Mises adjacency plus angular motion loss.

    Same optimizer stack as the position system (Adam, small-uniform init,
    late projected normalization); the ring has no boundary, so displacements
    simply wrap.
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    n = cfg.n_dirs
    angles = 2.0 * np.pi * np.arange(n) / n
    spacing = 2.0 * np.pi / n
    kernel = Kernel("vonmises", cfg.sigma)
    kd = cfg.K * cfg.d
    V = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(kd, n)).astype(dtype)
    beta = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(cfg.K, cfg.d, cfg.d, 2))
    adam = Adam(lr=cfg.lr)

    steps = np.arange(-cfg.max_step, cfg.max_step + 1)
    step_mats_monos = monomials((steps * spacing)[:, None])        # (S, 2)
    for it in range(cfg.iterations):
        # adjacency term on angle pairs
        i = rng.integers(0, n, size=cfg.batch)
        j = rng.integers(0, n, size=cfg.batch)
        target = np.asarray(kernel_eval(kernel, angles[i] - angles[j]), dtype=dtype)
        ips = np.einsum("ub,ub->b", V[:, i], V[:, j])
        res = ips - target
        dV = np.zeros_like(V)
        w = (2.0 / cfg.batch) * res
        _scatter_add(dV, i, w[None, :] * V[:, j])
        _scatter_add(dV, j, w[None, :] * V[:, i])

        # motion term, grouped by wrap-free integer turn
        x = rng.integers(0, n, size=cfg.batch)
        sidx = rng.integers(0, steps.size, size=cfg.batch)
        y = (x + steps[sidx]) % n
        mats = np.einsum("kijp,sp->skij", beta, step_mats_monos)
        mats += np.eye(cfg.d)[None, None]
        mats = mats.astype(dtype)
        dbeta = np.zeros_like(beta)
        lam = cfg.lambda_motion
        for s in range(steps.size):
            sel = np.flatnonzero(sidx == s)
            if sel.size == 0:
                continue
            vx = V[:, x[sel]].reshape(cfg.K, cfg.d, -1)
            r = V[:, y[sel]] - np.matmul(mats[s], vx).reshape(kd, -1)
            g = (-2.0 * lam / cfg.batch) * r
            _scatter_add(dV, y[sel], -g)
            gb = g.reshape(cfg.K, cfg.d, -1)
            dM = np.matmul(gb, vx.transpose(0, 2, 1)).astype(np.float64)
            dbeta += dM[..., None] * step_mats_monos[s][None, None, None, :]
            _scatter_add(dV, x[sel], np.matmul(mats[s].transpose(0, 2, 1), gb).reshape(kd, -1))

        adam.step({"V": V, "beta": beta}, {"V": dV, "beta": dbeta})
        if it >= cfg.normalize_after:
            normalize_columns(V)
    return HeadDirectionModel(angles=angles, values=V, K=cfg.K, d=cfg.d,
                              kernel=kernel, beta=beta)


def adjacency_rms(model: HeadDirectionModel) -> float:
    """RMS residual of code inner products against the von Mises kernel."""
    ips = model.values.T.astype(np.float64) @ model.values.astype(np.float64)
    diff = model.angles[:, None] - model.angles[None, :]
    target = kernel_eval(model.kernel, diff)
    return float(np.sqrt(np.mean((ips - target) ** 2)))


def project_heading(model: HeadDirectionModel, vhat: np.ndarray) -> np.ndarray:
    """Decode-encode correction on the ring: snap to the best stored code.

    Repeated angular motion drifts the heading off the ring manifold (the
    rotation matrices are only determined on it), so agents re-project
    between maneuvers just like the position system does under noise.
    """
    ips = model.values.T @ np.asarray(vhat, dtype=model.values.dtype)
    return model.values[:, int(np.argmax(ips))].astype(np.float64).copy()


def attention_weights(model: HeadDirectionModel, v_query: np.ndarray, b: float
                      ) -> np.ndarray:
    """Sharpened inner-product weights over stored directions.

    Negative inner products are clamped to zero before the power (trained
    codes can dip slightly negative; the probability vector must stay one).
    """
    ips = model.values.T @ np.asarray(v_query, dtype=model.values.dtype)
    w = np.maximum(ips.astype(np.float64), 0.0) ** b
    total = w.sum()
    if not total > 0:
        raise DegenerateQueryError("query has no positive overlap with stored directions")
    return w / total


@dataclass
class DirectedMotionBank:
    """Per-direction scalar-motion matrices, quadratic in the step length."""

    angles: np.ndarray        # (n_dirs,)
    lin: np.ndarray           # (n_dirs, K, d, d): coefficient of delta
    quad: np.ndarray          # (n_dirs, K, d, d): coefficient of delta^2
    b: float = 8.0

    @classmethod
    def from_position_model(cls, motion: MotionModel, angles: np.ndarray,
                            b: float = 8.0) -> "DirectedMotionBank":
        """Slice a trained 2D quadratic motion model along each heading.

        M(delta*cos t, delta*sin t) is exactly second order in delta, so the
        per-direction coefficients are combinations of the planar ones.
        """
        if motion.mode != "parametric" or motion.dim != 2:
            raise ConfigurationError("the bank slices a parametric 2D motion model")
        c, s = np.cos(angles), np.sin(angles)
        bt = motion.beta
        lin = c[:, None, None, None] * bt[None, ..., 0] + s[:, None, None, None] * bt[None, ..., 1]
        quad = (c[:, None, None, None] ** 2 * bt[None, ..., 2]
                + s[:, None, None, None] ** 2 * bt[None, ..., 3]
                + (c * s)[:, None, None, None] * bt[None, ..., 4])
        return cls(angles=np.asarray(angles, dtype=np.float64), lin=lin, quad=quad, b=b)

    def matrix(self, i: int, delta: float) -> np.ndarray:
        d = self.lin.shape[-1]
        return np.eye(d)[None] + self.lin[i] * delta + self.quad[i] * delta**2

    def mixed_matrix(self, p: np.ndarray, delta: float) -> np.ndarray:
        """Attention mixture sum_i p_i M^(i)(delta) as block matrices."""
        lin = np.tensordot(p, self.lin, axes=1)
        quad = np.tensordot(p, self.quad, axes=1)
        d = self.lin.shape[-1]
        return np.eye(d)[None] + lin * delta + quad * delta**2


def egocentric_step(hd_model: HeadDirectionModel, bank: DirectedMotionBank,
                    v: np.ndarray, vhat: np.ndarray, delta: float, dtheta: float,
                    b: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """One egocentric move: scalar motion along the current heading, then turn.

    The position step uses the pre-turn heading code for the attention
    mixture; the heading code is rotated afterwards.
    """
    p = attention_weights(hd_model, vhat, bank.b if b is None else b)
    mats = bank.mixed_matrix(p, delta).astype(v.dtype)
    v_next = apply_blocks(mats, v)
    vhat_next = hd_model.rotate(vhat, dtheta)
    return v_next, vhat_next


# ---------------------------------------------------------------------------
# clock / timestamp view of a 1D system
# ---------------------------------------------------------------------------

@dataclass
class BlockPeriodicity:
    block: int
    unit_lags: list[int]
    unit_peaks: list[float]

    @property
    def median_lag(self) -> float:
        return float(np.median(self.unit_lags))

    @property
    def min_peak(self) -> float:
        return float(np.min(self.unit_peaks))


@dataclass
class ClockView:
    """Treat a trained 1D code as a timestamp: times map to code vectors."""

    codebook: Codebook

    def __post_init__(self):
        if self.codebook.domain.dim != 1:
            raise ConfigurationError("clock view needs a 1D codebook")

    @property
    def n_times(self) -> int:
        return self.codebook.domain.n_sites

    def encode_time(self, t: float) -> np.ndarray:
        return encode(self.codebook, np.array([t]))

    def decode_time(self, v: np.ndarray) -> float:
        return float(decode(self.codebook, v)[0])

    def periodicity_report(self) -> list[BlockPeriodicity]:
        """Dominant temporal autocorrelation peak per unit, grouped by block."""
        out = []
        for k in range(self.codebook.K):
            lags, peaks = [], []
            for u in range(k * self.codebook.d, (k + 1) * self.codebook.d):
                lag, peak = dominant_period(self.codebook.values[u])
                lags.append(lag)
                peaks.append(peak)
            out.append(BlockPeriodicity(block=k, unit_lags=lags, unit_peaks=peaks))
        return out


def clock_view(codebook: Codebook) -> ClockView:
    return ClockView(codebook=codebook)


# ---------------------------------------------------------------------------
# weight-file interface
# ---------------------------------------------------------------------------

def save_head_direction(path: str, model: HeadDirectionModel,
                        seed: Optional[int] = None) -> None:
    header = {
        "system": "head_direction",
        "mode": "parametric",
        "dim": 1,
        "n_dirs": model.n_dirs,
        "K": model.K,
        "d": model.d,
        "normalized": True,
        "kernel": {"family": model.kernel.family, "sigma": model.kernel.sigma},
        "monomials": ["dtheta", "dtheta^2"],
        "seed": seed,
    }
    weights_io.write_arrays(path, header, {"values": model.values, "beta": model.beta})


def load_head_direction(path: str) -> HeadDirectionModel:
    header, arrays = weights_io.read_arrays(path)
    if header.get("system") != "head_direction":
        raise ConfigurationError("not a head-direction weight file")
    n = header["n_dirs"]
    return HeadDirectionModel(
        angles=2.0 * np.pi * np.arange(n) / n,
        values=arrays["values"],
        K=header["K"], d=header["d"],
        kernel=Kernel(header["kernel"]["family"], header["kernel"]["sigma"]),
        beta=arrays["beta"].astype(np.float64))
