"""Losses with analytic gradients, Adam, and the training schedule.

Four loss terms drive the code: a motion residual (single or multi step), a
per-block local isometry residual with learnable scales, a global adjacency
residual against the kernel, and a per-unit energy regularizer. All gradients
are hand-derived and checked against central finite differences; batches are
grouped by distinct displacement so the motion term costs one small matrix
product per group instead of one per sample.

Loss evaluation is pure in the parameters and batches, so batches may be
split across workers (fixed reduction order, one Philox stream per worker);
the parameter update itself is single-writer.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import sparse

from .domain import (Domain, MotionBatch, PairBatch, TrajectoryPool, build_pool,
                     sample_batches)
from .errors import ConfigurationError, TrainingDivergedError
from .model import (Codebook, Kernel, MotionModel, kernel_eval, monomials,
                    motion_matrices_for, motion_matrix, n_monomials,
                    normalize_columns, parametric_motion_model)
from .rng import make_rng

ALPHA_FLOOR = 1e-3


@dataclass
class TrainConfig:
    """Schedule and loss weights.

    A weight of None enables the term at weight 1.0 (the normalized-code
    convention keeps the terms commensurate); an explicit number pins the
    weight and 0 disables the term.
    """

    K: int = 16
    d: int = 6
    lambda1: float = 1.0
    lambda2: Optional[float] = None
    lambda3: Optional[float] = None
    lambda0: Optional[float] = None
    lr: float = 0.03
    iterations: int = 6000
    batch: int = 30000
    T: int = 1
    c: float = 1.5
    normalize_after: int = 4000
    seed: int = 0
    max_step: int = 3
    learn_alpha: bool = False
    alphas: Optional[tuple] = None
    alpha_init_range: tuple = (12.0, 100.0)
    no_L2: bool = False
    no_L3: bool = False
    nonparametric_M: bool = False
    single_block: bool = False
    dtype: str = "float32"
    pool_walks: int = 100
    pool_length: int = 1000
    l2_batch: Optional[int] = None
    init_scale: float = 1e-3

    def __post_init__(self):
        if self.single_block:
            self.K = 1
        for name in ("lambda1", "lambda2", "lambda3", "lambda0"):
            w = getattr(self, name)
            if w is not None and w < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.normalize_after < 0:
            raise ConfigurationError("normalize_after must be >= 0")
        if self.iterations < 0 or self.batch < 1 or self.T < 1:
            raise ConfigurationError("iterations, batch and T must be positive")

    def l2_block_batch(self) -> int:
        if self.l2_batch is not None:
            return self.l2_batch
        return max(self.batch // self.K, min(self.batch, 1000))


class Adam:
    """Adam with standard constants (b1=0.9, b2=0.999, eps=1e-8)."""

    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.b1) * (g - m)
            v += (1.0 - self.b2) * (g * g - v)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def _scatter_add(dV: np.ndarray, idx: np.ndarray, updates: np.ndarray) -> None:
    """dV[:, idx[b]] += updates[:, b] with repeated indices accumulated.

    Implemented as a dense-sparse product with a one-hot selection matrix,
    which is an order of magnitude faster than bincount/add.at here.
    """
    n = dV.shape[1]
    B = idx.size
    sel = sparse.csr_matrix((np.ones(B, dtype=dV.dtype), (np.arange(B), idx)), shape=(B, n))
    dV += updates @ sel


def _group_by_offset(deltas: np.ndarray, max_step: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Group rows of an integer offset array; returns (unique, order, bounds)."""
    radix = 2 * max_step + 1
    shifted = deltas + max_step
    keys = shifted[:, 0].astype(np.int64)
    for a in range(1, deltas.shape[1]):
        keys = keys * radix + shifted[:, a]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    bounds = np.r_[starts, sorted_keys.size]
    uniq = deltas[order[starts]]
    return uniq, order, bounds


def loss_motion(codebook: Codebook, motion: MotionModel, batch: MotionBatch
                ) -> tuple[float, np.ndarray, Optional[np.ndarray], Optional[dict]]:
    """Mean squared multi-step motion residual and its gradients.

    Each step's samples are grouped by distinct displacement and kept permuted
    so every group is a contiguous slice handled by one batched block product;
    gradients flow by reverse accumulation through the matrix product chain.
    Returns (value, dV, dbeta, dmats): dbeta for the parametric mode, dmats
    (a dict keyed like the stored matrices) for the nonparametric mode.
    """
    V = codebook.values
    dom = codebook.domain
    K, d = codebook.K, codebook.d
    kd = K * d
    B, T, _ = batch.deltas.shape
    max_step = int(np.max(np.abs(batch.deltas))) if batch.deltas.size else 1
    spacing = dom.spacing
    nonparam = motion.mode == "nonparametric"

    perm = np.arange(B)
    u = V[:, batch.idx_start]
    acts = []     # step input activations, each in its own step's layout
    meta = []
    for t in range(T):
        uniq, order, bounds = _group_by_offset(batch.deltas[perm, t, :], max_step)
        perm = perm[order]
        u = u[:, order]
        acts.append(u)
        if nonparam:
            mats = [motion_matrix(motion, uniq[g] * spacing).astype(V.dtype)
                    for g in range(uniq.shape[0])]
        else:
            mats = motion_matrices_for(motion, uniq * spacing).astype(V.dtype)
        nxt = np.empty_like(u)
        for g in range(uniq.shape[0]):
            s, e = bounds[g], bounds[g + 1]
            if nonparam:
                nxt[:, s:e] = mats[g] @ u[:, s:e]
            else:
                nxt[:, s:e] = np.matmul(mats[g], u[:, s:e].reshape(K, d, -1)).reshape(kd, -1)
        meta.append((uniq, order, bounds, mats))
        u = nxt

    idx_end = batch.idx_end[perm]
    R = V[:, idx_end] - u
    value = float(np.vdot(R, R)) / B

    dV = np.zeros_like(V)
    _scatter_add(dV, idx_end, (2.0 / B) * R)
    g = (-2.0 / B) * R
    dbeta = np.zeros((K, d, d, n_monomials(dom.dim)), dtype=np.float64) \
        if motion.mode == "parametric" else None
    dmats = {k: np.zeros_like(m) for k, m in motion.matrices.items()} if nonparam else None
    for t in range(T - 1, -1, -1):
        uniq, order, bounds, mats = meta[t]
        prev = acts[t]
        gprev = np.empty_like(g)
        G = uniq.shape[0]
        dM = np.empty((G, K, d, d), dtype=V.dtype) if motion.mode == "parametric" else None
        for i in range(G):
            s, e = bounds[i], bounds[i + 1]
            gs = g[:, s:e]
            if nonparam:
                key = tuple(int(x) for x in uniq[i])
                dmats[key] += (gs @ prev[:, s:e].T).astype(dmats[key].dtype)
                gprev[:, s:e] = mats[i].T @ gs
            else:
                gb = gs.reshape(K, d, -1)
                pb = prev[:, s:e].reshape(K, d, -1)
                if dM is not None:
                    dM[i] = np.matmul(gb, pb.transpose(0, 2, 1))
                gprev[:, s:e] = np.matmul(mats[i].transpose(0, 2, 1), gb).reshape(kd, -1)
        if dM is not None:
            dbeta += np.einsum("gkij,gp->kijp", dM.astype(np.float64),
                               monomials(uniq * spacing))
        if t == 0:
            # g is in step-0 layout; scatter with the step-0 permutation
            _scatter_add(dV, batch.idx_start[order], gprev)
        else:
            g = np.empty_like(gprev)
            g[:, order] = gprev
    return value, dV, dbeta, dmats


@dataclass
class IsometryBatch:
    """Per-block samples for the local isometry loss."""

    idx_x: np.ndarray
    idx_y: np.ndarray
    sqdist: np.ndarray     # |dx|^2 in domain lengths


def loss_isometry_block(codebook: Codebook, k: int, batch: IsometryBatch
                        ) -> tuple[float, np.ndarray, float]:
    """One block's isometry residual; returns (value, dV_block, dalpha_k).

    The target is (1 - alpha_k |dx|^2)/K under the normalized convention; the
    alpha gradient flows only through the target, never through the sampling
    region (the region indicator is not differentiable).
    """
    Vk = codebook.block(k)
    alpha = float(codebook.alphas[k])
    B = batch.idx_x.size
    vx = Vk[:, batch.idx_x]
    vy = Vk[:, batch.idx_y]
    ip = np.einsum("db,db->b", vx, vy)
    target = (1.0 - alpha * batch.sqdist) / codebook.K
    res = ip - target.astype(ip.dtype)
    value = float(np.mean(res.astype(np.float64) ** 2))
    w = (2.0 / B) * res
    dVk = np.zeros_like(Vk)
    _scatter_add(dVk, batch.idx_x, w[None, :] * vy)
    _scatter_add(dVk, batch.idx_y, w[None, :] * vx)
    dalpha = float(np.mean(2.0 * res.astype(np.float64) * batch.sqdist) / codebook.K)
    return value, dVk, dalpha


def loss_isometry(codebook: Codebook, batches: list[IsometryBatch]
                  ) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of per-block isometry losses; returns (value, dV, dalphas)."""
    dV = np.zeros_like(codebook.values)
    dalphas = np.zeros(codebook.K)
    total = 0.0
    for k, b in enumerate(batches):
        val, dVk, da = loss_isometry_block(codebook, k, b)
        total += val
        dV[k * codebook.d:(k + 1) * codebook.d] += dVk
        dalphas[k] = da
    return total, dV, dalphas


def loss_adjacency(codebook: Codebook, kernel: Kernel, batch: PairBatch
                   ) -> tuple[float, np.ndarray]:
    """Global adjacency residual against the kernel; returns (value, dV)."""
    V = codebook.values
    B = batch.idx_x.size
    vx = V[:, batch.idx_x]
    vy = V[:, batch.idx_y]
    ip = np.einsum("db,db->b", vx, vy)
    dist = np.linalg.norm(codebook.domain.coords[batch.idx_x] - codebook.domain.coords[batch.idx_y],
                          axis=1)
    res = ip - np.asarray(kernel_eval(kernel, dist), dtype=ip.dtype)
    value = float(np.mean(res.astype(np.float64) ** 2))
    w = (2.0 / B) * res
    dV = np.zeros_like(V)
    _scatter_add(dV, batch.idx_x, w[None, :] * vy)
    _scatter_add(dV, batch.idx_y, w[None, :] * vx)
    return value, dV


def loss_energy(codebook: Codebook) -> tuple[float, np.ndarray]:
    """Uniform-energy regularizer: sum_i (mean_x v_i(x)^2 - 1/(Kd))^2."""
    V = codebook.values
    n = V.shape[1]
    energy = np.mean(V.astype(np.float64) ** 2, axis=1)
    res = energy - 1.0 / codebook.n_units
    value = float(np.sum(res**2))
    dV = ((4.0 / n) * res[:, None] * V.astype(np.float64)).astype(V.dtype)
    return value, dV


# ---------------------------------------------------------------------------
# sampling for the isometry term
# ---------------------------------------------------------------------------

@dataclass
class OffsetTable:
    """All integer lattice offsets of a domain, sorted by radius."""

    offsets: np.ndarray    # (M, dim), sorted by |offset|
    sq_norm: np.ndarray    # (M,) |offset|^2 in grid units

    @classmethod
    def build(cls, domain: Domain) -> "OffsetTable":
        r = domain.side - 1
        axes = [np.arange(-r, r + 1)] * domain.dim
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
        sq = np.sum(mesh**2, axis=1)
        order = np.argsort(sq, kind="stable")
        return cls(offsets=mesh[order], sq_norm=sq[order])

    def within(self, radius_grid: float) -> int:
        """Number of offsets with |o| <= radius (grid units)."""
        return int(np.searchsorted(self.sq_norm, radius_grid**2, side="right"))


def sample_isometry_batch(domain: Domain, table: OffsetTable, alpha: float, c: float,
                          batch: int, rng: np.random.Generator) -> IsometryBatch:
    """Uniform (x, dx) with alpha |dx|^2 <= c and both endpoints masked in."""
    radius = math.sqrt(c / max(alpha, ALPHA_FLOOR)) / domain.spacing
    m = max(table.within(radius), 1)
    idx_x = np.empty(batch, dtype=np.int64)
    idx_y = np.empty(batch, dtype=np.int64)
    sq = np.empty(batch, dtype=np.float64)
    pending = np.arange(batch)
    for _ in range(10_000):
        pick = rng.integers(0, m, size=pending.size)
        x = rng.integers(0, domain.n_sites, size=pending.size)
        y = domain.site_of_grid(domain.grid_index[x] + table.offsets[pick])
        ok = y >= 0
        rows = pending[ok]
        idx_x[rows] = x[ok]
        idx_y[rows] = y[ok]
        sq[rows] = table.sq_norm[pick[ok]] * domain.spacing**2
        pending = pending[~ok]
        if pending.size == 0:
            return IsometryBatch(idx_x=idx_x, idx_y=idx_y, sqdist=sq)
    raise AssertionError("isometry sampling failed to fill the batch")


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    codebook: Codebook
    motion: MotionModel
    trace: dict
    config: TrainConfig


def _init_alphas(cfg: TrainConfig, rng: np.random.Generator) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if cfg.learn_alpha:
        a0 = rng.uniform(*cfg.alpha_init_range, size=cfg.K)
        rho = np.sqrt(np.maximum(a0 - ALPHA_FLOOR, 0.0))
        return rho**2 + ALPHA_FLOOR, rho
    if cfg.alphas is not None:
        alphas = np.broadcast_to(np.asarray(cfg.alphas, dtype=np.float64), (cfg.K,)).copy()
        return alphas, None
    return np.full(cfg.K, np.nan), None


def _nonparam_init(cfg: TrainConfig, dim: int, rng: np.random.Generator, dtype) -> dict:
    kd = cfg.K * cfg.d
    r = np.arange(-cfg.max_step, cfg.max_step + 1)
    mesh = np.stack(np.meshgrid(*([r] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return {tuple(int(v) for v in row):
            rng.uniform(-cfg.init_scale, cfg.init_scale, size=(kd, kd)).astype(dtype)
            for row in mesh}


def train(domain: Domain, cfg: TrainConfig, kernel: Optional[Kernel] = None,
          rng: Optional[np.random.Generator] = None,
          pool: Optional[TrajectoryPool] = None,
          log_every: int = 0) -> TrainResult:
    """Run the full schedule; see TrainConfig for the knobs.

    Initialization is small-uniform for both the codebook and the motion
    parameters; from iteration `normalize_after` on, every column is projected
    to the unit sphere after the Adam step. Raises TrainingDivergedError with
    a per-term breakdown if the loss goes non-finite.
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    use_l2 = not cfg.no_L2 and (cfg.lambda2 is None or cfg.lambda2 > 0)
    use_l3 = not cfg.no_L3 and (cfg.lambda3 is None or cfg.lambda3 > 0) and kernel is not None
    use_l0 = cfg.lambda0 is None or cfg.lambda0 > 0
    use_l1 = cfg.lambda1 > 0
    if use_l2 and not cfg.learn_alpha and cfg.alphas is None:
        raise ConfigurationError("the isometry term needs fixed alphas or learn_alpha=True")

    alphas, rho = _init_alphas(cfg, rng)
    V = rng.uniform(-cfg.init_scale, cfg.init_scale,
                    size=(cfg.K * cfg.d, domain.n_sites)).astype(dtype)
    codebook = Codebook(domain=domain, K=cfg.K, d=cfg.d, values=V, alphas=alphas,
                        normalized=True, kernel=kernel)
    if cfg.nonparametric_M:
        motion = MotionModel(mode="nonparametric", dim=domain.dim, K=cfg.K, d=cfg.d,
                             matrices=_nonparam_init(cfg, domain.dim, rng, dtype),
                             spacing=domain.spacing)
    else:
        beta = rng.uniform(-cfg.init_scale, cfg.init_scale,
                           size=(cfg.K, cfg.d, cfg.d, n_monomials(domain.dim)))
        motion = parametric_motion_model(domain.dim, cfg.K, cfg.d, beta)

    weights = {
        "L1": cfg.lambda1,
        "L2": (1.0 if cfg.lambda2 is None else cfg.lambda2) if use_l2 else 0.0,
        "L3": (1.0 if cfg.lambda3 is None else cfg.lambda3) if use_l3 else 0.0,
        "L0": (1.0 if cfg.lambda0 is None else cfg.lambda0) if use_l0 else 0.0,
    }

    trace = {k: np.zeros(cfg.iterations) for k in ("L0", "L1", "L2", "L3", "total")}
    trace["weights"] = dict(weights)
    if not any(w > 0 for w in weights.values()) or cfg.iterations == 0:
        codebook.alphas = alphas
        return TrainResult(codebook=codebook, motion=motion, trace=trace, config=cfg)

    if pool is None and use_l1:
        pool = build_pool(domain, cfg.pool_walks, cfg.pool_length, cfg.max_step, rng)
    table = OffsetTable.build(domain) if use_l2 else None
    adam = Adam(lr=cfg.lr)
    l2_B = cfg.l2_block_batch()

    for it in range(cfg.iterations):
        raws = {"L0": 0.0, "L1": 0.0, "L2": 0.0, "L3": 0.0}
        grads: dict[str, np.ndarray] = {}
        params: dict[str, np.ndarray] = {"V": V}
        dV = np.zeros_like(V)

        if use_l1:
            mb, pairs = sample_batches(domain, cfg.batch, cfg.T, cfg.max_step, rng, pool=pool)
            val, dV1, dbeta, dmats = loss_motion(codebook, motion, mb)
            raws["L1"] = val
            dV += weights["L1"] * dV1
            if motion.mode == "parametric":
                params["beta"] = motion.beta
                grads["beta"] = weights["L1"] * dbeta
            else:
                for key, g in dmats.items():
                    params[f"M{key}"] = motion.matrices[key]
                    grads[f"M{key}"] = weights["L1"] * g
        elif use_l3:
            pairs = PairBatch(idx_x=rng.integers(0, domain.n_sites, size=cfg.batch),
                              idx_y=rng.integers(0, domain.n_sites, size=cfg.batch))
        if use_l2:
            batches = [sample_isometry_batch(domain, table, float(alphas[k]), cfg.c, l2_B, rng)
                       for k in range(cfg.K)]
            val, dV2, dalphas = loss_isometry(codebook, batches)
            raws["L2"] = val
            dV += weights["L2"] * dV2
            if cfg.learn_alpha:
                params["rho"] = rho
                grads["rho"] = weights["L2"] * dalphas * 2.0 * rho
        if use_l3:
            val, dV3 = loss_adjacency(codebook, kernel, pairs)
            raws["L3"] = val
            dV += weights["L3"] * dV3
        if use_l0:
            val, dV0 = loss_energy(codebook)
            raws["L0"] = val
            dV += weights["L0"] * dV0

        grads["V"] = dV
        total = sum(weights[k] * raws[k] for k in raws)
        for k in raws:
            trace[k][it] = raws[k]
        trace["total"][it] = total
        if not np.isfinite(total):
            raise TrainingDivergedError(it, {**raws, "total": total})

        adam.step(params, grads)
        if cfg.learn_alpha and "rho" in params:
            alphas[:] = rho**2 + ALPHA_FLOOR
        if it >= cfg.normalize_after:
            normalize_columns(V)
        if log_every and (it % log_every == 0 or it == cfg.iterations - 1):
            print(f"iter {it:5d}  " + "  ".join(f"{k}={raws[k]:.3e}" for k in raws)
                  + f"  total={total:.3e}", flush=True)

    codebook.alphas = alphas
    return TrainResult(codebook=codebook, motion=motion, trace=trace, config=cfg)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    tolerance: float
    worst: dict = field(default_factory=dict)   # loss name -> (max rel err, tensor, flat index)

    @property
    def max_error(self) -> float:
        return max((v[0] for v in self.worst.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(domain: Domain, cfg: TrainConfig, kernel: Kernel,
               rng: np.random.Generator, h: float = 1e-5, tolerance: float = 1e-4,
               batch: int = 48) -> GradCheckReport:
    """Compare analytic gradients of L0..L3 with central finite differences.

    Runs at 64-bit on a small probe (the 32-bit training mode is exempt).
    Every parameter tensor is perturbed coordinate-wise on a fixed batch.
    """
    cfg = replace(cfg, dtype="float64", batch=batch, l2_batch=batch)
    alphas, rho = _init_alphas(cfg, rng)
    if not cfg.learn_alpha and cfg.alphas is None:
        alphas = rng.uniform(20.0, 80.0, size=cfg.K)
    V = rng.uniform(-0.5, 0.5, size=(cfg.K * cfg.d, domain.n_sites))
    beta = rng.uniform(-0.3, 0.3, size=(cfg.K, cfg.d, cfg.d, n_monomials(domain.dim)))
    codebook = Codebook(domain=domain, K=cfg.K, d=cfg.d, values=V, alphas=alphas,
                        normalized=True, kernel=kernel)
    motion = parametric_motion_model(domain.dim, cfg.K, cfg.d, beta)

    mb, pairs = sample_batches(domain, batch, cfg.T, cfg.max_step, rng)
    table = OffsetTable.build(domain)
    iso = [sample_isometry_batch(domain, table, float(alphas[k]), cfg.c, batch, rng)
           for k in range(cfg.K)]

    loss_fns = {
        "L1": lambda: loss_motion(codebook, motion, mb)[0],
        "L2": lambda: loss_isometry(codebook, iso)[0],
        "L3": lambda: loss_adjacency(codebook, kernel, pairs)[0],
        "L0": lambda: loss_energy(codebook)[0],
    }

    _, dV1, dbeta, _ = loss_motion(codebook, motion, mb)
    _, dV2, dalphas = loss_isometry(codebook, iso)
    _, dV3 = loss_adjacency(codebook, kernel, pairs)
    _, dV0 = loss_energy(codebook)
    analytic = {
        "L1": {"V": dV1, "beta": dbeta},
        "L2": {"V": dV2, "alphas": dalphas},
        "L3": {"V": dV3},
        "L0": {"V": dV0},
    }
    tensors = {"V": V, "beta": beta, "alphas": alphas}

    report = GradCheckReport(tolerance=tolerance)
    for lname, grad_map in analytic.items():
        worst = (0.0, "", -1)
        for tname, g in grad_map.items():
            t = tensors[tname]
            flat_t = t.reshape(-1)
            flat_g = np.asarray(g, dtype=np.float64).reshape(-1)
            fn = loss_fns[lname]
            for i in range(flat_t.size):
                old = flat_t[i]
                flat_t[i] = old + h
                up = fn()
                flat_t[i] = old - h
                down = fn()
                flat_t[i] = old
                fd = (up - down) / (2.0 * h)
                err = _rel_err(float(flat_g[i]), fd)
                if err > worst[0]:
                    worst = (err, tname, i)
        report.worst[lname] = worst
    return report
