"""Path integration, greedy potential-field planning, and error suites.

Positions are inferred purely in code space: the state vector is advanced by
motion matrices, optionally corrupted by noise, optionally snapped back to
the codebook (decode-encode correction), and read out through the heat map.
Episode errors are reported in grid units (squared Euclidean error at the
final step unless stated otherwise).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import Domain, DisplacementSet, build_pool
from .errors import ConfigurationError
from .model import (Codebook, MotionModel, apply_blocks, encode, heatmap,
                    motion_matrices_for, motion_power)
from .rng import make_rng

SUCCESS_RADIUS = 0.025     # planning success: final distance below this
TRAP_PATIENCE = 10         # steps without objective improvement before failing


@dataclass(frozen=True)
class NoiseSpec:
    """State or input corruption applied at every step.

    kind 'gaussian': additive unit noise with std level * s, where s is the
    overall std of the codebook entries; 'dropout': each unit zeroed with
    probability level; 'motion': Gaussian noise with std level (grid units)
    added to each displacement component. de=True projects the corrupted
    state back onto the codebook each step.
    """

    kind: str
    level: float
    de: bool = False

    def __post_init__(self):
        if self.kind not in ("gaussian", "dropout", "motion"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= self.level < 1.0:
            raise ConfigurationError("dropout fraction must be in [0, 1)")
        if self.level < 0:
            raise ConfigurationError("noise level must be >= 0")


@dataclass
class Episode:
    start: np.ndarray
    goal: Optional[np.ndarray]
    positions: np.ndarray                 # visited positions, (steps+1, dim)
    success: bool
    steps: int
    final_distance: Optional[float] = None
    mse: Optional[float] = None           # grid units squared
    min_clearance: Optional[float] = None
    objective: list = field(default_factory=list)


def reference_noise_std(codebook: Codebook) -> float:
    """Overall standard deviation of the codebook entries (the unit 's')."""
    return float(np.std(codebook.values))


def _corrupt(v: np.ndarray, noise: NoiseSpec, s: float, rng: np.random.Generator) -> np.ndarray:
    if noise.kind == "gaussian":
        return v + rng.normal(0.0, noise.level * s, size=v.shape).astype(v.dtype)
    if noise.kind == "dropout":
        keep = rng.random(v.shape) >= noise.level
        return v * keep
    return v


def _project_batch(codebook: Codebook, v: np.ndarray) -> np.ndarray:
    sites = np.argmax(heatmap(codebook, v), axis=0)
    return codebook.values[:, sites].copy()


def path_integral(codebook: Codebook, motion: MotionModel, start: np.ndarray,
                  motions: np.ndarray, noise: Optional[NoiseSpec] = None,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Dead reckoning: encode the start, chain motion matrices, decode per step.

    motions is (T, dim) in domain lengths; returns decoded positions
    (T+1, dim) whose first row is the decoded start, so an empty motion list
    predicts the start itself.
    """
    motions = np.asarray(motions, dtype=np.float64).reshape(-1, codebook.domain.dim)
    if noise is not None and rng is None:
        raise ConfigurationError("noisy integration requires an rng")
    s = reference_noise_std(codebook) if noise is not None else 0.0
    v = encode(codebook, np.asarray(start, dtype=np.float64))
    out = np.empty((motions.shape[0] + 1, codebook.domain.dim))
    out[0] = codebook.domain.coords[int(np.argmax(heatmap(codebook, v)))]
    for t, delta in enumerate(motions):
        if noise is not None and noise.kind == "motion":
            delta = delta + rng.normal(0.0, noise.level * codebook.domain.spacing,
                                       size=delta.shape)
        v = apply_blocks(motion_matrices_for(motion, delta[None])[0].astype(v.dtype), v) \
            if motion.mode != "nonparametric" else \
            (motion.matrices[tuple(int(round(x)) for x in delta / codebook.domain.spacing)] @ v)
        if noise is not None and noise.kind != "motion":
            v = _corrupt(v, noise, s, rng)
        if noise is not None and noise.de:
            v = _project_batch(codebook, v[:, None])[:, 0]
        out[t + 1] = codebook.domain.coords[int(np.argmax(heatmap(codebook, v)))]
    return out


@dataclass
class IntegralResult:
    mse_final: float                       # grid^2, mean over episodes
    mse_curve: np.ndarray                  # (steps,) grid^2 per step
    final_errors: np.ndarray               # (episodes,) grid^2
    reference_mse: Optional[float] = None  # raw-coordinate integration (motion noise)


def _episode_motions(domain: Domain, episodes: int, steps: int, max_step: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Legal motion sequences with ground truth: (start sites, grid deltas)."""
    pool = build_pool(domain, episodes, steps, max_step, rng)
    return pool.positions, pool.motions


def path_integral_suite(codebook: Codebook, motion: MotionModel, episodes: int,
                        steps: int, rng: np.random.Generator,
                        noise: Optional[NoiseSpec] = None, max_step: int = 3,
                        noise_rng: Optional[np.random.Generator] = None) -> IntegralResult:
    """Run many episodes in lockstep; errors in grid units squared.

    With motion noise the same draws are integrated in raw coordinates as the
    reference error (common random numbers).
    """
    dom = codebook.domain
    V = codebook.values
    truth_sites, deltas = _episode_motions(dom, episodes, steps, max_step, rng)
    if noise_rng is None:
        noise_rng = rng
    s = reference_noise_std(codebook) if noise is not None else 0.0
    v = V[:, truth_sites[:, 0]]
    mse_curve = np.zeros(steps)
    final_err = np.zeros(episodes)
    ref_final = None
    ref_pos = dom.coords[truth_sites[:, 0]].copy() if (noise is not None and
                                                       noise.kind == "motion") else None
    spacing = dom.spacing
    for t in range(steps):
        delta_real = deltas[:, t, :] * spacing
        if noise is not None and noise.kind == "motion":
            delta_real = delta_real + noise_rng.normal(
                0.0, noise.level * spacing, size=delta_real.shape)
            ref_pos += delta_real
        # per-episode displacements differ: group by byte pattern of the row
        _, inv = np.unique(delta_real, axis=0, return_inverse=True)
        uniq = np.unique(inv)
        for g in uniq:
            sel = np.flatnonzero(inv == g)
            mats = motion_matrices_for(motion, delta_real[sel[0]][None])[0].astype(V.dtype)
            v[:, sel] = apply_blocks(mats, v[:, sel])
        if noise is not None and noise.kind != "motion":
            v = _corrupt(v, noise, s, noise_rng)
        if noise is not None and noise.de:
            v = _project_batch(codebook, v)
        decoded = np.argmax(V.T @ v, axis=0)
        err = np.sum(((dom.coords[decoded] - dom.coords[truth_sites[:, t + 1]])
                      / spacing) ** 2, axis=1)
        mse_curve[t] = float(np.mean(err))
        if t == steps - 1:
            final_err = err
            if ref_pos is not None:
                ref_final = float(np.mean(np.sum(
                    ((ref_pos - dom.coords[truth_sites[:, t + 1]]) / spacing) ** 2, axis=1)))
    return IntegralResult(mse_final=float(np.mean(final_err)), mse_curve=mse_curve,
                          final_errors=final_err, reference_mse=ref_final)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

class Planner:
    """Greedy ascent on code inner products over a fixed candidate motion set."""

    def __init__(self, codebook: Codebook, motion: MotionModel, dset: DisplacementSet):
        if dset.dim != codebook.domain.dim:
            raise ConfigurationError("displacement set dimension mismatch")
        self.codebook = codebook
        self.motion = motion
        self.dset = dset
        self.deltas = dset.deltas                                  # (n_cand, dim)
        mats = []
        base_mats = motion_matrices_for(motion, dset.base_deltas)  # (nb, K, d, d)
        for base_idx, mult in dset.candidates:
            m = base_mats[base_idx]
            if mult > 1:
                m = np.stack([np.linalg.matrix_power(m[k], int(mult))
                              for k in range(motion.K)])
            mats.append(m)
        self.cand_mats = np.stack(mats).astype(codebook.values.dtype)   # (nc, K, d, d)

    def step_states(self, v: np.ndarray) -> np.ndarray:
        """All candidate next states, (Kd, n_cand)."""
        K, d = self.motion.K, self.motion.d
        vb = v.reshape(K, d)
        out = np.einsum("ckij,kj->cki", self.cand_mats, vb)
        return out.reshape(self.cand_mats.shape[0], K * d).T


def plan_path_obstacles(codebook: Codebook, motion: MotionModel, start, goal,
                        obstacles, a: float, b: int, dset: DisplacementSet,
                        max_steps: int = 200, noise: Optional[NoiseSpec] = None,
                        rng: Optional[np.random.Generator] = None,
                        planner: Optional[Planner] = None,
                        trap_patience: int = TRAP_PATIENCE) -> Episode:
    """Greedy planning with kernel repulsion from obstacle codes.

    Chooses argmax over candidates of <v(goal), M v> - sum_i a <v(z_i), M v>^b;
    candidates leaving the domain are excluded. An episode fails when the
    objective stalls for trap_patience steps or max_steps is exhausted.
    """
    if a < 0 or (a > 0 and b < 1):
        raise ConfigurationError("need a >= 0 and integer b >= 1")
    dom = codebook.domain
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    planner = planner or Planner(codebook, motion, dset)
    vy = encode(codebook, goal)
    vz = np.stack([encode(codebook, np.asarray(z, dtype=np.float64))
                   for z in obstacles], axis=1) if len(obstacles) else None
    s = reference_noise_std(codebook) if noise is not None else 0.0
    if noise is not None and rng is None:
        raise ConfigurationError("noisy planning requires an rng")

    v = encode(codebook, start)
    pos = start.copy()
    trail = [pos.copy()]
    objective: list[float] = []
    best_obj = -np.inf
    stall = 0
    success = False
    steps = 0
    clearance = np.inf
    for _ in range(max_steps):
        if float(np.linalg.norm(pos - goal)) < SUCCESS_RADIUS:
            success = True
            break
        if noise is not None:
            v = _corrupt(v, noise, s, rng)
            if noise.de:
                v = _project_batch(codebook, v[:, None])[:, 0]
        W = planner.step_states(v)                       # (Kd, nc)
        score = (vy @ W).astype(np.float64)
        if vz is not None:
            score -= a * np.sum((vz.T @ W).astype(np.float64) ** b, axis=0)
        legal = dom.contains(pos[None, :] + planner.deltas)
        if not legal.any():
            break
        score[~legal] = -np.inf
        c = int(np.argmax(score))
        v = W[:, c].copy()
        pos = pos + planner.deltas[c]
        trail.append(pos.copy())
        steps += 1
        objective.append(float(score[c]))
        if len(obstacles):
            clearance = min(clearance, float(min(np.linalg.norm(pos - np.asarray(z))
                                                 for z in obstacles)))
        if score[c] > best_obj + 1e-12:
            best_obj = score[c]
            stall = 0
        else:
            stall += 1
            if stall >= trap_patience:
                break
    final = float(np.linalg.norm(pos - goal))
    if not success:
        success = final < SUCCESS_RADIUS
    return Episode(start=start, goal=goal, positions=np.array(trail), success=success,
                   steps=steps, final_distance=final,
                   min_clearance=None if not len(obstacles) else clearance,
                   objective=objective)


def plan_path(codebook: Codebook, motion: MotionModel, start, goal,
              dset: DisplacementSet, max_steps: int = 200,
              noise: Optional[NoiseSpec] = None,
              rng: Optional[np.random.Generator] = None,
              planner: Optional[Planner] = None,
              trap_patience: int = TRAP_PATIENCE) -> Episode:
    """Direct planning: greedy ascent on the goal inner product."""
    return plan_path_obstacles(codebook, motion, start, goal, [], 0.0, 1, dset,
                               max_steps=max_steps, noise=noise, rng=rng,
                               planner=planner, trap_patience=trap_patience)


def sample_episode_pairs(domain: Domain, episodes: int, min_dist: float,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform masked-in start/goal site pairs at least min_dist apart."""
    starts = np.empty(episodes, dtype=np.int64)
    goals = np.empty(episodes, dtype=np.int64)
    pending = np.arange(episodes)
    for _ in range(10_000):
        a = rng.integers(0, domain.n_sites, size=pending.size)
        g = rng.integers(0, domain.n_sites, size=pending.size)
        ok = np.linalg.norm(domain.coords[a] - domain.coords[g], axis=1) >= min_dist
        starts[pending[ok]] = a[ok]
        goals[pending[ok]] = g[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return starts, goals
    raise ConfigurationError("could not sample episode pairs at this min_dist")


@dataclass
class PlanningResult:
    success_rate: float
    mean_steps: float
    episodes: list


def planning_suite(codebook: Codebook, motion: MotionModel, dset: DisplacementSet,
                   episodes: int, rng: np.random.Generator, max_steps: int = 200,
                   min_dist: float = 0.2, noise: Optional[NoiseSpec] = None,
                   noise_seed: Optional[int] = None,
                   trap_patience: int = TRAP_PATIENCE) -> PlanningResult:
    """Planning success rate over uniformly sampled episode pairs.

    Per-episode noise streams are derived from noise_seed so the same episodes
    can be replayed with and without correction (paired comparison).
    """
    planner = Planner(codebook, motion, dset)
    starts, goals = sample_episode_pairs(codebook.domain, episodes, min_dist, rng)
    eps = []
    for i in range(episodes):
        ep_rng = make_rng(noise_seed, stream=i) if noise_seed is not None else rng
        eps.append(plan_path(codebook, motion, codebook.domain.coords[starts[i]],
                             codebook.domain.coords[goals[i]], dset,
                             max_steps=max_steps, noise=noise, rng=ep_rng,
                             planner=planner, trap_patience=trap_patience))
    done = [e for e in eps if e.success]
    return PlanningResult(success_rate=len(done) / episodes,
                          mean_steps=float(np.mean([e.steps for e in done])) if done else np.nan,
                          episodes=eps)


# ---------------------------------------------------------------------------
# error-correction and noisy-motion suites
# ---------------------------------------------------------------------------

GAUSSIAN_LEVELS = (1.0, 0.75, 0.5, 0.25, 0.1)
DROPOUT_LEVELS = (0.7, 0.5, 0.3, 0.1, 0.05)


@dataclass
class ErrorCell:
    kind: str
    level: float
    de: bool
    integral_mse: Optional[float] = None
    planning_success: Optional[float] = None


def error_suite(int_codebook: Codebook, int_motion: MotionModel,
                plan_codebook: Optional[Codebook] = None,
                plan_motion: Optional[MotionModel] = None,
                dset: Optional[DisplacementSet] = None,
                gaussian_levels=GAUSSIAN_LEVELS, dropout_levels=DROPOUT_LEVELS,
                episodes: int = 200, steps: int = 40, plan_max_steps: int = 120,
                plan_min_dist: float = 0.2, seed: int = 0,
                tasks=("integral", "planning")) -> list[ErrorCell]:
    """Error-correction table: MSE / success per noise kind, level, and DE flag.

    Episodes and noise draws are shared between the DE and no-DE runs of every
    cell (common random numbers), so DE dominance is a paired comparison.
    Integral cells run on the integration model; planning cells run on the
    planning model (long-range kernel) when given.
    """
    plan_codebook = plan_codebook if plan_codebook is not None else int_codebook
    plan_motion = plan_motion if plan_motion is not None else int_motion
    if "planning" in tasks and dset is None:
        raise ConfigurationError("planning task needs a displacement set")
    cells = []
    grid = [("gaussian", lv) for lv in gaussian_levels] + \
           [("dropout", lv) for lv in dropout_levels]
    for cell_idx, (kind, level) in enumerate(grid):
        for de in (True, False):
            cell = ErrorCell(kind=kind, level=level, de=de)
            noise = NoiseSpec(kind=kind, level=level, de=de)
            if "integral" in tasks:
                res = path_integral_suite(
                    int_codebook, int_motion, episodes, steps,
                    rng=make_rng(seed, stream=2 * cell_idx),
                    noise=noise, noise_rng=make_rng(seed, stream=2 * cell_idx + 1))
                cell.integral_mse = res.mse_final
            if "planning" in tasks:
                res = planning_suite(plan_codebook, plan_motion, dset, episodes,
                                     rng=make_rng(seed, stream=10_000 + cell_idx),
                                     max_steps=plan_max_steps, noise=noise,
                                     min_dist=plan_min_dist,
                                     noise_seed=seed * 1_000_003 + cell_idx)
                cell.planning_success = res.success_rate
            cells.append(cell)
    return cells


@dataclass
class NoisyMotionRow:
    std: float
    learned_mse: float
    reference_mse: float


def noisy_motion_suite(codebook: Codebook, motion: MotionModel, stds,
                       episodes: int = 200, steps: int = 40, seed: int = 0,
                       de: bool = True) -> list[NoisyMotionRow]:
    """Motion-noise comparison against raw-coordinate integration.

    The same noisy displacement draws drive both the code-space system and the
    2D-coordinate reference, so the ratio isolates what the representation
    adds to the noise floor.
    """
    rows = []
    for i, std in enumerate(stds):
        if std == 0.0:
            res = path_integral_suite(codebook, motion, episodes, steps,
                                      rng=make_rng(seed, stream=2 * i))
            rows.append(NoisyMotionRow(std=0.0, learned_mse=res.mse_final,
                                       reference_mse=res.mse_final))
            continue
        noise = NoiseSpec(kind="motion", level=float(std), de=de)
        res = path_integral_suite(codebook, motion, episodes, steps,
                                  rng=make_rng(seed, stream=2 * i), noise=noise,
                                  noise_rng=make_rng(seed, stream=2 * i + 1))
        rows.append(NoisyMotionRow(std=float(std), learned_mse=res.mse_final,
                                   reference_mse=res.reference_mse))
    return rows
