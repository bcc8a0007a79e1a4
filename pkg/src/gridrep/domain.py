"""Discretized spatial/temporal domains, trajectory simulation, and motion sets.

The unit box [0, 1]^dim is discretized into `side` lattice sites per axis with
spacing 1/side; site coordinates are cell centers. An optional mask (disc or
triangle, 2D only) restricts the legal sites. One grid unit always means a
displacement of 1/side.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError

SHAPES = ("square", "disc", "triangle")


@dataclass(frozen=True)
class Domain:
    """A discretized region of [0, 1]^dim with an optional mask.

    Sites are indexed compactly: `coords[s]` is the coordinate of masked-in
    site s, and `grid_to_site` maps a full-lattice flat index to the compact
    index (-1 where masked out).
    """

    dim: int
    side: int
    shape: str
    mask: np.ndarray                 # bool over the full lattice, shape (side,)*dim
    coords: np.ndarray               # (n_sites, dim) float64 cell-center coordinates
    grid_index: np.ndarray           # (n_sites, dim) int lattice coordinates
    grid_to_site: np.ndarray         # flat full-lattice -> compact site id, -1 outside
    spacing: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "spacing", 1.0 / self.side)

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    def site_of_grid(self, grid: np.ndarray) -> np.ndarray:
        """Compact site ids for integer lattice points (vectorized); -1 if outside."""
        grid = np.asarray(grid)
        flat = np.ravel_multi_index(np.moveaxis(grid, -1, 0), (self.side,) * self.dim, mode="wrap")
        inside = np.all((grid >= 0) & (grid < self.side), axis=-1)
        out = np.where(inside, self.grid_to_site[flat], -1)
        return out

    def contains(self, point: np.ndarray) -> np.ndarray:
        """True where a continuous point lies in [0,1]^dim and its cell is masked in."""
        point = np.asarray(point, dtype=float)
        inside = np.all((point >= 0.0) & (point <= 1.0), axis=-1)
        cell = np.clip((point * self.side).astype(int), 0, self.side - 1)
        flat = np.ravel_multi_index(np.moveaxis(cell, -1, 0), (self.side,) * self.dim)
        return inside & self.mask.ravel()[flat]

    def nearest_site(self, point: np.ndarray) -> int:
        """Compact id of the masked-in site nearest to a continuous point."""
        d2 = np.sum((self.coords - np.asarray(point, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))


def _shape_mask(dim: int, side: int, shape: str) -> np.ndarray:
    if shape == "square":
        return np.ones((side,) * dim, dtype=bool)
    if dim != 2:
        raise ConfigurationError(f"shape {shape!r} is only defined for dim=2")
    centers = (np.arange(side) + 0.5) / side
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    if shape == "disc":
        return (xx - 0.5) ** 2 + (yy - 0.5) ** 2 <= 0.25
    if shape == "triangle":
        # convention: right triangle {x1 + x2 <= 1}, evaluated at cell centers
        return xx + yy <= 1.0
    raise ConfigurationError(f"unknown shape {shape!r}")


def build_domain(dim: int, side: int, shape: str = "square") -> Domain:
    """Construct a Domain; square/cube for any dim, disc and triangle for 2D."""
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"dim must be 1, 2 or 3, got {dim}")
    if side < 4:
        raise ConfigurationError(f"side must be >= 4, got {side}")
    if shape not in SHAPES:
        raise ConfigurationError(f"shape must be one of {SHAPES}, got {shape!r}")
    mask = _shape_mask(dim, side, shape)
    grid = np.argwhere(mask)                      # (n_sites, dim) lattice coords
    coords = (grid + 0.5) / side
    grid_to_site = np.full(side**dim, -1, dtype=np.int64)
    flat = np.ravel_multi_index(grid.T, (side,) * dim)
    grid_to_site[flat] = np.arange(grid.shape[0])
    return Domain(dim=dim, side=side, shape=shape, mask=mask,
                  coords=coords, grid_index=grid, grid_to_site=grid_to_site)


@dataclass
class Trajectory:
    """A simulated walk: start site plus integer grid-unit motions.

    positions[t] holds the compact site id after t motions, so
    positions[0] is the start and len(positions) == len(motions) + 1.
    """

    domain: Domain
    positions: np.ndarray    # (T+1,) compact site ids
    motions: np.ndarray      # (T, dim) int grid-unit offsets

    def position_coords(self) -> np.ndarray:
        return self.domain.coords[self.positions]

    def displacement_coords(self) -> np.ndarray:
        return self.motions * self.domain.spacing


def simulate_walks(domain: Domain, n_walks: int, length: int, max_step: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Simulate n_walks independent walks of `length` steps in lockstep.

    Per-axis offsets are uniform integers in [-max_step, max_step]; a step that
    would leave the mask is rejected and redrawn, which preserves the uniform
    step law conditioned on legality. Returns (positions (n, T+1) grid coords
    stacked as site ids, motions (n, T, dim)).
    """
    if length < 1:
        raise ConfigurationError("length must be >= 1")
    if max_step < 1:
        raise ConfigurationError("max_step must be >= 1")
    start = rng.integers(0, domain.n_sites, size=n_walks)
    positions = np.empty((n_walks, length + 1), dtype=np.int64)
    motions = np.empty((n_walks, length, domain.dim), dtype=np.int64)
    positions[:, 0] = start
    cur = domain.grid_index[start].copy()        # (n, dim) lattice coords
    for t in range(length):
        pending = np.arange(n_walks)
        step = np.empty((n_walks, domain.dim), dtype=np.int64)
        for _ in range(10_000):
            prop = rng.integers(-max_step, max_step + 1, size=(pending.size, domain.dim))
            site = domain.site_of_grid(cur[pending] + prop)
            ok = site >= 0
            step[pending[ok]] = prop[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
        else:  # a masked-in site always has itself as a legal move
            raise AssertionError("no legal move found; mask is inconsistent")
        cur += step
        positions[:, t + 1] = domain.site_of_grid(cur)
        motions[:, t] = step
    return positions, motions


def sample_trajectory(domain: Domain, length: int = 1000, max_step: int = 3,
                      rng: Optional[np.random.Generator] = None) -> Trajectory:
    """Simulate one agent trajectory that never leaves the mask."""
    if rng is None:
        raise ConfigurationError("sample_trajectory requires an explicit seeded rng")
    positions, motions = simulate_walks(domain, 1, length, max_step, rng)
    return Trajectory(domain=domain, positions=positions[0], motions=motions[0])


@dataclass
class TrajectoryPool:
    """A reservoir of simulated walks from which training windows are drawn."""

    domain: Domain
    positions: np.ndarray    # (n_walks, length+1) site ids
    motions: np.ndarray      # (n_walks, length, dim)
    max_step: int

    @property
    def n_walks(self) -> int:
        return self.positions.shape[0]

    @property
    def length(self) -> int:
        return self.motions.shape[1]


def build_pool(domain: Domain, n_walks: int, length: int, max_step: int,
               rng: np.random.Generator) -> TrajectoryPool:
    positions, motions = simulate_walks(domain, n_walks, length, max_step, rng)
    return TrajectoryPool(domain=domain, positions=positions, motions=motions, max_step=max_step)


@dataclass
class MotionBatch:
    """Consecutive trajectory windows: start site, T grid-unit motions, end site."""

    idx_start: np.ndarray    # (B,)
    deltas: np.ndarray       # (B, T, dim) int grid units
    idx_end: np.ndarray      # (B,)


@dataclass
class PairBatch:
    """Uniform site pairs for the adjacency loss."""

    idx_x: np.ndarray
    idx_y: np.ndarray


def sample_batches(domain: Domain, batch: int, T: int, max_step: int,
                   rng: np.random.Generator,
                   pool: Optional[TrajectoryPool] = None) -> tuple[MotionBatch, PairBatch]:
    """Draw one iteration's motion windows and position pairs.

    Motion windows are consecutive sub-sequences of simulated trajectories
    (from `pool` if given, otherwise from walks simulated on the spot); the
    (x, y) pairs are uniform over masked-in sites.
    """
    if batch < 1 or T < 1:
        raise ConfigurationError("batch and T must be >= 1")
    if pool is None:
        n_walks = max(1, batch // max(1, 1000 - T))
        pool = build_pool(domain, n_walks, max(T, 1000), max_step, rng)
    if pool.length < T:
        raise ConfigurationError(f"pool windows of length {pool.length} cannot supply T={T}")
    w = rng.integers(0, pool.n_walks, size=batch)
    t0 = rng.integers(0, pool.length - T + 1, size=batch)
    idx_start = pool.positions[w, t0]
    idx_end = pool.positions[w, t0 + T]
    steps = t0[:, None] + np.arange(T)[None, :]
    deltas = pool.motions[w[:, None], steps]     # (B, T, dim)
    pairs = PairBatch(idx_x=rng.integers(0, domain.n_sites, size=batch),
                      idx_y=rng.integers(0, domain.n_sites, size=batch))
    return MotionBatch(idx_start=idx_start, deltas=deltas, idx_end=idx_end), pairs


@dataclass(frozen=True)
class DisplacementSet:
    """Candidate motions for planning: base directions plus power multipliers.

    Each candidate is (base_index, k); its effective displacement is
    k * base_deltas[base_index] and it is realized by applying the base
    motion matrix k times.
    """

    dim: int
    base_deltas: np.ndarray          # (n_base, dim) float, domain lengths
    candidates: np.ndarray           # (n_cand, 2) int: [base_index, multiplier]
    description: dict

    @property
    def deltas(self) -> np.ndarray:
        """Effective displacement of every candidate, (n_cand, dim)."""
        return self.base_deltas[self.candidates[:, 0]] * self.candidates[:, 1:2]

    @property
    def n_candidates(self) -> int:
        return self.candidates.shape[0]


def build_displacement_set(dim: int, rings: list[tuple[float, int]],
                           multipliers: Optional[list[int]] = None) -> DisplacementSet:
    """Build the allowed-motion set from (radius, n_directions) rings.

    2D rings place n evenly spaced angles; 3D rings place n inclinations
    (midpoints of [0, pi] to keep entries distinct away from the poles)
    times n azimuths. Multipliers k > 1 add entries at k times each base
    displacement, marked for realization via motion-matrix powers.
    """
    if dim not in (2, 3):
        raise ConfigurationError("displacement sets are defined for dim 2 and 3")
    rows = []
    for radius, n in rings:
        if radius <= 0 or n < 1:
            raise ConfigurationError("ring radii must be > 0 and directions >= 1")
        if dim == 2:
            ang = 2.0 * np.pi * np.arange(n) / n
            rows.append(np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1))
        else:
            incl = np.pi * (np.arange(n) + 0.5) / n
            azim = 2.0 * np.pi * np.arange(n) / n
            ii, aa = np.meshgrid(incl, azim, indexing="ij")
            rows.append(np.stack([radius * np.sin(ii) * np.cos(aa),
                                  radius * np.sin(ii) * np.sin(aa),
                                  radius * np.cos(ii)], axis=-1).reshape(-1, dim))
    base = np.concatenate(rows, axis=0)
    mults = [1] + [int(k) for k in (multipliers or []) if int(k) != 1]
    cand = np.array([(i, k) for k in mults for i in range(base.shape[0])], dtype=np.int64)
    return DisplacementSet(dim=dim, base_deltas=base, candidates=cand,
                           description={"rings": [(float(r), int(n)) for r, n in rings],
                                        "multipliers": mults})
