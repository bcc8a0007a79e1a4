"""Shared fixtures: domains, analytic models, and disk-cached trained models.

Training-dependent tests reuse checkpoints cached under tests/_cache keyed by
a hash of the exact training configuration, so repeated pytest runs don't
retrain. Delete tests/_cache to force retraining from scratch.
"""

import hashlib
import json
import os

import numpy as np
import pytest

from gridrep.domain import build_domain
from gridrep.model import Kernel
from gridrep.rng import make_rng
from gridrep.theory import analytic_model
from gridrep.training import TrainConfig, TrainResult, train
from gridrep.weights import load_model, save_model

CACHE_DIR = os.path.join(os.path.dirname(__file__), "_cache")


def cached_train(name: str, domain_args: tuple, cfg: TrainConfig,
                 kernel: Kernel | None):
    """Train once per (name, config) and reuse the weight files afterwards."""
    os.makedirs(CACHE_DIR, exist_ok=True)
    key = json.dumps({"domain": domain_args,
                      "cfg": {k: (list(v) if isinstance(v, tuple) else v)
                              for k, v in vars(cfg).items()},
                      "kernel": None if kernel is None else
                      [kernel.family, kernel.sigma]},
                     sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    stem = os.path.join(CACHE_DIR, f"{name}-{digest}")
    dom = build_domain(*domain_args)
    if os.path.exists(stem + ".json"):
        codebook, motion, _ = load_model(stem)
        return codebook, motion
    res: TrainResult = train(dom, cfg, kernel=kernel, rng=make_rng(cfg.seed))
    save_model(stem, res.codebook, res.motion, seed=cfg.seed)
    np.save(stem + "-trace.npy", np.stack([res.trace[k] for k in
                                           ("L0", "L1", "L2", "L3", "total")]))
    return res.codebook, res.motion


def cached_trace(name: str) -> np.ndarray | None:
    """Loss trace (5, iters) for a cached run, if present."""
    for f in os.listdir(CACHE_DIR) if os.path.isdir(CACHE_DIR) else []:
        if f.startswith(name + "-") and f.endswith("-trace.npy"):
            return np.load(os.path.join(CACHE_DIR, f))
    return None


@pytest.fixture(scope="session")
def dom40():
    return build_domain(2, 40, "square")


@pytest.fixture(scope="session")
def dom20_3d():
    return build_domain(3, 20, "square")


@pytest.fixture(scope="session")
def analytic16(dom40):
    """16 analytic blocks with a paper-like alpha spread (96 units)."""
    alphas = np.linspace(4.0, 95.0, 16)
    return analytic_model(dom40, alphas, rng=make_rng(1234),
                          kernel=Kernel("gaussian", 0.08))


@pytest.fixture(scope="session")
def analytic1(dom40):
    """Single alpha=72 analytic block as a (K=1, d=6) model."""
    return analytic_model(dom40, [72.0], base_angles=[0.35], rng=make_rng(7))


@pytest.fixture(scope="session")
def small_trained(dom40):
    """Small but real 2D model (N=20, K=8 x d=6, gaussian) for fast tests."""
    cfg = TrainConfig(K=8, d=6, lambda2=0.0, lambda3=1.0, lambda0=1.0,
                      iterations=1500, batch=8000, normalize_after=1000,
                      pool_walks=40, pool_length=500, seed=11)
    return cached_train("small2d", (2, 20, "square"), cfg, Kernel("gaussian", 0.08))


SINGLE_BLOCK_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def single_block_models():
    out = []
    for seed in SINGLE_BLOCK_SEEDS:
        cfg = TrainConfig(K=1, d=6, lambda2=50.0, lambda3=0.0, lambda0=0.0,
                          alphas=(72.0,), iterations=6000, seed=seed)
        out.append(cached_train(f"accept-single-s{seed}", (2, 40, "square"),
                                cfg, None))
    return out


@pytest.fixture(scope="session")
def multi_block_model():
    cfg = TrainConfig(K=16, d=6, lambda2=50.0, lambda3=5.0, lambda0=1.0,
                      learn_alpha=True, iterations=6000, seed=0)
    return cached_train("accept-multi", (2, 40, "square"), cfg,
                        Kernel("gaussian", 0.08))


@pytest.fixture(scope="session")
def pi_model():
    cfg = TrainConfig(K=16, d=6, lambda2=0.0, lambda3=1.0, lambda0=1.0,
                      iterations=6000, seed=0)
    return cached_train("accept-pi", (2, 40, "square"), cfg,
                        Kernel("gaussian", 0.08))


@pytest.fixture(scope="session")
def plan_model():
    cfg = TrainConfig(K=16, d=6, lambda2=0.0, lambda3=1.0, lambda0=1.0,
                      iterations=6000, seed=0)
    return cached_train("accept-plan", (2, 40, "square"), cfg,
                        Kernel("exponential", 0.3))


@pytest.fixture(scope="session")
def model_1d():
    alphas = tuple(np.geomspace(18.0, 162.0, 16))
    cfg = TrainConfig(K=16, d=6, lambda2=1.0, lambda3=1.0, lambda0=1.0,
                      alphas=alphas, iterations=3000, batch=10000,
                      normalize_after=2000, pool_walks=50, pool_length=500,
                      seed=0)
    return cached_train("accept-1d", (1, 100, "square"), cfg,
                        Kernel("gaussian", 0.08))


@pytest.fixture(scope="session")
def model_3d():
    cfg = TrainConfig(K=8, d=8, lambda2=0.0, lambda3=1.0, lambda0=1.0,
                      iterations=3000, batch=20000, normalize_after=2000,
                      pool_walks=60, pool_length=500, seed=0)
    return cached_train("accept-3d", (3, 20, "square"), cfg,
                        Kernel("gaussian", 0.08))


@pytest.fixture(scope="session")
def hd_model():
    """Cached head-direction model (72 directions, 8 x 6 units)."""
    from gridrep.egocentric import (HeadDirectionConfig, load_head_direction,
                                    save_head_direction, train_head_direction)
    os.makedirs(CACHE_DIR, exist_ok=True)
    stem = os.path.join(CACHE_DIR, "hd72")
    if os.path.exists(stem + ".json"):
        return load_head_direction(stem)
    model = train_head_direction(HeadDirectionConfig(seed=3))
    save_head_direction(stem, model, seed=3)
    return model
