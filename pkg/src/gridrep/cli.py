"""Command-line surface: train models, run evaluation suites, export maps.

Runs are driven by a JSON config (flags override keys) so every experiment is
archivable; a manifest with the config hash and library versions makes reruns
exactly reproducible. Exit codes: 0 success, 2 config error, 3 I/O or weight
format error, 4 assertion failure in --assert mode.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .analysis import (DegenerateMapError, GridnessUndefinedError, autocorrelogram,
                       gridness_report, response_map, scale_alpha_fit)
from .domain import build_displacement_set, build_domain
from .errors import ConfigurationError, GridrepError, WeightFormatError
from .model import Kernel, encode, heatmap
from .navigation import (error_suite, noisy_motion_suite, path_integral_suite,
                         planning_suite)
from .rng import make_rng
from .theory import verify_theorem
from .training import TrainConfig, train
from .weights import load_model, save_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ASSERT = 4

DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": "run",
    "domain": {"dim": 2, "side": 40, "shape": "square"},
    "model": {"K": 16, "d": 6,
              "kernel": {"family": "gaussian", "sigma": 0.08},
              "mode": "parametric"},
    "train": {"lambda1": 1.0, "lambda2": None, "lambda3": None, "lambda0": None,
              "lr": 0.03, "iterations": 6000, "batch": 30000, "T": 1, "c": 1.5,
              "normalize_after": 4000, "max_step": 3, "learn_alpha": True,
              "alphas": None, "no_L2": False, "no_L3": False,
              "nonparametric_M": False, "single_block": False,
              "dtype": "float32", "l2_batch": None},
}


def _merge_config(path: str | None) -> dict:
    """Load and validate a run config; unknown keys are rejected."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from e
        _apply(cfg, user, prefix="")
    return cfg


def _apply(base: dict, user: dict, prefix: str) -> None:
    for key, val in user.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key != "kernel":
            _apply(base[key], val, prefix=where + ".")
        else:
            base[key] = val


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _write_pgm(path: str, values: np.ndarray) -> None:
    """8-bit binary PGM, min-max normalized; NaNs render as 0."""
    a = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(a)
    lo = float(a[finite].min()) if finite.any() else 0.0
    hi = float(a[finite].max()) if finite.any() else 1.0
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.zeros(a.shape, dtype=np.uint8)
    img[finite] = np.clip((a[finite] - lo) * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def cmd_train(args) -> int:
    cfg = _merge_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.iterations is not None:
        cfg["train"]["iterations"] = args.iterations
    if args.out is not None:
        cfg["out_dir"] = args.out
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)

    dom = build_domain(**cfg["domain"])
    kspec = cfg["model"].get("kernel")
    kernel = Kernel(kspec["family"], kspec["sigma"]) if kspec else None
    t = cfg["train"]
    tc = TrainConfig(K=cfg["model"]["K"], d=cfg["model"]["d"], seed=cfg["seed"],
                     nonparametric_M=(cfg["model"].get("mode") == "nonparametric"
                                      or t["nonparametric_M"]),
                     **{k: v for k, v in t.items() if k != "nonparametric_M"})
    if tc.alphas is not None:
        tc.alphas = tuple(tc.alphas)
    res = train(dom, tc, kernel=kernel, rng=make_rng(cfg["seed"]))

    save_model(os.path.join(out, "model"), res.codebook, res.motion, seed=cfg["seed"])
    iters = tc.iterations
    _write_csv(os.path.join(out, "loss.csv"),
               ["iteration", "L0", "L1", "L2", "L3", "total"],
               [(i, res.trace["L0"][i], res.trace["L1"][i], res.trace["L2"][i],
                 res.trace["L3"][i], res.trace["total"][i]) for i in range(iters)])
    manifest = {"config": cfg, "config_hash": _config_hash(cfg), "seed": cfg["seed"],
                "versions": {"python": sys.version.split()[0],
                             "numpy": np.__version__, "gridrep": __version__}}
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"wrote {out}/model.bin ({res.codebook.n_units} units, "
          f"{dom.n_sites} sites)")
    return EXIT_OK


def _default_dset(dim: int):
    if dim == 3:
        return build_displacement_set(3, [(0.05, 24), (0.025, 24)])
    return build_displacement_set(2, [(0.05, 100), (0.025, 100)])


def cmd_eval(args) -> int:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    failures: list[str] = []

    if args.suite == "theorem":
        rep = verify_theorem(alpha=72.0, dx_max=0.025)
        path = os.path.join(out, "theorem.json")
        with open(path, "w") as f:
            json.dump(asdict(rep), f, indent=1)
            f.write("\n")
        print(f"theorem: motion residual {rep.max_motion_residual:.3e} "
              f"(tol {rep.tol_motion:.0e}), isometry {rep.max_isometry_residual:.3e} "
              f"(tol {rep.tol_isometry:.0e})")
        if not rep.passed:
            failures.append("theorem residuals exceed tolerances")
        return _finish(failures, args)

    codebook, motion, _ = load_model(args.model)
    rng = make_rng(args.seed)

    if args.suite == "integral":
        res = path_integral_suite(codebook, motion, args.episodes, args.steps, rng)
        _write_csv(os.path.join(out, "integral.csv"), ["episode", "final_sq_err_grid"],
                   list(enumerate(res.final_errors)))
        _write_csv(os.path.join(out, "integral_curve.csv"), ["step", "mse_grid"],
                   list(enumerate(res.mse_curve, start=1)))
        print(f"integral: mean final MSE {res.mse_final:.3f} grid^2 over "
              f"{args.episodes} episodes x {args.steps} steps")
        if res.mse_final > 2.0:
            failures.append(f"integral MSE {res.mse_final:.3f} > 2.0")
    elif args.suite == "planning":
        dset = _default_dset(codebook.domain.dim)
        res = planning_suite(codebook, motion, dset, args.episodes, rng,
                             max_steps=args.steps if args.steps > 40 else 120)
        _write_csv(os.path.join(out, "planning.csv"),
                   ["episode", "success", "steps", "final_distance"],
                   [(i, int(e.success), e.steps, e.final_distance)
                    for i, e in enumerate(res.episodes)])
        if args.trace:
            with open(os.path.join(out, "episodes.jsonl"), "w") as f:
                for i, e in enumerate(res.episodes):
                    for t in range(e.steps):
                        f.write(json.dumps({
                            "episode": i,
                            "step": t,
                            "position": e.positions[t + 1].tolist(),
                            "delta": (e.positions[t + 1] - e.positions[t]).tolist(),
                            "objective": e.objective[t]}) + "\n")
        print(f"planning: success rate {res.success_rate:.3f}, "
              f"mean steps {res.mean_steps:.1f}")
        if res.success_rate < 0.95:
            failures.append(f"planning success {res.success_rate:.3f} < 0.95")
    elif args.suite == "errors":
        plan_cb, plan_mm = codebook, motion
        if args.plan_model:
            plan_cb, plan_mm, _ = load_model(args.plan_model)
        dset = _default_dset(codebook.domain.dim)
        cells = error_suite(codebook, motion, plan_cb, plan_mm, dset,
                            episodes=args.episodes, seed=args.seed)
        _write_csv(os.path.join(out, "errors.csv"),
                   ["kind", "level", "de", "integral_mse", "planning_success"],
                   [(c.kind, c.level, int(c.de), c.integral_mse, c.planning_success)
                    for c in cells])
        for c in cells:
            print(f"{c.kind:8s} level {c.level:<5g} DE={int(c.de)}  "
                  f"integral MSE {c.integral_mse:8.3f}  "
                  f"planning success {c.planning_success:.3f}")
    elif args.suite == "noisy_motion":
        rows = noisy_motion_suite(codebook, motion, (0.3, 0.6, 0.9, 1.2),
                                  episodes=args.episodes, seed=args.seed)
        _write_csv(os.path.join(out, "noisy_motion.csv"),
                   ["std_grid", "learned_mse", "reference_mse"],
                   [(r.std, r.learned_mse, r.reference_mse) for r in rows])
        for r in rows:
            print(f"std {r.std:.1f}: learned {r.learned_mse:.3f} "
                  f"reference {r.reference_mse:.3f} "
                  f"ratio {r.learned_mse / r.reference_mse:.3f}")
            if r.learned_mse > 1.3 * r.reference_mse:
                failures.append(f"noisy-motion ratio at std {r.std} exceeds 1.3")
    elif args.suite == "gridness":
        rep = gridness_report(codebook)
        _write_csv(os.path.join(out, "gridness.csv"),
                   ["unit", "block", "alpha", "gridness", "is_grid", "scale",
                    "orientation"],
                   [(u.unit, u.block, u.alpha, u.gridness, int(u.is_grid), u.scale,
                     u.orientation) for u in rep.units])
        summary = {"n_units": rep.n_units, "n_grid": rep.n_grid,
                   "fraction": rep.n_grid / rep.n_units}
        scales = [u.scale for u in rep.units if u.scale is not None]
        orients = [u.orientation for u in rep.units if u.orientation is not None]
        if scales:
            hist, edges = np.histogram(scales, bins=np.arange(0.0, 1.0001, 0.05))
            summary["scale_hist"] = {"bin_edges": edges.tolist(),
                                     "counts": hist.tolist()}
        if orients:
            hist, edges = np.histogram(orients, bins=np.arange(0.0, 60.0001, 15.0))
            summary["orientation_hist"] = {"bin_edges": edges.tolist(),
                                           "counts": hist.tolist()}
        if codebook.alphas is not None and not np.isnan(codebook.alphas).any():
            try:
                slope, corr = scale_alpha_fit(rep.block_mean_scales(codebook.K),
                                              codebook.alphas)
                summary["scale_alpha_slope"] = slope
                summary["scale_alpha_corr"] = corr
            except ConfigurationError:
                pass
        with open(os.path.join(out, "gridness_summary.json"), "w") as f:
            json.dump(summary, f, indent=1)
            f.write("\n")
        print(f"gridness: {rep.n_grid}/{rep.n_units} grid units"
              + (f", scale~1/sqrt(alpha) corr {summary['scale_alpha_corr']:.3f}"
                 if "scale_alpha_corr" in summary else ""))
        if rep.n_grid / rep.n_units < 0.6:
            failures.append(f"grid fraction {rep.n_grid / rep.n_units:.2f} < 0.6")
    else:
        raise ConfigurationError(f"unknown suite {args.suite!r}")
    return _finish(failures, args)


def _finish(failures: list[str], args) -> int:
    if failures and getattr(args, "assert_", False):
        for f in failures:
            print(f"ASSERT FAIL: {f}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def cmd_plot(args) -> int:
    codebook, motion, _ = load_model(args.model)
    out = args.out or "plots"
    os.makedirs(out, exist_ok=True)
    dom = codebook.domain
    if dom.dim != 2:
        raise ConfigurationError("plot outputs are defined for 2D models")
    if args.what == "maps":
        for u in range(codebook.n_units):
            m = response_map(codebook, u)
            _write_pgm(os.path.join(out, f"unit{u:03d}.pgm"), m.values)
            np.savetxt(os.path.join(out, f"unit{u:03d}.csv"), m.values, delimiter=",")
        print(f"wrote {codebook.n_units} response maps to {out}/")
    elif args.what == "acorr":
        problems = []
        for u in range(codebook.n_units):
            try:
                ac = autocorrelogram(response_map(codebook, u).values)
            except (DegenerateMapError, GridnessUndefinedError) as e:
                problems.append((u, str(e)))
                continue
            _write_pgm(os.path.join(out, f"acorr{u:03d}.pgm"), ac)
            np.savetxt(os.path.join(out, f"acorr{u:03d}.csv"), ac, delimiter=",")
        if problems:
            with open(os.path.join(out, "acorr_errors.txt"), "w") as f:
                for u, msg in problems:
                    f.write(f"unit {u}: {msg}\n")
        print(f"wrote {codebook.n_units - len(problems)} autocorrelograms to {out}/"
              + (f" ({len(problems)} degenerate units recorded)" if problems else ""))
    elif args.what == "heat":
        center = np.full(dom.dim, 0.5)
        h = heatmap(codebook, encode(codebook, center))
        grid = np.full((dom.side, dom.side), np.nan)
        grid[dom.grid_index[:, 0], dom.grid_index[:, 1]] = h
        _write_pgm(os.path.join(out, "heat_center.pgm"), grid)
        np.savetxt(os.path.join(out, "heat_center.csv"), grid, delimiter=",")
        print(f"wrote center heat map to {out}/")
    else:
        raise ConfigurationError(f"unknown plot kind {args.what!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridrep",
                                description="position-code training and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("train", help="train a model from a JSON config")
    pt.add_argument("-c", "--config", default=None, help="JSON run config")
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--iterations", type=int, default=None)
    pt.add_argument("-o", "--out", default=None, help="output directory")
    pt.set_defaults(fn=cmd_train)

    pe = sub.add_parser("eval", help="run an evaluation suite")
    pe.add_argument("-m", "--model", default=None, help="weight file stem or .bin/.json")
    pe.add_argument("--suite", required=True,
                    choices=["integral", "planning", "errors", "noisy_motion",
                             "gridness", "theorem"])
    pe.add_argument("--episodes", type=int, default=200)
    pe.add_argument("--steps", type=int, default=400)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--plan-model", default=None,
                    help="separate planning model for the error suite")
    pe.add_argument("--trace", action="store_true",
                    help="emit per-step episode traces as JSON lines")
    pe.add_argument("--assert", dest="assert_", action="store_true",
                    help="exit 4 when suite thresholds fail")
    pe.add_argument("-o", "--out", default=None)
    pe.set_defaults(fn=cmd_eval)

    pp = sub.add_parser("plot", help="export raw maps as PGM + CSV")
    pp.add_argument("-m", "--model", required=True)
    pp.add_argument("--what", required=True, choices=["maps", "acorr", "heat"])
    pp.add_argument("-o", "--out", default=None)
    pp.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval" and args.suite != "theorem" and not args.model:
            raise ConfigurationError("eval needs -m/--model for this suite")
        return args.fn(args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except WeightFormatError as e:
        print(f"weight file error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except GridrepError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
