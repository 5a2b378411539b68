"""Command line entry point ``mlmc-elliptic``.

Exit codes: 0 success, 1 error, 2 finished with the bias budget unmet.
All output files are written atomically and carry a comment line with the
config hash and seed; wall-clock times go to the log only so that repeated
runs produce identical files.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import fem
from .config import ExperimentConfig, dump_config, load_config, with_overrides
from .errors import MlmcError
from .mesh import build_hierarchy
from .mlmc import LevelStats, estimate_rates, level_study, run_mc, run_mlmc
from .random_field import element_coefficients, smooth_for_level

log = logging.getLogger("mlmc_elliptic")

OUT_DIR_ENV = "MLMC_ELLIPTIC_OUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_BIAS_UNMET = 0, 1, 2
LEVEL_COLUMNS = ["level", "h", "N", "mean_Y", "var_Y", "cost_per_sample", "kurtosis"]


def _num(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows, cfg_hash, seed):
    buf = io.StringIO()
    buf.write(f"# config_sha256={cfg_hash} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (int, float, np.number)) else v for v in row])
    return buf.getvalue()


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _level_rows(levels):
    return [[s.level, s.h, s.N, s.mean, s.var, s.cost_per_sample, s.kurtosis] for s in levels]


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else x


def _resolve(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    cfg = with_overrides(cfg, seed=args.seed, threads=args.threads)
    out = args.out or os.environ.get(OUT_DIR_ENV) or cfg.out
    return cfg, out


def cmd_run_mlmc(args):
    cfg, out = _resolve(args)
    h = cfg.sha256()
    problem = cfg.mlmc_config(cfg.eps[0]).make_problem()
    runs = []
    unmet = False
    for i, eps in enumerate(cfg.eps):
        res = run_mlmc(cfg.mlmc_config(eps), problem)
        log.info("run-mlmc eps=%g L=%d wall=%.2fs", eps, res.L, res.wall_time)
        unmet |= res.bias_unmet
        write_atomic(
            os.path.join(out, f"mlmc_levels_eps{i}.csv"),
            csv_text(LEVEL_COLUMNS, _level_rows(res.levels), h, cfg.seed),
        )
        runs.append(
            {
                "eps": eps,
                "estimate": res.estimate,
                "L": res.L,
                "N": [s.N for s in res.levels],
                "bias_estimate": res.bias_estimate,
                "variance_estimate": res.variance_estimate,
                "mse_estimate": res.mse_estimate,
                "variance_budget": cfg.variance_fraction * eps**2,
                "bias_budget": math.sqrt(1 - cfg.variance_fraction) * eps,
                "total_cost": res.total_cost,
                "alpha_used": res.alpha_used,
                "bias_unmet": res.bias_unmet,
                "fitted_rates": res.fitted_rates.as_dict() if res.fitted_rates else None,
            }
        )
    summary = {"command": "run-mlmc", "config_sha256": h, "seed": cfg.seed, "runs": runs}
    write_atomic(os.path.join(out, "mlmc_summary.json"), json_text(summary))
    return EXIT_BIAS_UNMET if unmet else EXIT_OK


def cmd_run_mc(args):
    cfg, out = _resolve(args)
    h = cfg.sha256()
    level = cfg.L_max if args.level is None else args.level
    problem = cfg.mlmc_config(cfg.eps[0]).make_problem()
    rows, runs = [], []
    for eps in cfg.eps:
        res = run_mc(cfg.mlmc_config(eps), level, problem)
        log.info("run-mc eps=%g level=%d wall=%.2fs", eps, level, res.wall_time)
        s = res.stats
        rows.append([eps, s.level, s.h, s.N, s.mean, s.var, s.cost_per_sample, s.kurtosis])
        runs.append(
            {
                "eps": eps,
                "level": level,
                "estimate": res.estimate,
                "N": s.N,
                "variance_estimate": res.variance_estimate,
                "variance_budget": cfg.variance_fraction * eps**2,
                "total_cost": res.total_cost,
            }
        )
    header = ["eps", "level", "h", "N", "mean_Q", "var_Q", "cost_per_sample", "kurtosis"]
    write_atomic(os.path.join(out, "mc_levels.csv"), csv_text(header, rows, h, cfg.seed))
    summary = {"command": "run-mc", "config_sha256": h, "seed": cfg.seed, "runs": runs}
    write_atomic(os.path.join(out, "mc_summary.json"), json_text(summary))
    return EXIT_OK


def synthetic_levels(n_levels=5, alpha=1.0, beta=2.0, gamma=2.0):
    """Exact geometric level statistics for the fit self-test."""
    levels = []
    for lev in range(n_levels):
        mean = 3.0 * 2.0 ** (-alpha * lev)
        # two symmetric points reproduce the mean and the unbiased variance
        d = math.sqrt(2.0 ** (-beta * lev) / 2.0)
        s = LevelStats(lev, 2.0**-lev)
        s.add([mean + d, mean - d], [2.0 ** (gamma * lev)] * 2)
        levels.append(s)
    return levels


def cmd_estimate_rates(args):
    cfg, out = _resolve(args)
    h = cfg.sha256()
    if args.synthetic:
        levels = synthetic_levels()
    else:
        problem = cfg.mlmc_config(cfg.eps[0]).make_problem()
        t0 = time.perf_counter()
        levels = level_study(problem, cfg.study_levels, cfg.rate_N)
        log.info("estimate-rates wall=%.2fs", time.perf_counter() - t0)
    fit = estimate_rates(levels)
    write_atomic(os.path.join(out, "rates_levels.csv"), csv_text(LEVEL_COLUMNS, _level_rows(levels), h, cfg.seed))
    summary = {
        "command": "estimate-rates",
        "config_sha256": h,
        "seed": cfg.seed,
        "synthetic": bool(args.synthetic),
        "fit": fit.as_dict(),
    }
    write_atomic(os.path.join(out, "rates_summary.json"), json_text(summary))
    return EXIT_OK


def manufactured_problem(name):
    """``(A, f, u, grad u)`` for the named manufactured solution."""
    pi = np.pi

    def u(p):
        return np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1])

    def grad(p):
        return np.column_stack(
            [pi * np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1]), pi * np.sin(pi * p[:, 0]) * np.cos(pi * p[:, 1])]
        )

    if name == "isotropic":
        return np.eye(2), (lambda p: 2 * pi**2 * u(p)), u, grad
    if name == "anisotropic":
        return np.diag([2.0, 1.0]), (lambda p: 3 * pi**2 * u(p)), u, grad
    if name == "zero":
        return np.eye(2), None, (lambda p: np.zeros(len(p))), (lambda p: np.zeros((len(p), 2)))
    raise MlmcError(f"unknown manufactured problem {name!r}")


def fem_convergence_table(problem="isotropic", m0=4, levels=4, rel_tol=fem.DEFAULT_REL_TOL):
    A, f, u, grad = manufactured_problem(problem)
    rows = []
    for mesh in build_hierarchy(m0, levels).meshes:
        coeffs = np.broadcast_to(A, (mesh.n_triangles, 2, 2))
        sol, it, _ = fem.solve_cg(fem.assemble(mesh, coeffs, f), rel_tol)
        rows.append((mesh.level, mesh.h, fem.h1_error(sol, grad), fem.l2_error(sol, u), it))
    return rows


def convergence_rate(hs, errors):
    """Slope of ``log err`` against ``log h``; ``None`` if any error is zero."""
    hs, errors = np.asarray(hs), np.asarray(errors)
    if np.any(errors <= 0):
        return None
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def cmd_fem_convergence(args):
    cfg, out = _resolve(args)
    h = cfg.sha256()
    rows = fem_convergence_table(args.problem, args.m0 or cfg.m0, args.levels, cfg.rel_tol)
    header = ["level", "h", "h1_error", "l2_error", "cg_iterations"]
    write_atomic(os.path.join(out, f"fem_convergence_{args.problem}.csv"), csv_text(header, rows, h, cfg.seed))
    hs = [r[1] for r in rows]
    summary = {
        "command": "fem-convergence",
        "problem": args.problem,
        "config_sha256": h,
        "h1_rate": convergence_rate(hs, [r[2] for r in rows]),
        "l2_rate": convergence_rate(hs, [r[3] for r in rows]),
        "max_h1_error": max(r[2] for r in rows),
        "max_l2_error": max(r[3] for r in rows),
    }
    write_atomic(os.path.join(out, f"fem_convergence_{args.problem}.json"), json_text(summary))
    return EXIT_OK


def cmd_sample_field(args):
    cfg, out = _resolve(args)
    h = cfg.sha256()
    level = cfg.L_max if args.level is None else args.level
    index = 0 if args.index is None else args.index
    problem = cfg.mlmc_config(cfg.eps[0]).make_problem()
    if not 0 <= level <= problem.hierarchy.L:
        raise MlmcError(f"level {level} outside 0..{problem.hierarchy.L}")
    mesh = problem.hierarchy[level]
    fields = [f[:, 0] for f in problem.fields(level, [index])]
    node_rows = [[x, y, *vals] for (x, y), *vals in zip(mesh.nodes.tolist(), *[f.tolist() for f in fields])]
    node_header = ["x", "y"] + [f"g{k + 1}" for k in range(len(fields))]
    passes = problem.smoothing_passes(level)
    A = element_coefficients(cfg.model, mesh, [smooth_for_level(f, mesh, passes) for f in fields])
    elem_rows = [
        [c[0], c[1], a[0, 0], a[0, 1], a[1, 1]] for c, a in zip(mesh.centroids.tolist(), A)
    ]
    stem = os.path.join(out, f"field_L{level}_i{index}")
    write_atomic(stem + "_nodes.csv", csv_text(node_header, node_rows, h, cfg.seed))
    write_atomic(stem + "_elements.csv", csv_text(["x", "y", "A11", "A12", "A22"], elem_rows, h, cfg.seed))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mlmc-elliptic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, metavar="PATH")
        sp.add_argument("--out", metavar="DIR", help=f"output directory (overrides ${OUT_DIR_ENV})")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--threads", type=int, metavar="N")

    sp = sub.add_parser("run-mlmc", help="adaptive MLMC for every eps in the config")
    common(sp)
    sp.set_defaults(func=cmd_run_mlmc)

    sp = sub.add_parser("run-mc", help="single-level MC baseline")
    common(sp)
    sp.add_argument("--level", type=int, metavar="N")
    sp.set_defaults(func=cmd_run_mc)

    sp = sub.add_parser("estimate-rates", help="fixed-N level study and rate fit")
    common(sp, config_required=False)
    sp.add_argument("--synthetic", action="store_true", help="fit exact synthetic level data")
    sp.set_defaults(func=cmd_estimate_rates)

    sp = sub.add_parser("fem-convergence", help="deterministic manufactured-solution rates")
    common(sp, config_required=False)
    sp.add_argument("--problem", choices=["isotropic", "anisotropic", "zero"], default="isotropic")
    sp.add_argument("--m0", type=int)
    sp.add_argument("--levels", type=int, default=4)
    sp.set_defaults(func=cmd_fem_convergence)

    sp = sub.add_parser("sample-field", help="dump one field realization")
    common(sp)
    sp.add_argument("--level", type=int, metavar="N")
    sp.add_argument("--index", type=int, metavar="N")
    sp.set_defaults(func=cmd_sample_field)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (MlmcError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
