"""Command-line entry point ``infogeom``.

Subcommands
-----------
run          Monte-Carlo NMSE experiment, writes results.csv, summary.json, traces.
bounds       Sufficient damping bounds of an operator, as JSON.
probe        Fixed-point versus MMSE gap as the number of observations grows.
fixed-point  Second-order fixed point, beta and fixed-point residuals, as JSON.

Exit status is 0 on success, 2 on a configuration or argument error and 3
when most trials of a run diverged (or all of them failed).
"""

import argparse
import json
import sys

import numpy as np

from .analysis import PROBE_COLUMNS, fixed_point_residuals, fixed_point_gap_probe, write_probe_csv
from .eiga import eiga_run
from .exceptions import (
    ConfigError,
    DivergenceError,
    InvalidArgumentError,
    RunError,
    UnsupportedConfigurationError,
)
from .harness import DESK_DENSE, DESK_STRUCTURED, ExperimentConfig, build_problem, run_and_emit
from .model import observe
from .operators import DenseOperator, StructuredOperator, damping_bounds, default_phase_shifts
from .oracle import nu_map, solve_nu_fixed_point

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _csv_list(text, cast, name):
    try:
        items = [cast(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--{name}: {exc}") from exc
    if not items:
        raise ConfigError(f"--{name} must not be empty")
    return items


def _parse_damping(text):
    """``0.21`` (applies to eiga) or ``eiga=0.21,iga=0.2``."""
    if "=" not in text:
        try:
            return {"eiga": float(text)}
        except ValueError as exc:
            raise ConfigError(f"--damping: {exc}") from exc
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise ConfigError(f"--damping: {exc}") from exc
    return out


def _config_from_args(args):
    data = {}
    if args.config:
        data = ExperimentConfig.load(args.config).to_dict()
    if args.out is not None:
        data["output_dir"] = args.out
    if args.seed is not None:
        data["seed"] = args.seed
    if args.estimators is not None:
        data["estimators"] = _csv_list(args.estimators, str.strip, "estimators")
    if args.snr is not None:
        data["snr_db_list"] = _csv_list(args.snr, float, "snr")
    if args.trials is not None:
        data["trials"] = args.trials
    if args.damping is not None:
        data["damping"] = {**data.get("damping", {}), **_parse_damping(args.damping)}
    if args.workers is not None:
        data["workers"] = args.workers
    if args.max_iter is not None:
        data["max_iter"] = args.max_iter
    if args.tol is not None:
        data["tol"] = args.tol
    if args.timing:
        data["record_timing"] = True
    if args.no_traces:
        data["save_traces"] = False
    return ExperimentConfig.from_dict(data)


def cmd_run(args):
    config = _config_from_args(args)
    try:
        result = run_and_emit(config)
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for r in result.records:
        print(f"{r.estimator:5s} snr={r.snr_db:g} dB  nmse={r.nmse_db:.3f} dB  "
              f"iters={r.mean_iterations:.1f}  trials={r.trials}")
    print(f"wrote {config.output_dir}")
    if result.divergence_dominated:
        print(f"error: {result.failed_runs} of {result.total_runs} runs failed", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _operator_from_args(args):
    if args.dense is not None:
        return DenseOperator.load(args.dense), None
    if args.dense_random is not None:
        n, m = args.dense_random
        return DenseOperator.random_unit(n, m, args.seed), None
    n_rv, n_rh, n_p = args.dims
    ff = tuple(args.fine)
    shifts = default_phase_shifts(args.users, n_p, ff[2])
    full_dim = ff[2] * n_p * ff[0] * n_rv * ff[1] * n_rh
    n_cols = full_dim if args.columns is None else args.columns
    if not 1 <= n_cols <= full_dim:
        raise InvalidArgumentError(f"--columns must lie in [1, {full_dim}]")
    return StructuredOperator(n_rv, n_rh, n_p, ff, shifts, list(range(n_cols))), args.users


def cmd_bounds(args):
    op, k_users = _operator_from_args(args)
    bounds = damping_bounds(op, k_users, method=args.method)
    out = bounds.to_dict()
    out["tightest"] = bounds.tightest()
    out["n_obs"], out["n_vars"] = op.shape
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_probe(args):
    sizes = [(args.m, n) for n in args.n]
    rows = fixed_point_gap_probe(None, sizes, args.noise_var, args.seeds, calibrate=not args.exact_noise,
                          base_seed=args.seed)
    print(",".join(PROBE_COLUMNS))
    for row in rows:
        print(",".join(f"{getattr(row, c):.6g}" for c in PROBE_COLUMNS))
    if args.out:
        write_probe_csv(rows, args.out)
    return EXIT_OK


def cmd_fixed_point(args):
    scenario = dict(DESK_DENSE if args.kind == "dense-random" else DESK_STRUCTURED)
    if args.config:
        scenario = ExperimentConfig.load(args.config).scenario
    problem = build_problem(scenario, args.seed, args.snr)
    op, prior = problem.op, problem.prior
    y = observe(op, problem.h, prior.noise_var, problem.noise_seed)
    n = op.n_rows
    nu_star = solve_nu_fixed_point(prior, n)
    lam = 1.0 / (1.0 / prior.variances - nu_star)
    beta = prior.virtual_noise_var + float(lam.sum())
    out = {
        "n_obs": n,
        "n_vars": op.n_cols,
        "noise_var": prior.noise_var,
        "virtual_noise_var": prior.virtual_noise_var,
        "nu_star_min": float(nu_star.min()),
        "nu_star_max": float(nu_star.max()),
        "nu_star_mean": float(nu_star.mean()),
        "beta_star": beta,
        "nu_map_residual": float(np.max(np.abs(nu_map(nu_star, prior, n) - nu_star))),
    }
    try:
        res = eiga_run(op, y, prior, args.damping, args.max_iter, args.tol)
    except DivergenceError as exc:
        out["eiga"] = {"diverged": True, "iteration": exc.iteration}
        print(json.dumps(out, indent=2))
        return EXIT_DIVERGED
    out["eiga"] = {
        "diverged": False,
        "converged": res.converged,
        "iterations": res.iterations,
        "damping": res.damping,
        "beta": res.beta,
        **fixed_point_residuals(res, op, y, prior).to_dict(),
    }
    if args.show_nu:
        out["nu_star"] = nu_star.tolist()
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="infogeom", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an NMSE experiment")
    run.add_argument("--config", help="JSON experiment config; flags override its values")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--estimators", help="comma list from eiga,iga,mmse")
    run.add_argument("--snr", help="comma list of SNRs in dB")
    run.add_argument("--trials", type=int)
    run.add_argument("--damping", help="'0.21' for eiga, or 'eiga=0.21,iga=0.2'")
    run.add_argument("--workers", type=int)
    run.add_argument("--max-iter", type=int)
    run.add_argument("--tol", type=float)
    run.add_argument("--timing", action="store_true", help="record wall time per iteration")
    run.add_argument("--no-traces", action="store_true", help="skip per-trial trace files")
    run.set_defaults(func=cmd_run)

    bounds = sub.add_parser("bounds", help="print sufficient damping bounds as JSON")
    src = bounds.add_mutually_exclusive_group()
    src.add_argument("--dense", metavar="PATH", help="binary dense operator file")
    src.add_argument("--dense-random", nargs=2, type=int, metavar=("N", "M"),
                     help="random unit-magnitude dense operator")
    bounds.add_argument("--dims", nargs=3, type=int, default=[4, 4, 16], metavar=("NRV", "NRH", "NP"))
    bounds.add_argument("--fine", nargs=3, type=int, default=[2, 2, 2], metavar=("FV", "FH", "FTAU"))
    bounds.add_argument("--users", type=int, default=1)
    bounds.add_argument("--columns", type=int, help="keep the first COLUMNS grid columns (default all)")
    bounds.add_argument("--seed", type=int, default=0)
    bounds.add_argument("--method", choices=["auto", "exact", "power_iteration"], default="auto")
    bounds.set_defaults(func=cmd_bounds)

    probe = sub.add_parser("probe", help="fixed-point versus MMSE gap table")
    probe.add_argument("--m", type=int, default=8, help="number of variables")
    probe.add_argument("--n", type=int, nargs="+", default=[64, 256, 1024], help="observation counts")
    probe.add_argument("--noise-var", type=float, default=0.1)
    probe.add_argument("--seeds", type=int, default=50)
    probe.add_argument("--seed", type=int, default=0, help="base seed")
    probe.add_argument("--exact-noise", action="store_true", help="use the true noise as virtual noise")
    probe.add_argument("--out", help="also write the table as CSV")
    probe.set_defaults(func=cmd_probe)

    fp = sub.add_parser("fixed-point", help="print nu*, beta* and fixed-point residuals")
    fp.add_argument("--config", help="take the scenario from this experiment config")
    fp.add_argument("--kind", choices=["dense-random", "structured"], default="dense-random")
    fp.add_argument("--snr", type=float, default=10.0)
    fp.add_argument("--seed", type=int, default=0)
    fp.add_argument("--damping", type=float)
    fp.add_argument("--max-iter", type=int, default=20000)
    fp.add_argument("--tol", type=float, default=1e-10)
    fp.add_argument("--show-nu", action="store_true", help="include the full nu* vector")
    fp.set_defaults(func=cmd_fixed_point)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError, UnsupportedConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
