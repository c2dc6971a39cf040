"""Monte-Carlo NMSE experiments.

An :class:`ExperimentConfig` names a scenario, a list of SNRs, the
estimators to compare and the number of trials. :func:`run_experiment`
builds one problem per trial (shared by every estimator and SNR so that the
comparison uses common random numbers), runs each estimator and aggregates
per-trial squared errors into NMSE values. :func:`emit` writes the results.

Trial ``k`` derives all its randomness from ``derive_seed(config.seed, k)``,
so results do not depend on the number of worker processes.
"""

import csv
import json
import math
import subprocess
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .eiga import eiga_run, write_eiga_trace
from .exceptions import ConfigError, DivergenceError, InvalidStateError, RunError
from .iga import iga_run, write_iga_trace
from .model import PowerSpec, build_prior, generate_power_spec, observe, sample_channel
from .operators import (
    DenseOperator,
    StructuredOperator,
    aggregate_user_powers,
    default_phase_shifts,
)
from .oracle import mmse
from .rng import derive_seed

ESTIMATORS = ("eiga", "iga", "mmse")
NMSE_FLOOR_DB = -300.0
# no sufficient damping bound is known for IGA; fixed heuristic default
IGA_DEFAULT_DAMPING = 0.2

DESK_STRUCTURED = {
    "kind": "structured",
    "n_rv": 4,
    "n_rh": 4,
    "n_p": 16,
    "fine_factors": [2, 2, 2],
    "k_users": 4,
    "phase_shifts": None,
    "n_clusters": 8,
    "cluster_width": 4,
    "calibrate_virtual_noise": True,
}

DESK_DENSE = {
    "kind": "dense-random",
    "n_obs": 32,
    "n_vars": 8,
    "calibrate_virtual_noise": True,
}


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _validate_scenario(sc):
    _require(isinstance(sc, dict), "scenario must be an object")
    kind = sc.get("kind")
    if kind == "structured":
        sc = {**DESK_STRUCTURED, **sc}
        for key in ("n_rv", "n_rh", "n_p", "k_users", "n_clusters", "cluster_width"):
            _require(_is_int(sc[key]) and sc[key] >= 1, f"scenario.{key} must be a positive integer")
        ff = sc["fine_factors"]
        _require(isinstance(ff, (list, tuple)) and len(ff) == 3 and all(_is_int(f) and f >= 1 for f in ff),
                 "scenario.fine_factors must be three positive integers")
        n_delay = ff[2] * sc["n_p"]
        span = n_delay // sc["k_users"]
        _require(span >= 1, "scenario.k_users exceeds the number of delay bins")
        n_beams = ff[0] * sc["n_rv"] * ff[1] * sc["n_rh"]
        _require(sc["n_clusters"] * sc["cluster_width"] <= n_beams * span,
                 "clusters do not fit in one user's beam-delay block")
        if sc["phase_shifts"] is not None:
            ps = sc["phase_shifts"]
            _require(isinstance(ps, list) and len(ps) == sc["k_users"]
                     and all(_is_int(s) and 0 <= s < n_delay for s in ps),
                     "scenario.phase_shifts must list one shift in [0, F_tau N_p) per user")
        n_obs = sc["n_rv"] * sc["n_rh"] * sc["n_p"]
        max_vars = sc["k_users"] * sc["n_clusters"] * sc["cluster_width"]
        if sc["calibrate_virtual_noise"]:
            _require(max_vars < n_obs, "virtual noise calibration needs M < N")
    elif kind == "dense-random":
        sc = {**DESK_DENSE, **sc}
        for key in ("n_obs", "n_vars"):
            _require(_is_int(sc[key]) and sc[key] >= 1, f"scenario.{key} must be a positive integer")
        _require(sc["n_obs"] >= 2, "scenario.n_obs must be at least 2")
        if sc.get("seed") is not None:
            _require(_is_int(sc["seed"]) and sc["seed"] >= 0, "scenario.seed must be a nonnegative integer")
        if sc["calibrate_virtual_noise"]:
            _require(sc["n_vars"] < sc["n_obs"], "virtual noise calibration needs M < N")
    else:
        raise ConfigError(f"scenario.kind must be 'structured' or 'dense-random', got {kind!r}")
    _require(isinstance(sc["calibrate_virtual_noise"], bool), "scenario.calibrate_virtual_noise must be boolean")
    return sc


@dataclass
class ExperimentConfig:
    """Experiment description; see the README for the JSON layout.

    Parameters
    ----------
    scenario : dict
        ``{"kind": "structured", ...}`` or ``{"kind": "dense-random", ...}``.
        Missing keys fall back to the desk-scale defaults.
    snr_db_list : list of float
    estimators : list of str
        Subset of ``("eiga", "iga", "mmse")``.
    damping : dict, optional
        Per-estimator damping factors in (0, 1].
    trials : int
    max_iter : int
    tol : float
    seed : int
    output_dir : str
    workers : int
        Worker processes for the trial loop.
    record_timing : bool
        Measure wall time per iteration. Off by default because timings
        make ``results.csv`` nondeterministic.
    save_traces : bool
        Write per-trial convergence traces.
    """

    scenario: dict = field(default_factory=lambda: dict(DESK_STRUCTURED))
    snr_db_list: list = field(default_factory=lambda: [10.0])
    estimators: list = field(default_factory=lambda: ["eiga", "mmse"])
    damping: dict = field(default_factory=dict)
    trials: int = 10
    max_iter: int = 2000
    tol: float = 1e-8
    seed: int = 0
    output_dir: str = "results"
    workers: int = 1
    record_timing: bool = False
    save_traces: bool = True

    def __post_init__(self):
        self.scenario = _validate_scenario(self.scenario)
        _require(isinstance(self.snr_db_list, (list, tuple)) and len(self.snr_db_list) > 0,
                 "snr_db_list must be a nonempty list")
        _require(all(_is_real(s) for s in self.snr_db_list), "snr_db_list entries must be finite numbers")
        self.snr_db_list = [float(s) for s in self.snr_db_list]
        _require(isinstance(self.estimators, (list, tuple)) and len(self.estimators) > 0,
                 "estimators must be a nonempty list")
        for est in self.estimators:
            _require(est in ESTIMATORS, f"unknown estimator {est!r}")
        _require(len(set(self.estimators)) == len(self.estimators), "estimators must be unique")
        self.estimators = list(self.estimators)
        _require(isinstance(self.damping, dict), "damping must be an object")
        for est, d in self.damping.items():
            _require(est in ESTIMATORS, f"damping given for unknown estimator {est!r}")
            if d is not None:
                _require(_is_real(d) and 0 < d <= 1, f"damping[{est}] must lie in (0, 1]")
        _require(_is_int(self.trials) and self.trials >= 1, "trials must be a positive integer")
        _require(_is_int(self.max_iter) and self.max_iter >= 1, "max_iter must be a positive integer")
        _require(_is_real(self.tol) and self.tol > 0, "tol must be positive")
        _require(_is_int(self.seed) and 0 <= self.seed < 2**63, "seed must be a nonnegative integer")
        _require(_is_int(self.workers) and self.workers >= 1, "workers must be a positive integer")
        _require(isinstance(self.record_timing, bool), "record_timing must be boolean")
        _require(isinstance(self.save_traces, bool), "save_traces must be boolean")
        self.output_dir = str(self.output_dir)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        _require(isinstance(data, dict), "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        _require(not unknown, f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class ResultRecord:
    """One aggregated (estimator, SNR) cell."""

    estimator: str
    snr_db: float
    nmse_db: float
    mean_iterations: float
    wall_time_per_iteration: float
    trials: int


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRecord))


@dataclass
class Problem:
    """One trial's operator, prior and true coefficient vector."""

    op: object
    prior: object
    h: np.ndarray
    noise_seed: int


def _noise_var(snr_db):
    # unit pilot power: SNR = 1 / noise_var
    return 10.0 ** (-snr_db / 10.0)


def build_problem(scenario, seed, snr_db):
    """Construct the operator, prior and channel for one trial.

    Powers, channel and the normalized noise are drawn from ``seed``; only
    the noise level depends on ``snr_db``.
    """
    sc = _validate_scenario(scenario)
    noise_var = _noise_var(snr_db)
    if sc["kind"] == "dense-random":
        n, m = sc["n_obs"], sc["n_vars"]
        op_seed = sc["seed"] if sc.get("seed") is not None else derive_seed(seed, 1)
        op = DenseOperator.random_unit(n, m, op_seed)
        spec = generate_power_spec(m, 1, m, derive_seed(seed, 2))
        prior, _ = build_prior(spec, noise_var, n, sc["calibrate_virtual_noise"])
    else:
        n_rv, n_rh, n_p = sc["n_rv"], sc["n_rh"], sc["n_p"]
        ff = tuple(sc["fine_factors"])
        k = sc["k_users"]
        shifts = sc["phase_shifts"] or default_phase_shifts(k, n_p, ff[2])
        n_beams = ff[0] * n_rv * ff[1] * n_rh
        span = (ff[2] * n_p) // k
        users = []
        for user in range(k):
            spec = generate_power_spec(n_beams * span, sc["n_clusters"], sc["cluster_width"],
                                       derive_seed(seed, 3, user))
            # column-major vec of the user's (beams x delays) power matrix
            users.append(spec.powers.reshape(span, n_beams).T)
        omega = aggregate_user_powers(users, shifts, n_rv, n_rh, n_p, ff)
        n = n_rv * n_rh * n_p
        prior, idx = build_prior(PowerSpec(omega.size, omega), noise_var, n, sc["calibrate_virtual_noise"])
        op = StructuredOperator(n_rv, n_rh, n_p, ff, shifts, idx)
    h = sample_channel(prior, derive_seed(seed, 4))
    return Problem(op, prior, h, derive_seed(seed, 5))


def _run_estimator(name, problem, y, config):
    """Returns ``(estimate, iterations, seconds, trace)``."""
    start = time.perf_counter()
    if name == "mmse":
        est = mmse(problem.op, problem.prior, y).mean
        return est, 1, time.perf_counter() - start, None
    damping = config.damping.get(name)
    if name == "eiga":
        res = eiga_run(problem.op, y, problem.prior, damping, config.max_iter, config.tol)
        return res.belief.mean, res.iterations, time.perf_counter() - start, res.trace
    res = iga_run(problem.op, y, problem.prior, damping or IGA_DEFAULT_DAMPING, config.max_iter, config.tol)
    return res.belief.mean, res.state.t, time.perf_counter() - start, res.trace


def _run_trial(config_dict, trial):
    """All (SNR, estimator) outcomes of one trial, in a fixed order."""
    config = ExperimentConfig.from_dict(config_dict)
    trial_seed = derive_seed(config.seed, trial)
    outcomes = []
    for snr in config.snr_db_list:
        problem = build_problem(config.scenario, trial_seed, snr)
        y = observe(problem.op, problem.h, problem.prior.noise_var, problem.noise_seed).y
        h_norm2 = float(np.vdot(problem.h, problem.h).real)
        for name in config.estimators:
            try:
                est, iters, secs, trace = _run_estimator(name, problem, y, config)
            except (DivergenceError, InvalidStateError) as exc:
                outcomes.append({"estimator": name, "snr_db": snr, "trial": trial, "failed": True,
                                 "error": str(exc)})
                continue
            ratio = float(np.sum(np.abs(problem.h - est) ** 2)) / h_norm2 if h_norm2 > 0 else None
            outcomes.append({"estimator": name, "snr_db": snr, "trial": trial, "failed": False,
                             "ratio": ratio, "iterations": iters, "seconds": secs, "trace": trace})
    return outcomes


def nmse_from_ratios(ratios):
    """``10 log10`` of the mean of per-trial ratios, floored at -300 dB."""
    ratios = [r for r in ratios if r is not None]
    if not ratios:
        raise RunError("no trial with a nonzero truth")
    mean = float(np.mean(ratios))
    if mean <= 0:
        return NMSE_FLOOR_DB
    return max(NMSE_FLOOR_DB, 10.0 * math.log10(mean))


def nmse(estimates, truths):
    """Normalized mean-squared error in dB.

    ``10 log10(mean_n |truth_n - est_n|^2 / |truth_n|^2)``. Pairs whose truth
    is zero are skipped with a warning; a perfect estimate gives the -300 dB
    floor.
    """
    if len(estimates) == 0 or len(estimates) != len(truths):
        raise ValueError("estimates and truths must be nonempty and of equal length")
    ratios = []
    for est, truth in zip(estimates, truths):
        truth = np.asarray(truth, complex)
        est = np.asarray(est, complex)
        norm2 = float(np.sum(np.abs(truth) ** 2))
        if norm2 == 0:
            warnings.warn("zero-norm truth excluded from NMSE", RuntimeWarning, stacklevel=2)
            continue
        ratios.append(float(np.sum(np.abs(truth - est) ** 2)) / norm2)
    if not ratios:
        raise ValueError("every truth has zero norm")
    return nmse_from_ratios(ratios)


@dataclass
class ExperimentOutput:
    """Everything :func:`run_experiment` produced."""

    records: list
    traces: dict
    failures: dict
    total_runs: int
    failed_runs: int

    @property
    def divergence_dominated(self):
        return self.total_runs > 0 and self.failed_runs * 2 > self.total_runs


def run_experiment(config):
    """Run the Monte-Carlo loop described by ``config``.

    Returns
    -------
    ExperimentOutput
        ``records`` lists one :class:`ResultRecord` per (estimator, SNR) with
        at least one successful trial, in config order. ``traces`` maps
        ``(estimator, snr_db, trial)`` to trace rows. ``failures`` counts
        failed trials per ``"estimator@snr"``.

    Raises
    ------
    RunError
        If every trial of every cell failed.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    cfg = config.to_dict()
    trials = range(config.trials)
    if config.workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_trial = list(pool.map(_run_trial, [cfg] * config.trials, trials))
    else:
        per_trial = [_run_trial(cfg, t) for t in trials]

    records, traces, failures = [], {}, {}
    total = failed = 0
    for name in config.estimators:
        for snr in config.snr_db_list:
            cell = [o for outs in per_trial for o in outs if o["estimator"] == name and o["snr_db"] == snr]
            ok = [o for o in cell if not o["failed"]]
            total += len(cell)
            failed += len(cell) - len(ok)
            failures[f"{name}@{snr:g}"] = len(cell) - len(ok)
            if not ok:
                continue
            iters = [o["iterations"] for o in ok]
            if config.record_timing:
                per_iter = float(np.mean([o["seconds"] / max(o["iterations"], 1) for o in ok]))
            else:
                per_iter = float("nan")
            records.append(ResultRecord(name, snr, nmse_from_ratios([o["ratio"] for o in ok]),
                                        float(np.mean(iters)), per_iter, len(ok)))
            for o in ok:
                if o["trace"] is not None:
                    traces[(name, snr, o["trial"])] = o["trace"]
    if not records:
        raise RunError("every trial failed")
    return ExperimentOutput(records, traces, failures, total, failed)


def _format_float(x):
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_results_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in records:
            writer.writerow([r.estimator, _format_float(r.snr_db), _format_float(r.nmse_db),
                             _format_float(r.mean_iterations), _format_float(r.wall_time_per_iteration),
                             str(r.trials)])


def read_results_csv(path):
    """Parse a ``results.csv`` written by :func:`emit`."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRecord(row["estimator"], float(row["snr_db"]), float(row["nmse_db"]),
                             float(row["mean_iterations"]), float(row["wall_time_per_iteration"]),
                             int(row["trials"])) for row in reader]


def git_describe():
    """``git describe --always --dirty`` of the package source, or "unknown"."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10, check=True)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "git_describe", "config", "records", "failures"],
    "properties": {
        "version": {"type": "string"},
        "git_describe": {"type": "string"},
        "config": {"type": ["object", "null"]},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(RESULT_COLUMNS),
                "properties": {
                    "estimator": {"enum": list(ESTIMATORS)},
                    "snr_db": {"type": "number"},
                    "nmse_db": {"type": "number"},
                    "mean_iterations": {"type": "number"},
                    "wall_time_per_iteration": {"type": ["number", "null"]},
                    "trials": {"type": "integer", "minimum": 1},
                },
            },
        },
        "failures": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
    },
}


def emit(records, traces, output_dir, config=None, failures=None):
    """Write ``results.csv``, ``summary.json`` and ``traces/*.csv``.

    Parameters
    ----------
    records : list of ResultRecord
    traces : dict
        ``(estimator, snr_db, trial) -> list of trace rows``.
    output_dir : path
    config : ExperimentConfig, optional
        Echoed into ``summary.json``.
    failures : dict, optional
        Failure counts per ``"estimator@snr"``.

    Returns
    -------
    pathlib.Path
        The output directory.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(records, out / "results.csv")
        summary = {
            "version": __version__,
            "git_describe": git_describe(),
            "config": config.to_dict() if config is not None else None,
            "records": [{k: _json_safe(v) for k, v in asdict(r).items()} for r in records],
            "failures": dict(failures or {}),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if traces:
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            for (name, snr, trial), rows in sorted(traces.items()):
                path = tdir / f"{name}_snr{snr:g}_trial{trial:04d}.csv"
                (write_eiga_trace if name == "eiga" else write_iga_trace)(rows, path)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return out


def run_and_emit(config):
    """Run ``config`` and write its outputs to ``config.output_dir``."""
    result = run_experiment(config)
    emit(result.records, result.traces if config.save_traces else {}, config.output_dir,
         config, result.failures)
    return result


__all__ = [
    "DESK_DENSE",
    "DESK_STRUCTURED",
    "ExperimentConfig",
    "ExperimentOutput",
    "ResultRecord",
    "SUMMARY_SCHEMA",
    "build_problem",
    "emit",
    "nmse",
    "read_results_csv",
    "run_and_emit",
    "run_experiment",
]
