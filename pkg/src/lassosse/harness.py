"""Monte-Carlo experiments, metrics and CSV persistence."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import InstanceConfig, build_stacked_model, generate_random_instance, simulate
from .observer import ObserverConfig, relative_error, run_observer
from .oracle import exact_decode, noisy_atol
from .solvers import (
    SolverConfig,
    UnrecoverableStateError,
    default_lambda,
    refine_state,
    solve_block_sparse,
    solve_lasso,
)

logger = logging.getLogger(__name__)

BATCH_METHODS = ("lasso", "exact", "etpg_like")
OBSERVER_METHODS = ("soft_observer", "block_observer")
RUNS_HEADER = "# lassosse runs v1; etpg_like and block_observer are block-hard-thresholding reconstructions"
SUMMARY_HEADER = "# lassosse summary v1; std is the population standard deviation (ddof=0)"
OBSERVER_HEADER = "# lassosse observer v1; per-step means over trials; block_observer is a reconstruction"


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment design.

    ``sweep`` names the varied parameter (``"p"``, ``"s"`` or ``None``) and
    ``sweep_values`` its values. With ``sweep="p"`` and ``s_ratio`` set, ``s``
    follows ``round(s_ratio * p)``. ``tau=None`` means ``tau = n``.
    """

    n: int = 20
    p: int = 30
    s: int = 4
    tau: Optional[int] = None
    sweep: Optional[str] = None
    sweep_values: tuple = ()
    s_ratio: Optional[float] = None
    trials: int = 50
    noise_bound: float = 0.0
    methods: tuple = ("lasso",)
    seed: int = 0
    output_path: Optional[str] = None
    lambda_scale: float = 1e-4
    workers: int = 1
    # observer experiments
    horizon: int = 300
    observer_taus: tuple = ("n", 1)
    inner_steps: Optional[int] = None
    observer_lambda_scale: float = 2e-4
    attack_profile: str = "constant"

    def __post_init__(self):
        if self.sweep not in (None, "p", "s"):
            raise ValueError(f"sweep must be 'p', 's' or None, got {self.sweep!r}")
        if self.sweep and not self.sweep_values:
            raise ValueError("sweep_values required when sweeping")
        unknown = set(self.methods) - set(BATCH_METHODS) - set(OBSERVER_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def points(self) -> list[dict]:
        """Fixed parameters of each sweep point."""
        if self.sweep is None:
            return [{"n": self.n, "p": self.p, "s": self.s}]
        out = []
        for v in self.sweep_values:
            pt = {"n": self.n, "p": self.p, "s": self.s, self.sweep: int(v)}
            if self.sweep == "p" and self.s_ratio is not None:
                pt["s"] = int(round(self.s_ratio * pt["p"]))
            out.append(pt)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - names
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        doc = dict(doc)
        for key in ("sweep_values", "methods", "observer_taus"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass
class RunRecord:
    trial: int
    method: str
    n: int
    p: int
    s: int
    tau: int
    noise_bound: float
    state_error: float
    support_error: int
    solve_time_seconds: float
    converged: bool

    FIELDS = ("trial", "method", "n", "p", "s", "tau", "noise_bound", "state_error",
              "support_error", "solve_time_seconds", "converged")


def trial_seed(master: int, trial: int, point: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, point, trial])


def _stacked_support(a: np.ndarray) -> np.ndarray:
    return (np.asarray(a) != 0)


def _run_method(method, model, y, a_true, x_true, s, lam, noise_bound):
    """Returns ``(x_hat, a_hat_mask, converged)``; only this call is timed."""
    if method == "lasso":
        est = solve_lasso(model, y, SolverConfig(lam=lam))
        mask = np.zeros(model.rows, dtype=bool)
        mask[list(est.support_hat)] = True
        try:
            x = refine_state(model, y, est.support_hat)
        except UnrecoverableStateError:
            return est.x_hat, mask, False
        return x, mask, est.converged
    if method == "exact":
        atol = noisy_atol(noise_bound, model.rows) if noise_bound > 0 else 0.0
        res = exact_decode(model, y, s, atol=atol)
        mask = np.zeros(model.rows, dtype=bool)
        mask[model.sensor_rows(res.support)] = True
        return res.x_exact, mask, True
    if method == "etpg_like":
        est = solve_block_sparse(model, y, s)
        return est.x_hat, est.a_hat != 0, est.converged
    raise ValueError(method)


def _batch_trial(config: ExperimentConfig, point_index: int, point: dict, trial: int) -> list[RunRecord]:
    n, p, s = point["n"], point["p"], point["s"]
    tau = config.tau or n
    ss = trial_seed(config.seed, trial, point_index)
    inst_seed, noise_seed = ss.spawn(2)
    icfg = InstanceConfig(noise_bound=config.noise_bound, attack_profile=config.attack_profile)
    sys, x0, scenario = generate_random_instance(n, p, s, tau, icfg, seed=inst_seed)
    traj = simulate(sys, x0, scenario, tau, seed=noise_seed)
    model = build_stacked_model(sys, tau)
    y, a_true, x_true = traj.window(0, tau)
    lam = default_lambda(model, y, config.lambda_scale)
    out = []
    for method in config.methods:
        if method not in BATCH_METHODS:
            continue
        t0 = time.perf_counter()
        try:
            x_hat, mask, converged = _run_method(
                method, model, y, a_true, x_true, s, lam, config.noise_bound)
            elapsed = time.perf_counter() - t0
            err = relative_error(x_hat, x_true)
            sup = int(np.sum(mask != _stacked_support(a_true)))
        except Exception as exc:  # a failed trial is data, not a crash
            elapsed = time.perf_counter() - t0
            logger.warning("trial %d method %s failed: %s", trial, method, exc)
            err, sup, converged = float("nan"), model.rows, False
        out.append(RunRecord(trial, method, n, p, s, tau, config.noise_bound,
                             err, sup, elapsed, bool(converged)))
    return out


def _batch_task(args):
    return _batch_trial(*args)


def run_batch_experiment(config: ExperimentConfig) -> list[RunRecord]:
    """Run every (sweep point, trial) and return records ordered by point then trial."""
    tasks = [(config, i, pt, t)
             for i, pt in enumerate(config.points()) for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            chunks = list(pool.map(_batch_task, tasks))
    else:
        chunks = [_batch_task(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    if config.output_path:
        write_records(config.output_path, records)
    return records


def write_records(path, records: Sequence[RunRecord], header: str = RUNS_HEADER) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(RunRecord.FIELDS)
        for r in records:
            w.writerow([getattr(r, f) for f in RunRecord.FIELDS])


def read_records(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        out = []
        for row in rows:
            out.append(RunRecord(
                trial=int(row["trial"]), method=row["method"], n=int(row["n"]),
                p=int(row["p"]), s=int(row["s"]), tau=int(row["tau"]),
                noise_bound=float(row["noise_bound"]),
                state_error=float(row["state_error"]),
                support_error=int(row["support_error"]),
                solve_time_seconds=float(row["solve_time_seconds"]),
                converged=row["converged"] == "True",
            ))
        return out


# -- observer experiments ---------------------------------------------------

@dataclass
class ObserverTraces:
    """Per-trial traces of one (tau, method) cell; arrays are trials x steps."""

    tau: int
    method: str
    state_error: np.ndarray
    support_error: np.ndarray
    step_time: np.ndarray


def _observer_trial(config: ExperimentConfig, tau: int, trial: int):
    n, p, s = config.n, config.p, config.s
    steps = config.horizon
    length = steps + tau - 1
    ss = trial_seed(config.seed, trial)
    inst_seed, noise_seed = ss.spawn(2)
    icfg = InstanceConfig(noise_bound=config.noise_bound, horizon=length,
                          attack_profile=config.attack_profile)
    sys, x0, scenario = generate_random_instance(n, p, s, tau, icfg, seed=inst_seed)
    traj = simulate(sys, x0, scenario, length, seed=noise_seed)
    model = build_stacked_model(sys, tau)
    out = {}
    for method in config.methods:
        if method not in OBSERVER_METHODS:
            continue
        ocfg = ObserverConfig(
            tau=tau,
            inner_steps=config.inner_steps,
            variant="soft" if method == "soft_observer" else "block",
            s_assumed=s,
            lambda_scale=config.observer_lambda_scale,
        )
        recs = run_observer(model, traj, ocfg)
        out[method] = (
            [r.state_error for r in recs],
            [r.support_error for r in recs],
            [r.step_time_seconds for r in recs],
        )
    return out


def _observer_task(args):
    return _observer_trial(*args)


def observer_traces(config: ExperimentConfig) -> list[ObserverTraces]:
    """Per-trial error traces for every observer method and tau regime.

    Each trial records exactly ``config.horizon`` observer steps, counted from
    the first full window.
    """
    if config.horizon < 1:
        raise ValueError("horizon must be >= 1")
    taus = [config.n if t == "n" else int(t) for t in config.observer_taus]
    for tau in taus:
        if not 1 <= tau <= config.n:
            raise ValueError(f"tau={tau} outside [1, n]")
        if config.horizon < tau:
            raise ValueError(f"horizon {config.horizon} is shorter than tau={tau}")
    result = []
    for tau in taus:
        tasks = [(config, tau, t) for t in range(config.trials)]
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                per_trial = list(pool.map(_observer_task, tasks))
        else:
            per_trial = [_observer_task(t) for t in tasks]
        for method in config.methods:
            if method not in OBSERVER_METHODS:
                continue
            cols = [np.array([tr[method][i] for tr in per_trial]) for i in range(3)]
            result.append(ObserverTraces(tau, method, *cols))
    return result


def run_observer_experiment(config: ExperimentConfig) -> list[dict]:
    """Trial-averaged per-step records for each (tau, method)."""
    rows = []
    for tr in observer_traces(config):
        mean_err = tr.state_error.mean(axis=0)
        mean_sup = tr.support_error.mean(axis=0)
        mean_time = tr.step_time.mean(axis=0)
        for step in range(mean_err.size):
            rows.append({
                "tau": tr.tau, "method": tr.method, "step": step + 1,
                "state_error": float(mean_err[step]),
                "support_error": float(mean_sup[step]),
                "step_time_seconds": float(mean_time[step]),
                "trials": tr.state_error.shape[0],
            })
    if config.output_path:
        write_rows(config.output_path, rows, OBSERVER_HEADER)
    return rows


# -- summaries --------------------------------------------------------------

SUMMARY_METRICS = ("state_error", "support_error", "solve_time_seconds")


def summarize(records, group_keys: Sequence[str]) -> list[dict]:
    """Mean and population std of the metrics per group, groups in first-seen order."""
    records = list(records)
    if not records:
        raise ValueError("nothing to summarize")
    groups: dict = {}
    for r in records:
        key = tuple(getattr(r, k) for k in group_keys)
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        row = dict(zip(group_keys, key))
        row["count"] = len(members)
        for m in SUMMARY_METRICS:
            vals = np.array([getattr(r, m) for r in members], dtype=float)
            finite = vals[np.isfinite(vals)]
            row[f"{m}_mean"] = float(finite.mean()) if finite.size else float("nan")
            row[f"{m}_std"] = float(finite.std()) if finite.size else float("nan")
        row["failures"] = int(sum(not r.converged for r in members))
        out.append(row)
    return out


def plot_rows(summary: Sequence[dict], x_key: str, series_keys: Sequence[str],
              value_key: str = "state_error_mean") -> list[dict]:
    """Long-format ``(x, series, value)`` rows for external plotting."""
    out = []
    for row in summary:
        series = "/".join(str(row[k]) for k in series_keys)
        out.append({"x": row[x_key], "series": series, "value": row[value_key]})
    return out


def write_rows(path, rows: Sequence[dict], header: Optional[str] = None) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_summary(path, summary: Sequence[dict]) -> None:
    write_rows(path, summary, SUMMARY_HEADER)
