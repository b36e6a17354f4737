"""Command line entry point: ``lassosse <command>``."""
from __future__ import annotations

import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import click
import numpy as np
import yaml

from . import harness
from .analysis import HypothesisError, report_for_attack, stacked_attack
from .model import (
    InstanceConfig,
    build_stacked_model,
    generate_random_instance,
    read_instance,
    simulate,
    write_instance,
)
from .observer import ObserverConfig, run_observer
from .oracle import exact_decode, noisy_atol
from .solvers import (
    SolverConfig,
    UnrecoverableStateError,
    default_lambda,
    refine_state,
    solve_block_sparse,
    solve_lasso,
    write_trace,
)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Secure state estimation under sparse sensor attacks."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


def _load(path, tau, noise_seed):
    sys_, x0, scenario, meta = read_instance(path)
    tau = tau or meta["tau"] or sys_.n
    if noise_seed is None:
        noise_seed = meta["seed"]
    traj = simulate(sys_, x0, scenario, scenario.horizon, seed=noise_seed)
    return sys_, scenario, traj, tau


@main.command()
@click.option("--n", type=int, required=True)
@click.option("--p", type=int, required=True)
@click.option("--s", type=int, required=True)
@click.option("--tau", type=int, default=None, help="window length (default n)")
@click.option("--horizon", type=int, default=None, help="attack horizon (default tau)")
@click.option("--noise-bound", type=float, default=0.0)
@click.option("--attack-profile", type=click.Choice(["constant", "random"]), default="constant")
@click.option("--seed", type=int, default=0)
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
def generate(n, p, s, tau, horizon, noise_bound, attack_profile, seed, output):
    """Write a random instance file."""
    tau = tau or n
    cfg = InstanceConfig(noise_bound=noise_bound, horizon=horizon, attack_profile=attack_profile)
    sys_, x0, scenario = generate_random_instance(n, p, s, tau, cfg, seed=seed)
    write_instance(output, sys_, x0, scenario, seed=seed, tau=tau)
    click.echo(f"wrote {output}")


def _read_stacked(path) -> np.ndarray:
    text = Path(path).read_text().replace(",", " ").split()
    return np.array([float(v) for v in text])


def _estimate_doc(method, x_hat, support, objective, iterations, converged, x_true=None):
    doc = {
        "method": method,
        "x_hat": np.asarray(x_hat).tolist(),
        "support_hat": sorted(int(i) for i in support),
        "objective": objective,
        "iterations": iterations,
        "converged": converged,
    }
    if x_true is not None:
        doc["state_error"] = float(np.linalg.norm(x_hat - x_true) / np.linalg.norm(x_true))
    return doc


@main.command()
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(["lasso", "exact", "etpg-like"]), default="lasso")
@click.option("--tau", type=int, default=None)
@click.option("--k0", type=int, default=0, help="first step of the window")
@click.option("--measurements", type=click.Path(exists=True, dir_okay=False), default=None,
              help="stacked measurement file (whitespace or comma separated) replacing the simulated window")
@click.option("--lam", type=float, default=None)
@click.option("--lambda-scale", type=float, default=1e-4)
@click.option("--no-accel", is_flag=True, help="plain ISTA instead of FISTA")
@click.option("--refine/--no-refine", default=True, help="re-fit the state on the safe rows")
@click.option("--s-max", type=int, default=None, help="attack size for exact / etpg-like")
@click.option("--noise-seed", type=int, default=None)
@click.option("--trace", type=click.Path(dir_okay=False), default=None, help="write iteration trace CSV")
def solve(instance, method, tau, k0, measurements, lam, lambda_scale, no_accel, refine,
          s_max, noise_seed, trace):
    """Estimate the state of one window and print a JSON record."""
    sys_, scenario, traj, tau = _load(instance, tau, noise_seed)
    model = build_stacked_model(sys_, tau)
    y, _, x_true = traj.window(k0, tau)
    if measurements:
        y = _read_stacked(measurements)
        x_true = None
    s_max = len(scenario.support) if s_max is None else s_max
    if method == "lasso":
        lam = lam or default_lambda(model, y, lambda_scale)
        est = solve_lasso(model, y, SolverConfig(lam=lam, acceleration=not no_accel),
                          trace=bool(trace))
        if trace:
            write_trace(trace, est)
        x_hat = est.x_hat
        if refine:
            try:
                x_hat = refine_state(model, y, est.support_hat)
            except UnrecoverableStateError as exc:
                click.echo(f"warning: {exc}", err=True)
        doc = _estimate_doc(method, x_hat, est.support_hat, est.objective,
                            est.iterations, est.converged, x_true)
        doc["lambda"] = lam
    elif method == "exact":
        atol = noisy_atol(scenario.noise_bound, model.rows) if scenario.noise_bound else 0.0
        res = exact_decode(model, y, s_max, atol=atol)
        rows = model.sensor_rows(res.support).tolist()
        doc = _estimate_doc(method, res.x_exact, rows, res.residual, 0, True, x_true)
        doc["unique"] = res.unique
    else:
        est = solve_block_sparse(model, y, s_max)
        doc = _estimate_doc(method, est.x_hat, est.support_hat, est.objective,
                            est.iterations, est.converged, x_true)
    click.echo(json.dumps(doc, indent=1))


@main.command()
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.option("--tau", type=int, default=None)
@click.option("--k0", type=int, default=0)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="append a machine-readable row to this CSV")
def analyze(instance, tau, k0, csv_path):
    """Print the irrepresentable-condition report of the instance's attack."""
    sys_, scenario, _, tau = _load(instance, tau, None)
    model = build_stacked_model(sys_, tau)
    try:
        report = report_for_attack(model, stacked_attack(model, scenario, k0))
    except HypothesisError as exc:
        raise click.ClickException(f"recovery hypotheses fail: {exc}")
    fields = {"instance": str(instance), "tau": tau, "k0": k0, **report.as_dict()}
    for key, val in fields.items():
        click.echo(f"{key}: {val}")
    if csv_path:
        new = not os.path.exists(csv_path)
        with open(csv_path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(fields))
            if new:
                w.writeheader()
            w.writerow(fields)


@main.command()
@click.argument("instance", type=click.Path(exists=True, dir_okay=False))
@click.option("--tau", type=int, default=None)
@click.option("--variant", type=click.Choice(["soft", "block"]), default="soft")
@click.option("--inner-steps", type=int, default=None, help="default 5*tau")
@click.option("--lambda-scale", type=float, default=2e-4)
@click.option("--shift-attack", is_flag=True, help="zero the newest attack block on every shift")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="CSV destination (default stdout)")
def observe(instance, tau, variant, inner_steps, lambda_scale, shift_attack, output):
    """Run an observer over the instance trajectory, streaming per-step CSV."""
    sys_, scenario, traj, tau = _load(instance, tau, None)
    model = build_stacked_model(sys_, tau)
    cfg = ObserverConfig(tau=tau, inner_steps=inner_steps, variant=variant,
                         s_assumed=len(scenario.support), lambda_scale=lambda_scale,
                         shift_attack=shift_attack)
    fh = open(output, "w", newline="") if output else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["k", "state_error", "support_error", "step_time_seconds"])
        for rec in run_observer(model, traj, cfg):
            w.writerow([rec.k, rec.state_error, rec.support_error, rec.step_time_seconds])
    finally:
        if output:
            fh.close()


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML or JSON experiment config")
@click.option("--kind", type=click.Choice(["batch", "observer"]), default="batch")
@click.option("--n", type=int)
@click.option("--p", type=int)
@click.option("--s", type=int)
@click.option("--tau", type=int)
@click.option("--sweep", type=click.Choice(["p", "s"]))
@click.option("--sweep-values", help="comma separated")
@click.option("--s-ratio", type=float)
@click.option("--trials", type=int)
@click.option("--noise-bound", type=float)
@click.option("--methods", help="comma separated")
@click.option("--seed", type=int)
@click.option("--workers", type=int)
@click.option("--horizon", type=int)
@click.option("-o", "--output", "output_path", type=click.Path(dir_okay=False))
@click.option("--summary", type=click.Path(dir_okay=False), default=None)
@click.option("--plot-data", type=click.Path(dir_okay=False), default=None)
def bench(config_path, kind, summary, plot_data, **overrides):
    """Monte-Carlo sweeps; flags override config-file values."""
    doc = {}
    if config_path:
        doc = yaml.safe_load(Path(config_path).read_text()) or {}
    for key in ("sweep_values", "methods"):
        if overrides.get(key):
            raw = overrides[key].split(",")
            overrides[key] = [int(v) for v in raw] if key == "sweep_values" else raw
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if kind == "observer" and "methods" not in doc:
        doc["methods"] = list(harness.OBSERVER_METHODS)
    config = harness.ExperimentConfig.from_dict(doc)
    t0 = time.perf_counter()
    if kind == "batch":
        records = harness.run_batch_experiment(config)
        keys = ["method"] + ([config.sweep] if config.sweep else [])
        table = harness.summarize(records, keys)
        if summary:
            harness.write_summary(summary, table)
        if plot_data:
            x_key = config.sweep or "method"
            harness.write_rows(plot_data, harness.plot_rows(table, x_key, ["method"]))
        for row in table:
            click.echo(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                 for k, v in row.items()))
    else:
        rows = harness.run_observer_experiment(config)
        if plot_data:
            harness.write_rows(plot_data, [
                {"x": r["step"], "series": f"{r['method']}/tau={r['tau']}", "value": r["state_error"]}
                for r in rows])
        last = {}
        for r in rows:
            last[(r["tau"], r["method"])] = r
        for (tau, method), r in last.items():
            click.echo(f"tau={tau} {method}: final state_error={r['state_error']:.4g} "
                       f"support_error={r['support_error']:.3g}")
    click.echo(f"done in {time.perf_counter() - t0:.1f}s", err=True)


if __name__ == "__main__":
    main()
