"""Exhaustive minimal-support decoder for small instances."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import MAX_SUBSETS, CombinatorialLimitError, StackedModel, numerical_rank


class NoConsistentSupportError(RuntimeError):
    """No sensor set of size <= s_max explains the data within tolerance."""


@dataclass(frozen=True)
class OracleResult:
    support: frozenset
    x_exact: np.ndarray
    residual: float
    unique: bool


def noisy_atol(noise_bound: float, rows: int) -> float:
    """Absolute residual allowance for uniformly bounded measurement noise."""
    return 10.0 * noise_bound * math.sqrt(rows)


def _fit(model: StackedModel, y: np.ndarray, sensors):
    safe = np.setdiff1d(np.arange(model.rows), model.sensor_rows(sensors))
    o_safe = model.omega[safe]
    if numerical_rank(o_safe) < model.n:
        return None
    x, *_ = np.linalg.lstsq(o_safe, y[safe], rcond=None)
    return x, float(np.linalg.norm(o_safe @ x - y[safe]))


def exact_decode(
    model: StackedModel,
    y,
    s_max: int,
    tol: float = 1e-8,
    atol: float = 0.0,
    max_subsets: int = MAX_SUBSETS,
) -> OracleResult:
    """Smallest set of attacked sensors whose removal leaves a consistent system.

    Sets are tried by increasing size, then lexicographically; a set is
    consistent when the least-squares residual on the remaining rows is at
    most ``tol * ||y||_2 + atol`` and those rows determine the state.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if not 0 <= s_max <= model.p:
        raise ValueError("s_max must lie in [0, p]")
    total = sum(math.comb(model.p, j) for j in range(s_max + 1))
    if total > max_subsets:
        raise CombinatorialLimitError(f"{total} candidate sets exceed the cap of {max_subsets}")
    bound = tol * float(np.linalg.norm(y)) + atol
    for size in range(s_max + 1):
        hits = []
        for sensors in itertools.combinations(range(model.p), size):
            fit = _fit(model, y, sensors)
            if fit is not None and fit[1] <= bound:
                hits.append((sensors, *fit))
        if hits:
            sensors, x, res = hits[0]
            scale = 1.0 + np.linalg.norm(x)
            unique = all(np.linalg.norm(other - x) <= tol * scale for _, other, _ in hits[1:])
            return OracleResult(frozenset(sensors), x, res, unique)
    raise NoConsistentSupportError(
        f"no sensor set of size <= {s_max} is consistent (bound {bound:.3g})"
    )
