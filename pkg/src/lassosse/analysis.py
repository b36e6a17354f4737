"""Irrepresentable-condition certificates for support recovery by the partial Lasso."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    MAX_SUBSETS,
    AttackScenario,
    CombinatorialLimitError,
    StackedModel,
    numerical_rank,
)


class HypothesisError(np.linalg.LinAlgError):
    """``(O I_S)`` is rank deficient, so the recovery guarantee does not apply."""


@dataclass(frozen=True)
class IrrepReport:
    rho: float
    strict_value: float
    sufficient_holds: bool
    strict_holds: bool
    full_rank_ok: bool

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "strict_value": self.strict_value,
            "sufficient_holds": self.sufficient_holds,
            "strict_holds": self.strict_holds,
            "full_rank_ok": self.full_rank_ok,
        }


def split_rows(model: StackedModel, support) -> tuple[np.ndarray, np.ndarray]:
    """Rows of O inside and outside ``support``, each in original order."""
    mask = np.zeros(model.rows, dtype=bool)
    idx = np.fromiter(support, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= model.rows):
        raise IndexError("support index outside the stacked rows")
    mask[idx] = True
    return model.omega[mask], model.omega[~mask]


def _full_rank_with_identity(model: StackedModel, support) -> bool:
    cols = np.zeros((model.rows, len(support)))
    for j, i in enumerate(sorted(support)):
        cols[i, j] = 1.0
    return numerical_rank(np.hstack([model.omega, cols])) == model.n + len(support)


def irrepresentable_matrix(model: StackedModel, support) -> np.ndarray:
    """``O_Sbar (O_Sbar^T O_Sbar)^-1 O_S^T`` computed from a QR factor of O_Sbar."""
    o_s, o_sbar = split_rows(model, support)
    if numerical_rank(o_sbar) < model.n:
        raise HypothesisError("rows outside the support do not have full column rank")
    q, r = np.linalg.qr(o_sbar)
    # O_Sbar (R^T R)^-1 = Q R^-T
    return q @ np.linalg.solve(r.T, o_s.T)


def irrepresentable_report(model: StackedModel, support, sign_pattern) -> IrrepReport:
    """Evaluate the strict and sufficient irrepresentable conditions.

    ``sign_pattern`` lists ``sign(a_S)`` in increasing row order of ``support``.
    ``rho`` is the max row l1 norm of the irrepresentable matrix and
    ``strict_value`` the max absolute entry of that matrix times the signs.
    """
    support = sorted(int(i) for i in support)
    signs = np.asarray(sign_pattern, dtype=float).reshape(-1)
    if signs.size != len(support):
        raise ValueError("sign_pattern must have one entry per support row")
    full_rank = _full_rank_with_identity(model, support)
    if not full_rank:
        raise HypothesisError("(O I_S) is not full rank")
    m = irrepresentable_matrix(model, support)
    if m.size == 0:
        rho = strict = 0.0
    else:
        rho = float(np.abs(m).sum(axis=1).max())
        strict = float(np.abs(m @ signs).max())
    return IrrepReport(rho, strict, rho < 1.0, strict < 1.0, full_rank)


def stacked_attack(model: StackedModel, scenario: AttackScenario, k0: int = 0) -> np.ndarray:
    if k0 + model.tau > scenario.horizon:
        raise ValueError("scenario is shorter than the window")
    return scenario.magnitudes[k0:k0 + model.tau].reshape(-1)


def report_for_attack(model: StackedModel, a_stacked) -> IrrepReport:
    a_stacked = np.asarray(a_stacked, dtype=float)
    support = np.flatnonzero(a_stacked)
    return irrepresentable_report(model, support, np.sign(a_stacked[support]))


def predict_lasso_success(model: StackedModel, scenario: AttackScenario, k0: int = 0) -> bool:
    """Exact small-lambda success predicate for the noise-free window at ``k0``."""
    return report_for_attack(model, stacked_attack(model, scenario, k0)).strict_holds


def etpg_eigen_diagnostics(
    model: StackedModel, subset_size: int, max_subsets: int = MAX_SUBSETS
) -> tuple[float, float, float]:
    """Eigenvalue pair compared by the projected-gradient convergence condition.

    ``q`` is the top eigenvalue of ``(O I)^T (O I)``. ``r`` is the smallest
    eigenvalue of ``(O I_J)^T (O I_J)`` over sensor subsets J of
    ``subset_size`` sensors, where ``I_J`` keeps the identity columns of all
    stacked rows of those sensors. Returns ``(q, r, r / q)``.
    """
    if not 0 <= subset_size <= model.p:
        raise ValueError("subset_size must lie in [0, p]")
    count = math.comb(model.p, subset_size)
    if count > max_subsets:
        raise CombinatorialLimitError(f"{count} subsets exceed the cap of {max_subsets}")
    omega = model.omega
    gram = omega.T @ omega
    q = float(np.linalg.eigvalsh(gram)[-1]) + 1.0
    r = math.inf
    n = model.n
    for sensors in itertools.combinations(range(model.p), subset_size):
        rows = model.sensor_rows(sensors)
        h = rows.size
        block = np.empty((n + h, n + h))
        block[:n, :n] = gram
        block[:n, n:] = omega[rows].T
        block[n:, :n] = omega[rows]
        block[n:, n:] = np.eye(h)
        r = min(r, float(np.linalg.eigvalsh(block)[0]))
    return q, r, r / q
