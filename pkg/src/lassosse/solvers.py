"""Partial Lasso decoder solved by proximal gradient (ISTA / FISTA).

The problem is

    min_{x, a}  1/2 ||y - O x - a||_2^2 + lam ||a||_1

with the l1 penalty on the stacked attack only. The identity block of the
sensing matrix ``(O I)`` is never formed: its gradient contribution is the
residual itself.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import StackedModel, is_observable, numerical_rank

logger = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    """Iterates became non-finite, typically because the step size is too large."""


class UnrecoverableStateError(np.linalg.LinAlgError):
    """The rows left after removing the attack support do not determine the state."""


@dataclass(frozen=True)
class SolverConfig:
    """Settings of :func:`solve_lasso`.

    ``step_size`` and ``support_threshold`` left as ``None`` are resolved per
    problem by :func:`resolve_config`.
    """

    lam: float
    step_size: Optional[float] = None
    max_iters: int = 100_000
    tolerance: float = 1e-10
    support_threshold: Optional[float] = None
    acceleration: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1 or not self.tolerance > 0:
            raise ValueError("max_iters must be >= 1 and tolerance > 0")


@dataclass
class SseEstimate:
    x_hat: np.ndarray
    a_hat: np.ndarray
    support_hat: frozenset
    objective: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)


def soft_threshold(w, theta):
    """Componentwise shrinkage ``w - theta*sign(w)`` if ``|w| >= theta`` else 0."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    w = np.asarray(w, dtype=float)
    out = np.where(np.abs(w) >= theta, w - theta * np.sign(w), 0.0)
    return out if out.ndim else float(out)


def block_hard_threshold(a: np.ndarray, p: int, tau: int, s: int) -> np.ndarray:
    """Keep the ``s`` sensors whose stacked entries have the largest l2 norm.

    Each sensor owns rows ``t*p + i`` of the stacked vector. Ties go to the
    lowest sensor index.
    """
    blocks = np.asarray(a, dtype=float).reshape(tau, p)
    norms = np.linalg.norm(blocks, axis=0)
    keep = np.argsort(-norms, kind="stable")[:s]
    out = np.zeros_like(blocks)
    out[:, keep] = blocks[:, keep]
    return out.reshape(-1)


def lasso_objective(model: StackedModel, y, x, a, lam: float) -> float:
    r = np.asarray(y) - model.omega @ x - a
    return 0.5 * float(r @ r) + lam * float(np.abs(a).sum())


def lipschitz_constant(
    model: StackedModel, tol: float = 1e-9, max_iters: int = 10_000, seed: int = 0
) -> float:
    """Largest eigenvalue of ``(O I)^T (O I)``, i.e. ``sigma_max(O)^2 + 1``.

    Power iteration runs on the n x n Gram matrix ``O^T O``, which shares its
    nonzero spectrum with ``O O^T``.
    """
    gram = model.omega.T @ model.omega
    v = np.random.default_rng(seed).standard_normal(model.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        w = gram @ v
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 1.0
        v = w / norm
        if abs(new - est) <= tol * max(new, 1.0):
            est = new
            break
        est = new
    return est + 1.0


def default_lambda(model: StackedModel, y, scale: float = 1e-3) -> float:
    """``scale * ||(O I)^T y||_inf``; above the unscaled value ``a = 0`` is optimal."""
    if not 0 < scale < 1:
        raise ValueError("scale must lie in (0, 1)")
    y = np.asarray(y, dtype=float)
    crit = max(np.abs(model.omega.T @ y).max(initial=0.0), np.abs(y).max(initial=0.0))
    return scale * float(crit)


def resolve_config(model: StackedModel, y, config: SolverConfig) -> SolverConfig:
    nu = config.step_size or 1.0 / lipschitz_constant(model)
    thr = config.support_threshold
    if thr is None:
        thr = max(10.0 * config.lam * nu, 1e-8 * float(np.abs(y).max(initial=0.0)))
    return replace(config, step_size=nu, support_threshold=thr)


def _prox_grad(omega, y, x, a, nu, lam):
    r = omega @ x + a - y
    x_next = x - nu * (omega.T @ r)
    a_next = soft_threshold(a - nu * r, nu * lam)
    return x_next, a_next


def ista_step(model: StackedModel, y, x, a, config: SolverConfig):
    """One proximal gradient step; only the attack part is thresholded."""
    if config.step_size is None:
        raise ValueError("resolve the step size first (see resolve_config)")
    return _prox_grad(model.omega, np.asarray(y, dtype=float), x, a,
                      config.step_size, config.lam)


def solve_lasso(
    model: StackedModel, y, config: SolverConfig, trace: bool = False
) -> SseEstimate:
    """Minimize the partial Lasso from ``(x, a) = (0, 0)``.

    Stops when ``||(dx, da)||_2 <= tolerance * (1 + ||(x, a)||_2)`` or after
    ``max_iters``. With ``acceleration`` the FISTA momentum sequence is used
    without restarts.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (model.rows,):
        raise ValueError(f"y must have {model.rows} entries, got {y.shape}")
    if not is_observable(model):
        warnings.warn("stacked model is not observable; the state is not identifiable",
                      RuntimeWarning, stacklevel=2)
    cfg = resolve_config(model, y, config)
    omega, nu, lam, tol = model.omega, cfg.step_size, cfg.lam, cfg.tolerance

    x = np.zeros(model.n)
    a = np.zeros(model.rows)
    zx, za, t = x, a, 1.0
    rows = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        x_new, a_new = _prox_grad(omega, y, zx, za, nu, lam)
        dx, da = x_new - x, a_new - a
        delta = np.sqrt(dx @ dx + da @ da)
        size = np.sqrt(x_new @ x_new + a_new @ a_new)
        if not np.isfinite(delta):
            raise DivergenceError(f"non-finite iterate at iteration {it} (step size {nu:g})")
        if cfg.acceleration:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_new
            zx, za, t = x_new + mom * dx, a_new + mom * da, t_new
        else:
            zx, za = x_new, a_new
        x, a = x_new, a_new
        if trace:
            rows.append((it, lasso_objective(model, y, x, a, lam), float(delta),
                         int(np.sum(np.abs(a) > cfg.support_threshold))))
        if delta <= tol * (1.0 + size):
            converged = True
            break
    if not converged:
        logger.debug("solve_lasso stopped at max_iters=%d", cfg.max_iters)
    support = frozenset(np.flatnonzero(np.abs(a) > cfg.support_threshold).tolist())
    return SseEstimate(
        x_hat=x,
        a_hat=a,
        support_hat=support,
        objective=lasso_objective(model, y, x, a, lam),
        iterations=it,
        converged=converged,
        trace=rows,
    )


def solve_block_sparse(
    model: StackedModel,
    y,
    s: int,
    step_size: Optional[float] = None,
    max_iters: int = 100_000,
    tolerance: float = 1e-10,
) -> SseEstimate:
    """Projected gradient onto states x block-``s``-sparse attacks, run to convergence.

    Reconstruction of an event-triggered projected gradient decoder with the
    projection applied at every iteration (no trigger rule). ``objective``
    reports the plain squared residual ``1/2 ||y - O x - a||^2``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    nu = step_size or 1.0 / lipschitz_constant(model)
    omega = model.omega
    x = np.zeros(model.n)
    a = np.zeros(model.rows)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        r = omega @ x + a - y
        x_new = x - nu * (omega.T @ r)
        a_new = block_hard_threshold(a - nu * r, model.p, model.tau, s)
        dx, da = x_new - x, a_new - a
        delta = np.sqrt(dx @ dx + da @ da)
        if not np.isfinite(delta):
            raise DivergenceError(f"non-finite iterate at iteration {it}")
        x, a = x_new, a_new
        if delta <= tolerance * (1.0 + np.sqrt(x @ x + a @ a)):
            converged = True
            break
    r = y - omega @ x - a
    return SseEstimate(
        x_hat=x,
        a_hat=a,
        support_hat=frozenset(np.flatnonzero(a).tolist()),
        objective=0.5 * float(r @ r),
        iterations=it,
        converged=converged,
    )


def refine_state(model: StackedModel, y, support_hat) -> np.ndarray:
    """Least-squares state from the stacked rows outside ``support_hat``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    safe = np.setdiff1d(np.arange(model.rows), np.fromiter(support_hat, dtype=int))
    o_safe = model.omega[safe]
    if numerical_rank(o_safe) < model.n:
        raise UnrecoverableStateError(
            f"{safe.size} safe rows have rank below n={model.n}"
        )
    x, *_ = np.linalg.lstsq(o_safe, y[safe], rcond=None)
    return x


def subgradient_residuals(model: StackedModel, y, est: SseEstimate, lam: float) -> dict:
    """Violations of the zero-subgradient optimality condition at ``est``."""
    r = np.asarray(y) - model.omega @ est.x_hat - est.a_hat
    on = np.zeros(model.rows, dtype=bool)
    on[list(est.support_hat)] = True
    return {
        "state_gradient": float(np.abs(model.omega.T @ r).max(initial=0.0)),
        "off_support": float(np.maximum(np.abs(r[~on]) - lam, 0.0).max(initial=0.0)),
        "on_support": float(np.abs(r[on] - lam * np.sign(est.a_hat[on])).max(initial=0.0)),
    }


def write_trace(path, est: SseEstimate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "objective", "delta", "support_size"])
        w.writerows(est.trace)
