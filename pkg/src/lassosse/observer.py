"""Recursive estimation over a sliding window of measurements.

The sparse soft observer runs a few proximal gradient steps on the current
window, then propagates the state estimate through A before the next
measurement arrives. The ``"block"`` variant swaps soft thresholding for a
projection onto block-sparse attacks; it approximates an event-triggered
projected gradient observer without its trigger rule.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np

from .model import StackedModel, Trajectory
from .solvers import (
    DivergenceError,
    block_hard_threshold,
    default_lambda,
    lipschitz_constant,
    soft_threshold,
)


@dataclass(frozen=True)
class ObserverConfig:
    """Observer settings.

    ``lam`` / ``nu`` left as ``None`` resolve to ``default_lambda`` on the
    first full window (scaled by ``lambda_scale``, then frozen) and to
    ``1/L`` of the stacked model. ``inner_steps`` defaults to ``5 * tau``.

    By default the thresholded attack estimate is reused as is for the next
    window, which presumes a persistent attack. ``shift_attack=True`` instead
    drops the oldest attack block and appends a zero block on every shift.
    """

    tau: int
    lam: Optional[float] = None
    nu: Optional[float] = None
    inner_steps: Optional[int] = None
    variant: Literal["soft", "block"] = "soft"
    s_assumed: int = 0
    lambda_scale: float = 2e-4
    shift_attack: bool = False

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.inner_steps is None:
            object.__setattr__(self, "inner_steps", 5 * self.tau)
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.variant not in ("soft", "block"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.nu is not None and not self.nu > 0:
            raise ValueError("nu must be positive")


@dataclass(frozen=True)
class ObserverState:
    """Estimator state after the measurement of step ``k``.

    ``x_window`` estimates the oldest state of the current window,
    x(k - tau + 1); ``x_hat`` is that estimate propagated through A, i.e. the
    starting point for the next window. ``a_hat`` holds the stacked attack
    estimate of the current window, oldest block first; before the first
    full window both estimates are left untouched.
    """

    model: StackedModel
    x_hat: np.ndarray
    x_window: np.ndarray
    a_hat: np.ndarray
    window: tuple
    k: int
    nu: float
    lam: Optional[float]

    @property
    def stacked_measurement(self) -> np.ndarray:
        return np.concatenate(self.window) if self.window else np.empty(0)


def observer_init(model: StackedModel, config: ObserverConfig, x_hat0=None) -> ObserverState:
    if model.tau != config.tau:
        raise ValueError(f"model window {model.tau} does not match config tau {config.tau}")
    x = np.zeros(model.n) if x_hat0 is None else np.array(x_hat0, dtype=float)
    nu = config.nu or 1.0 / lipschitz_constant(model)
    return ObserverState(
        model=model,
        x_hat=x,
        x_window=x,
        a_hat=np.zeros(model.rows),
        window=(),
        k=-1,
        nu=nu,
        lam=config.lam,
    )


def observer_step(state: ObserverState, y_new, config: ObserverConfig) -> ObserverState:
    model = state.model
    p, tau = model.p, model.tau
    y_new = np.asarray(y_new, dtype=float).reshape(-1)
    if y_new.shape != (p,) or not np.all(np.isfinite(y_new)):
        raise ValueError("y_new must be a finite p-vector")

    x, a = state.x_hat, state.a_hat
    if len(state.window) == tau:
        window = state.window[1:] + (y_new,)
        if config.shift_attack:
            a = np.concatenate([a[p:], np.zeros(p)])
    else:
        window = state.window + (y_new,)
    if len(window) < tau:
        return replace(state, window=window, k=state.k + 1)

    y = np.concatenate(window)
    lam = state.lam
    if lam is None:
        lam = default_lambda(model, y, config.lambda_scale)
    omega, nu = model.omega, state.nu
    for _ in range(config.inner_steps):
        r = omega @ x + a - y
        x = x - nu * (omega.T @ r)
        a = a - nu * r
        if config.variant == "soft":
            a = soft_threshold(a, nu * lam)
        else:
            a = block_hard_threshold(a, p, tau, config.s_assumed)
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"observer diverged at k={state.k + 1} (nu={nu:g})")
    return ObserverState(
        model=model,
        x_hat=model.source.a_matrix @ x,
        x_window=x,
        a_hat=a,
        window=window,
        k=state.k + 1,
        nu=nu,
        lam=lam,
    )


def support_error(a_hat, a_true) -> int:
    """Number of stacked entries whose zero/nonzero status disagrees."""
    return int(np.sum((np.asarray(a_hat) != 0) != (np.asarray(a_true) != 0)))


def relative_error(x_hat, x_true) -> float:
    return float(np.linalg.norm(np.asarray(x_hat) - x_true) / np.linalg.norm(x_true))


@dataclass(frozen=True)
class StepRecord:
    k: int
    x_hat: np.ndarray
    a_hat: np.ndarray
    state_error: float
    support_error: int
    step_time_seconds: float


def run_observer(
    model: StackedModel, trajectory: Trajectory, config: ObserverConfig, x_hat0=None
) -> list[StepRecord]:
    """Feed a trajectory through the observer; one record per full window."""
    tau = model.tau
    if trajectory.horizon < tau:
        raise ValueError(f"horizon {trajectory.horizon} is shorter than tau={tau}")
    state = observer_init(model, config, x_hat0)
    out = []
    for k in range(trajectory.horizon):
        t0 = time.perf_counter()
        state = observer_step(state, trajectory.measurements[k], config)
        elapsed = time.perf_counter() - t0
        if k < tau - 1:
            continue
        _, a_true, x_true = trajectory.window(k - tau + 1, tau)
        out.append(StepRecord(
            k=k,
            x_hat=state.x_window,
            a_hat=state.a_hat,
            state_error=relative_error(state.x_window, x_true),
            support_error=support_error(state.a_hat, a_true),
            step_time_seconds=elapsed,
        ))
    return out
