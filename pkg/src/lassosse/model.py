"""Plant model, stacked measurement map, simulation and random instances.

Sensor and stacked-row indices are 0-based throughout. The stacked
measurement for a window starting at step ``k0`` is
``(y(k0), y(k0+1), ..., y(k0+tau-1))`` so sensor ``i`` at window offset
``t`` sits at row ``t * p + i``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAX_SUBSETS = 10**6


class InvalidSystemError(ValueError):
    """Raised when A and C have inconsistent shapes."""


class CombinatorialLimitError(RuntimeError):
    """Raised when a subset enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class LtiSystem:
    """Zero-input plant ``x(k+1) = A x(k)``, ``y(k) = C x(k) + a(k)``."""

    a_matrix: np.ndarray
    c_matrix: np.ndarray

    def __post_init__(self):
        a = np.array(self.a_matrix, dtype=float)
        c = np.array(self.c_matrix, dtype=float)
        if c.ndim == 1:
            c = c.reshape(1, -1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidSystemError(f"A must be square n x n with n >= 1, got {a.shape}")
        if c.ndim != 2 or c.shape[1] != a.shape[0] or c.shape[0] < 1:
            raise InvalidSystemError(
                f"C must be p x {a.shape[0]} with p >= 1, got {c.shape}"
            )
        a.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "c_matrix", c)

    @property
    def n(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def p(self) -> int:
        return self.c_matrix.shape[0]

    def drop_sensors(self, sensors: Sequence[int]) -> "LtiSystem":
        keep = [i for i in range(self.p) if i not in set(sensors)]
        return LtiSystem(self.a_matrix, self.c_matrix[keep])


@dataclass(frozen=True)
class StackedModel:
    """Stacked map ``O = (C; CA; ...; CA^(tau-1))`` of a window of length tau.

    The identity block acting on the stacked attack is implicit.
    """

    omega: np.ndarray
    tau: int
    source: LtiSystem

    @property
    def n(self) -> int:
        return self.omega.shape[1]

    @property
    def p(self) -> int:
        return self.source.p

    @property
    def rows(self) -> int:
        return self.omega.shape[0]

    def sensor_rows(self, sensors) -> np.ndarray:
        """Stacked row indices belonging to the given sensors, in row order."""
        sensors = set(int(i) for i in sensors)
        return np.array(
            [t * self.p + i for t in range(self.tau) for i in range(self.p) if i in sensors],
            dtype=int,
        )


def build_stacked_model(sys: LtiSystem, tau: int) -> StackedModel:
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if sys.c_matrix.shape[1] != sys.a_matrix.shape[0]:
        raise InvalidSystemError("dimension mismatch between A and C")
    blocks = []
    block = sys.c_matrix
    for _ in range(tau):
        blocks.append(block)
        block = block @ sys.a_matrix
    omega = np.vstack(blocks)
    omega.setflags(write=False)
    return StackedModel(omega=omega, tau=tau, source=sys)


def _rank_tol(m: np.ndarray, sv: np.ndarray) -> float:
    if sv.size == 0:
        return 0.0
    return max(m.shape) * np.finfo(float).eps * sv[0]


def numerical_rank(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(sv > _rank_tol(m, sv)))


def is_observable(model: StackedModel) -> bool:
    return numerical_rank(model.omega) == model.n


def is_sparse_observable(
    sys: LtiSystem, tau: int, q: int, max_subsets: int = MAX_SUBSETS
) -> bool:
    """True iff removing any ``q`` sensors leaves the window observable."""
    if not 0 <= q <= sys.p - 1:
        raise ValueError(f"q must lie in [0, p-1] = [0, {sys.p - 1}], got {q}")
    count = math.comb(sys.p, q)
    if count > max_subsets:
        raise CombinatorialLimitError(
            f"{count} subsets of size {q} exceed the cap of {max_subsets}"
        )
    omega = build_stacked_model(sys, tau)
    for removed in itertools.combinations(range(sys.p), q):
        keep = np.setdiff1d(np.arange(omega.rows), omega.sensor_rows(removed))
        if numerical_rank(omega.omega[keep]) != sys.n:
            return False
    return True


@dataclass(frozen=True)
class AttackScenario:
    """Attack values over a horizon plus the measurement noise bound.

    ``magnitudes`` has shape ``(horizon, p)``; entries of sensors not attacked
    at a step are exactly zero. ``support`` is the attacked sensor set at
    step 0 (the whole-horizon set when ``time_varying`` is False).
    """

    support: frozenset
    magnitudes: np.ndarray
    time_varying: bool = False
    noise_bound: float = 0.0

    def __post_init__(self):
        mags = np.array(self.magnitudes, dtype=float)
        if mags.ndim != 2:
            raise ValueError("magnitudes must be a (horizon, p) array")
        if self.noise_bound < 0:
            raise ValueError("noise_bound must be nonnegative")
        support = frozenset(int(i) for i in self.support)
        if any(i < 0 or i >= mags.shape[1] for i in support):
            raise ValueError("support index out of range")
        if not self.time_varying:
            off = [i for i in range(mags.shape[1]) if i not in support]
            if np.any(mags[:, off] != 0):
                raise ValueError("non-attacked sensors must have zero attack")
        mags.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "noise_bound", float(self.noise_bound))

    @property
    def horizon(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def p(self) -> int:
        return self.magnitudes.shape[1]

    def support_at(self, k: int) -> frozenset:
        return frozenset(np.flatnonzero(self.magnitudes[k]).tolist())

    @classmethod
    def attack_free(cls, p: int, horizon: int, noise_bound: float = 0.0) -> "AttackScenario":
        return cls(frozenset(), np.zeros((horizon, p)), False, noise_bound)


@dataclass(frozen=True)
class Trajectory:
    """Rows are time steps: ``states[k] = x(k)``, ``measurements[k] = y(k)``."""

    states: np.ndarray
    measurements: np.ndarray
    attacks: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def window(self, k0: int, tau: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (y, a) of the window starting at ``k0`` and the state x(k0)."""
        if k0 < 0 or k0 + tau > self.horizon:
            raise ValueError(f"window [{k0}, {k0 + tau}) outside horizon {self.horizon}")
        y = self.measurements[k0:k0 + tau].reshape(-1)
        a = self.attacks[k0:k0 + tau].reshape(-1)
        return y, a, self.states[k0]


def simulate(
    sys: LtiSystem,
    x0,
    scenario: AttackScenario,
    horizon: int,
    seed=None,
) -> Trajectory:
    """Roll the plant forward and corrupt the outputs.

    Noise is uniform on ``[-noise_bound, noise_bound]`` per entry and drawn
    from ``seed``; with a zero bound no randomness is consumed.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite n-vector")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if scenario.horizon < horizon:
        raise ValueError(
            f"scenario covers {scenario.horizon} steps, {horizon} requested"
        )
    if scenario.p != sys.p:
        raise ValueError("scenario sensor count does not match the system")
    states = np.empty((horizon, sys.n))
    states[0] = x0
    for k in range(1, horizon):
        states[k] = sys.a_matrix @ states[k - 1]
    attacks = np.array(scenario.magnitudes[:horizon])
    measurements = states @ sys.c_matrix.T + attacks
    if scenario.noise_bound > 0:
        rng = np.random.default_rng(seed)
        measurements += rng.uniform(
            -scenario.noise_bound, scenario.noise_bound, size=measurements.shape
        )
    for arr in (states, measurements, attacks):
        arr.setflags(write=False)
    return Trajectory(states, measurements, attacks)


@dataclass(frozen=True)
class InstanceConfig:
    """Ranges of the random instance recipe."""

    state_range: tuple = (2.0, 3.0)
    attack_range: tuple = (4.0, 5.0)
    noise_bound: float = 0.0
    horizon: Optional[int] = None
    time_varying: bool = False
    target_radius: float = 1.0
    # "constant": one signed value per attacked sensor held over the horizon;
    # "random": a fresh signed value per (step, sensor)
    attack_profile: str = "constant"


def _signed_uniform(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    return rng.uniform(lo, hi, size=size) * rng.choice([-1.0, 1.0], size=size)


def generate_random_instance(
    n: int,
    p: int,
    s: int,
    tau: int,
    config: Optional[InstanceConfig] = None,
    seed=None,
) -> tuple[LtiSystem, np.ndarray, AttackScenario]:
    """Draw a random plant, initial state and sparse sensor attack.

    A and C have i.i.d. standard normal entries and A is rescaled so that its
    spectral radius equals ``config.target_radius``. The scenario spans
    ``config.horizon`` steps (``tau`` when unset).
    """
    config = config or InstanceConfig()
    if not 0 <= s <= p:
        raise ValueError(f"need 0 <= s <= p, got s={s}, p={p}")
    if not 1 <= tau <= n:
        raise ValueError(f"need 1 <= tau <= n, got tau={tau}, n={n}")
    horizon = config.horizon or tau
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    c = rng.standard_normal((p, n))
    radius = np.max(np.abs(np.linalg.eigvals(a)))
    a = a * (config.target_radius / radius)
    x0 = _signed_uniform(rng, *config.state_range, size=n)

    mags = np.zeros((horizon, p))
    steps = horizon if config.time_varying else 1
    supports = [np.sort(rng.choice(p, size=s, replace=False)) for _ in range(steps)]
    if config.attack_profile == "constant":
        values = np.tile(_signed_uniform(rng, *config.attack_range, size=s), (horizon, 1))
    elif config.attack_profile == "random":
        values = _signed_uniform(rng, *config.attack_range, size=(horizon, s))
    else:
        raise ValueError(f"unknown attack_profile {config.attack_profile!r}")
    for k in range(horizon):
        mags[k, supports[k if config.time_varying else 0]] = values[k]
    scenario = AttackScenario(
        frozenset(supports[0].tolist()), mags, config.time_varying, config.noise_bound
    )
    return LtiSystem(a, c), x0, scenario


# -- instance files ---------------------------------------------------------

SCHEMA_VERSION = 1


def instance_schema() -> dict:
    text = resources.files("lassosse").joinpath("schemas/instance.schema.json").read_text()
    return json.loads(text)


def instance_to_dict(
    sys: LtiSystem, x0, scenario: AttackScenario, seed=None, tau: Optional[int] = None
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "n": sys.n,
        "p": sys.p,
        "tau": tau,
        "a_matrix": sys.a_matrix.reshape(-1).tolist(),
        "c_matrix": sys.c_matrix.reshape(-1).tolist(),
        "x0": np.asarray(x0, dtype=float).tolist(),
        "support": sorted(scenario.support),
        "horizon": scenario.horizon,
        "magnitudes": scenario.magnitudes.reshape(-1).tolist(),
        "time_varying": scenario.time_varying,
        "noise_bound": scenario.noise_bound,
        "seed": seed,
    }


def instance_from_dict(doc: dict) -> tuple[LtiSystem, np.ndarray, AttackScenario, dict]:
    """Inverse of :func:`instance_to_dict`; returns ``(sys, x0, scenario, meta)``."""
    import jsonschema

    jsonschema.validate(doc, instance_schema())
    n, p, horizon = doc["n"], doc["p"], doc["horizon"]
    sys = LtiSystem(
        np.array(doc["a_matrix"], dtype=float).reshape(n, n),
        np.array(doc["c_matrix"], dtype=float).reshape(p, n),
    )
    scenario = AttackScenario(
        frozenset(doc["support"]),
        np.array(doc["magnitudes"], dtype=float).reshape(horizon, p),
        doc["time_varying"],
        doc["noise_bound"],
    )
    meta = {"seed": doc.get("seed"), "tau": doc.get("tau")}
    return sys, np.array(doc["x0"], dtype=float), scenario, meta


def write_instance(path, sys: LtiSystem, x0, scenario: AttackScenario, seed=None, tau=None):
    # repr-precision floats keep the round trip value-exact
    Path(path).write_text(json.dumps(instance_to_dict(sys, x0, scenario, seed, tau), indent=1))


def read_instance(path):
    return instance_from_dict(json.loads(Path(path).read_text()))
