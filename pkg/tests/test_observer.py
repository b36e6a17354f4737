import numpy as np
import pytest

from lassosse.model import (
    AttackScenario,
    InstanceConfig,
    LtiSystem,
    build_stacked_model,
    generate_random_instance,
    simulate,
)
from lassosse.observer import (
    ObserverConfig,
    observer_init,
    observer_step,
    relative_error,
    run_observer,
    support_error,
)
from lassosse.solvers import DivergenceError, SolverConfig, solve_lasso


def instance(n=4, p=6, s=1, tau=None, horizon=30, seed=3):
    tau = tau or n
    sys, x0, sc = generate_random_instance(n, p, s, tau, InstanceConfig(horizon=horizon), seed=seed)
    return sys, build_stacked_model(sys, tau), simulate(sys, x0, sc, horizon)


def test_init():
    _, model, _ = instance()
    cfg = ObserverConfig(tau=4)
    st = observer_init(model, cfg)
    assert st.k == -1 and st.window == () and not st.x_hat.any() and not st.a_hat.any()
    assert st.a_hat.shape == (model.rows,)
    with pytest.raises(ValueError):
        observer_init(model, ObserverConfig(tau=2))


def test_config_defaults():
    assert ObserverConfig(tau=3).inner_steps == 15
    with pytest.raises(ValueError):
        ObserverConfig(tau=0)
    with pytest.raises(ValueError):
        ObserverConfig(tau=2, variant="hard")


def test_exact_start_stays_exact():
    rng = np.random.default_rng(0)
    sys = LtiSystem(np.linalg.qr(rng.standard_normal((3, 3)))[0], rng.standard_normal((5, 3)))
    x0 = rng.standard_normal(3)
    traj = simulate(sys, x0, AttackScenario.attack_free(5, 20), 20)
    model = build_stacked_model(sys, 3)
    recs = run_observer(model, traj, ObserverConfig(tau=3, lam=0.1), x_hat0=x0)
    assert len(recs) == 18
    assert max(r.state_error for r in recs) < 1e-12
    assert all(r.support_error == 0 for r in recs)


def test_hand_unrolled():
    sys, model, traj = instance(n=3, p=4, tau=2, seed=5)
    cfg = ObserverConfig(tau=2, lam=0.05, inner_steps=1)
    st = observer_init(model, cfg)
    big = np.hstack([model.omega, np.eye(model.rows)])
    x, a = np.zeros(3), np.zeros(model.rows)
    for k in range(6):
        st = observer_step(st, traj.measurements[k], cfg)
        if k < 1:
            continue
        y = traj.measurements[k - 1:k + 1].reshape(-1)
        z = np.concatenate([x, a])
        z = z - st.nu * big.T @ (big @ z - y)
        w = z[3:]
        a = np.sign(w) * np.maximum(np.abs(w) - st.nu * 0.05, 0.0)
        x = sys.a_matrix @ z[:3]
        np.testing.assert_allclose(st.x_hat, x, atol=1e-12)
        np.testing.assert_allclose(st.a_hat, a, atol=1e-12)


def test_window_alignment():
    _, model, traj = instance(tau=3)
    cfg = ObserverConfig(tau=3)
    st = observer_init(model, cfg)
    for k in range(7):
        st = observer_step(st, traj.measurements[k], cfg)
        lo = max(0, k - 2)
        np.testing.assert_array_equal(st.stacked_measurement, traj.measurements[lo:k + 1].reshape(-1))
        assert st.k == k


def test_tau_one():
    _, model, traj = instance(tau=1)
    cfg = ObserverConfig(tau=1)
    st = observer_step(observer_init(model, cfg), traj.measurements[0], cfg)
    assert st.a_hat.shape == (model.p,) and st.lam is not None


def test_zero_lambda_keeps_gradient_step():
    _, model, traj = instance(tau=1)
    cfg = ObserverConfig(tau=1, lam=0.0, inner_steps=1)
    st0 = observer_init(model, cfg)
    st = observer_step(st0, traj.measurements[0], cfg)
    np.testing.assert_allclose(st.a_hat, st0.nu * traj.measurements[0])


def test_block_keeps_s_blocks():
    _, model, traj = instance(n=4, p=6, s=2, tau=2)
    cfg = ObserverConfig(tau=2, variant="block", s_assumed=2)
    st = observer_init(model, cfg)
    for k in range(6):
        st = observer_step(st, traj.measurements[k], cfg)
    blocks = st.a_hat.reshape(2, 6)
    assert np.count_nonzero(np.any(blocks != 0, axis=0)) == 2


def test_shift_attack_mode():
    _, model, traj = instance(tau=2)
    cfg = ObserverConfig(tau=2, inner_steps=1, lam=0.0, shift_attack=True)
    st = observer_init(model, cfg)
    st = observer_step(st, traj.measurements[0], cfg)
    st = observer_step(st, traj.measurements[1], cfg)
    before = st.a_hat.copy()
    nxt = observer_step(st, traj.measurements[2], cfg)
    y = traj.measurements[1:3].reshape(-1)
    a_in = np.concatenate([before[6:], np.zeros(6)])
    r = model.omega @ st.x_hat + a_in - y
    np.testing.assert_allclose(nxt.a_hat, a_in - st.nu * r, atol=1e-12)


def test_converges_to_lasso_on_one_window():
    _, model, traj = instance(n=3, p=5, tau=3, seed=7)
    lam = 0.01
    cfg = ObserverConfig(tau=3, lam=lam, inner_steps=200_000)
    st = observer_init(model, cfg)
    for k in range(3):
        st = observer_step(st, traj.measurements[k], cfg)
    y = traj.measurements[:3].reshape(-1)
    est = solve_lasso(model, y, SolverConfig(lam=lam, tolerance=1e-13))
    np.testing.assert_allclose(st.x_window, est.x_hat, atol=1e-7)


def test_rejects_bad_measurement():
    _, model, _ = instance()
    cfg = ObserverConfig(tau=4)
    st = observer_init(model, cfg)
    with pytest.raises(ValueError):
        observer_step(st, np.ones(5), cfg)
    with pytest.raises(ValueError):
        observer_step(st, np.full(6, np.nan), cfg)


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
def test_divergence():
    _, model, traj = instance()
    cfg = ObserverConfig(tau=4, nu=100.0, inner_steps=50)
    with pytest.raises(DivergenceError):
        run_observer(model, traj, cfg)


def test_short_horizon():
    _, model, traj = instance(horizon=3)
    with pytest.raises(ValueError):
        run_observer(model, traj, ObserverConfig(tau=4))


def test_metrics():
    assert support_error([0, 1, 0], [0, 2, 3]) == 1
    assert support_error([1, 0], [0, 1]) == support_error([0, 1], [1, 0]) == 2
    assert relative_error([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1.0)
