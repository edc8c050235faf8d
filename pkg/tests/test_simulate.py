import numpy as np
import pytest

from mpglab.errors import MpgLabError
from mpglab.game_model import ConjectureSet, Dynamics, StageCost, agent_indices
from mpglab.mpg import ControllerBank
from mpglab.polytope import Polytope
from mpglab.simulate import game_to_real_gap, lyapunov_monitor, run, step
from mpglab.vi_solver import solve
from conftest import homogeneous_bank, scalar_bank
from oracles import horizon_cost


def test_zero_input_matrix_is_open_loop():
    dyn = Dynamics([[0.5, 0.1], [0.0, 0.3]], [np.zeros((2, 1))])
    c = StageCost(np.eye(2), [1.0, 0.0], [[1.0]], (1,))
    bank = ControllerBank(dyn, [ConjectureSet(0, (c,), 2)], Polytope.from_box([-1, -1], [1, 1]))
    x = np.array([1.0, -2.0])
    x_next, rec = step(bank, x)
    np.testing.assert_array_equal(x_next, dyn.A @ x)


def test_step_matches_independent_solves(example1):
    bank = example1.bank()
    x = np.array([1.0, 1.0])
    x_next, rec = step(bank, x)
    u = [solve(vi, x).u_star[j] for j, vi in enumerate(bank.vis)]
    dyn = example1.dynamics
    expect = dyn.A @ x + sum(B[:, 0] * uj for B, uj in zip(dyn.B_list, u))
    np.testing.assert_allclose(x_next, expect, atol=1e-12)


def test_zero_action_controller_decays_like_A():
    # no input cost beyond R and no state cost: interior zero action
    dyn = Dynamics([[0.6, 0.2], [0.0, 0.5]], [[[1.0], [0.0]], [[0.0], [1.0]]])
    zero = StageCost(np.zeros((2, 2)), [0.0, 0.0], np.eye(2), (1, 1))
    bank = homogeneous_bank(dyn, (zero, zero), 3, Polytope.from_box(-np.ones(6), np.ones(6)))
    x0 = np.array([1.0, 1.0])
    log = run(bank, x0, max_steps=200, conv_tol=1e-12)
    assert np.all(log.actions == 0)
    X = log.states
    for t in range(5):
        np.testing.assert_allclose(X[t], np.linalg.matrix_power(dyn.A, t) @ x0, atol=1e-15)
    assert log.status == "converged" and np.linalg.norm(log.final_state) < 1e-10


def test_log_satisfies_dynamics(example1):
    log = run(example1.bank(), [0.5, -1.0])
    dyn = example1.dynamics
    X = log.states
    for t, rec in enumerate(log.records):
        assert rec.t == t
        np.testing.assert_allclose(X[t + 1], dyn.A @ X[t] + dyn.B @ rec.u_circ, atol=1e-12)


def test_fixed_point_step(example1):
    bank = example1.bank()
    log = run(bank, [1.0, 1.0])
    assert log.status == "converged"
    x_bar = log.equilibrium.x_bar
    assert log.equilibrium.residual <= 1e-10
    x_next, _ = step(bank, x_bar)
    assert np.linalg.norm(x_next - x_bar) <= 1e-9


def test_multistart_equilibrium(example1):
    rng = np.random.default_rng(0)
    bars = []
    for _ in range(4):
        x0 = rng.normal(size=2)
        bars.append(run(example1.bank(), x0).final_state)
    for b in bars[1:]:
        np.testing.assert_allclose(b, bars[0], atol=1e-6)


def test_example2_diverges(example2):
    log = run(example2.bank(), [1.0, 1.0], max_steps=500)
    assert log.status == "diverged"
    assert np.linalg.norm(log.final_state) >= 1e3


def test_max_steps_status(example1):
    log = run(example1.bank(), [1.0, 1.0], max_steps=3)
    assert log.status == "max_steps" and len(log) == 3


def test_gap_zero_for_homogeneous_and_single_agent(example1):
    costs = example1.conjectures[0].costs
    bank = homogeneous_bank(example1.dynamics, costs, 5, example1.polytope)
    log = run(bank, [1.0, 1.0], max_steps=50)
    assert np.max(np.abs(log.gaps)) <= 1e-9
    single = scalar_bank(q=-1.0, Qx=1.0, K=3)
    log = run(single, [0.7], max_steps=20)
    assert np.max(np.abs(log.gaps)) <= 1e-12


def test_gap_matches_rollout_oracle(example1):
    bank = example1.bank()
    dyn = example1.dynamics
    x = np.array([1.0, -0.5])
    preds = bank.predict(x)
    gaps = game_to_real_gap(bank, x, preds)
    K, dims = bank.horizon, dyn.input_dims
    for j in range(2):
        u_real = np.empty(K * dyn.m)
        for i in range(2):
            idx = agent_indices(dims, K, i)
            u_real[idx] = preds[i].u_star[idx]
        c = bank.conjectures[j].resolved()[j]
        expect = (horizon_cost(c.Q, c.q, c.R, dyn.A, dyn.B_list, x, u_real, K)
                  - horizon_cost(c.Q, c.q, c.R, dyn.A, dyn.B_list, x, preds[j].u_star, K))
        assert gaps[j] == pytest.approx(expect, rel=1e-10, abs=1e-12)
    first = game_to_real_gap(bank, x, preds, mode="first_stage")
    assert first.shape == (2,) and not np.allclose(first, gaps)
    with pytest.raises(ValueError):
        game_to_real_gap(bank, x, preds, mode="nope")


def test_lyapunov_closed_form():
    X = np.array([[2.0 * 0.5 ** t] for t in range(8)])
    rep = lyapunov_monitor(X, np.eye(1), np.zeros(1))
    np.testing.assert_allclose(rep.delta_V, -0.75 * X[:-1, 0] ** 2)
    assert rep.ok
    flat = lyapunov_monitor(np.ones((5, 1)), np.eye(1), np.ones(1))
    assert np.all(flat.delta_V == 0) and flat.ok


def test_lyapunov_flags_growth_and_bad_P():
    X = np.array([[1.0], [0.5], [0.8], [0.1]])
    assert lyapunov_monitor(X, np.eye(1), np.zeros(1)).violations == [1]
    with pytest.raises(MpgLabError):
        lyapunov_monitor(X, -np.eye(1), np.zeros(1))
    with pytest.raises(MpgLabError):
        lyapunov_monitor(np.ones((2, 2)), np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))
