import numpy as np
import pytest

from mpglab.errors import DimensionError
from mpglab.game_model import ConjectureSet
from mpglab.mpg import (ControllerBank, controller_action, realized_action, selection_matrix,
                        shift_warm_start, stacked_selection)
from mpglab.vi_solver import solve


def test_selection_picks_stage_zero_columns():
    S = selection_matrix((1, 2), 3, 1)
    assert S.shape == (2, 9)
    u = np.arange(9.0)
    np.testing.assert_array_equal(S @ u, [1.0, 2.0])
    Xi = stacked_selection((1, 2), 3)
    assert Xi.shape == (3, 18)
    np.testing.assert_array_equal(Xi @ np.concatenate([u, u + 100]), [0.0, 101.0, 102.0])


def test_shift_warm_start():
    np.testing.assert_array_equal(shift_warm_start(np.arange(6.0), 3, 2), [2, 3, 4, 5, 4, 5])


def test_realized_action_composes_independent_solves(example1):
    bank = example1.bank()
    x = np.array([1.0, 1.0])
    u = realized_action(bank, x)
    own = []
    for j, vi in enumerate(bank.vis):
        sol = solve(vi, x)
        own.append(sol.u_star[j])  # K-stage stacks start with stage 0, agent j has m_j = 1
    np.testing.assert_allclose(u, own, atol=1e-12)
    a0, _ = controller_action(bank, 0, x)
    np.testing.assert_allclose(a0, own[:1], atol=1e-12)


def test_threads_do_not_change_results(example1, monkeypatch):
    x = np.array([0.3, -0.7])
    a = example1.bank(threads=1).predict(x)
    b = example1.bank(threads=2).predict(x)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.u_star, q.u_star)
    monkeypatch.setenv("MPG_LAB_THREADS", "2")
    c = example1.bank().predict(x)
    for p, q in zip(a, c):
        np.testing.assert_array_equal(p.u_star, q.u_star)


def test_warm_start_matches_cold(example1):
    bank = example1.bank()
    cold = example1.bank()
    cold.warm_start = False
    x = np.array([1.0, 1.0])
    for _ in range(5):
        u = realized_action(bank, x)
        v = realized_action(cold, x)
        assert np.linalg.norm(u - v) <= 2e-9 / min(bank.rho)
        x = bank.dynamics.A @ x + bank.dynamics.B @ u


def test_bank_validates_conjectures(example1):
    conj = example1.conjectures
    with pytest.raises(DimensionError):
        ControllerBank(example1.dynamics, conj[:1], example1.polytope)
    with pytest.raises(ValueError):
        ControllerBank(example1.dynamics, conj[::-1], example1.polytope)
    other = ConjectureSet(1, conj[1].costs, 3)
    with pytest.raises(ValueError):
        ControllerBank(example1.dynamics, (conj[0], other), example1.polytope)
    with pytest.raises(DimensionError):
        example1.bank().predict(np.zeros(3))
