import numpy as np
import pytest

from mpglab import _core_py
from mpglab.errors import SolverError
from mpglab.game_model import assemble_affine_vi
from mpglab.polytope import Polytope
from mpglab.vi_solver import natural_residual, recover_multipliers, solve
from oracles import (enumerate_avi, make_avi, monotone_conjecture, random_game,
                     unconstrained_solution)


def test_scalar_lower_bound_active():
    # F(u) = 2u + 1 on [0, 1]: u* = 0 with multiplier 1 on the lower bound
    avi = make_avi([[2.0]], [1.0], Polytope.from_box([0.0], [1.0]))
    sol = solve(avi, np.zeros(1))
    assert sol.u_star[0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.nu, [1.0, 0.0], atol=1e-10)
    assert sol.active_set.tolist() == [0] and sol.licq


def test_interior_solution_is_linear_solve():
    rng = np.random.default_rng(0)
    dyn, dims, K = random_game(rng, n_agents=2, K=3)
    Z = Polytope.from_box(-1e3 * np.ones(K * dyn.m), 1e3 * np.ones(K * dyn.m))
    conj, avi = monotone_conjecture(rng, 0, dyn, K, Z)
    x = rng.normal(size=dyn.n_x)
    sol = solve(avi, x)
    np.testing.assert_allclose(sol.u_star, unconstrained_solution(avi, x), atol=1e-10)
    assert sol.active_set.size == 0 and np.all(sol.nu == 0)


def _instance(rng):
    dyn, dims, K = random_game(rng, K=int(rng.integers(1, 3)))
    n = K * dyn.m
    wide = Polytope.from_box(-1e6 * np.ones(n), 1e6 * np.ones(n))
    conj, avi = monotone_conjecture(rng, 0, dyn, K, wide)
    x = rng.normal(size=dyn.n_x) * 2
    u_free = unconstrained_solution(avi, x)
    half = np.max(np.abs(u_free)) * rng.uniform(0.6, 1.0)
    row = rng.normal(size=(1, n))
    Z = Polytope.from_box(-half * np.ones(n), half * np.ones(n), C=row,
                          d=[float(row[0] @ u_free) * rng.uniform(0.5, 1.2) + 0.1])
    return assemble_affine_vi(conj, dyn, Z), x


def test_matches_active_set_enumeration():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 25:
        avi, x = _instance(rng)
        Z = avi.feasible_set
        ref = enumerate_avi(avi.M, avi.offset(x), Z.C, Z.d, max_active=3)
        if ref is None:
            continue
        sol = solve(avi, x)
        assert sol.residual <= 1e-9
        np.testing.assert_allclose(sol.u_star, ref[0], atol=1e-7)
        checked += 1


def test_multistart_agreement():
    rng = np.random.default_rng(2)
    avi, x = _instance(rng)
    tol = 1e-9
    base = solve(avi, x, tol=tol, polish=False).u_star
    for _ in range(5):
        u0 = rng.normal(size=base.shape) * 5
        u = solve(avi, x, tol=tol, u0=u0, polish=False).u_star
        assert np.linalg.norm(u - base) <= 2 * tol / avi.rho


def test_polish_agrees_with_plain_iteration():
    rng = np.random.default_rng(3)
    avi, x = _instance(rng)
    a = solve(avi, x, polish=False)
    b = solve(avi, x, polish=True)
    assert np.linalg.norm(a.u_star - b.u_star) <= 2e-9 / avi.rho
    assert b.iterations <= a.iterations


def test_python_backend_same_solution():
    rng = np.random.default_rng(4)
    avi, x = _instance(rng)
    a = solve(avi, x)
    b = solve(avi, x, kernels=_core_py)
    np.testing.assert_allclose(a.u_star, b.u_star, atol=1e-9)
    assert natural_residual(avi, b.u_star, x, _core_py) <= 1e-9


def test_iteration_cap_raises():
    rng = np.random.default_rng(5)
    avi, x = _instance(rng)
    with pytest.raises(SolverError) as info:
        solve(avi, x, max_iter=1, polish=False, u0=np.full(avi.M.shape[0], 1e3))
    assert info.value.residual > 1e-9


def test_record_collects_iterates():
    avi = make_avi([[2.0]], [4.0], Polytope.from_box([-1.0], [1.0]))
    seen = []
    sol = solve(avi, np.zeros(1), record=seen, polish=False)
    assert len(seen) == sol.iterations + 1
    assert sol.u_star[0] == pytest.approx(-1.0)


def test_duplicate_active_rows_flag_licq():
    # u <= -0.5 written twice; F(u) = 2u + 2 pushes to -1 beyond it
    Z = Polytope.from_box([-2.0], [2.0], C=[[1.0], [1.0]], d=[-0.5, -0.5])
    avi = make_avi([[2.0]], [2.0], Z)
    sol = solve(avi, np.zeros(1))
    assert sol.u_star[0] == pytest.approx(-1.0)
    Z2 = Polytope.from_box([-2.0], [2.0], C=[[1.0], [1.0]], d=[-1.5, -1.5])
    avi2 = make_avi([[2.0]], [2.0], Z2)
    sol2 = solve(avi2, np.zeros(1))
    assert sol2.u_star[0] == pytest.approx(-1.5)
    assert not sol2.licq
    # any valid multiplier split still satisfies stationarity
    assert sol2.stationarity <= 1e-9
    nu, mu, licq, stat = recover_multipliers(sol2.u_star, avi2, np.zeros(1))
    assert np.all(nu >= 0) and nu[2:].sum() == pytest.approx(1.0)
