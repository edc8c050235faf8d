import numpy as np
import pytest

from mpglab.errors import RegularityError
from mpglab.game_model import (ConjectureSet, Dynamics, ParamCostBasis, StageCost,
                               assemble_affine_vi)
from mpglab.mpg import ControllerBank
from mpglab.polytope import Polytope
from mpglab.sensitivity import (equilibrium_sensitivity, kkt_jacobians, kkt_point,
                                kkt_residual, local_derivatives, newton_polish,
                                prediction_sensitivity, sweep_point, theta_sweep)
from mpglab.simulate import run
from mpglab.vi_solver import solve
from conftest import scalar_bank
from oracles import make_avi, monotone_conjecture, random_game, unconstrained_solution


def test_scalar_kkt_jacobian_by_hand():
    avi = make_avi([[2.0]], [1.0], Polytope.from_box([0.0], [1.0]))
    pt = kkt_point(avi, np.zeros(1))
    J, Jx, Jt = kkt_jacobians(pt, avi)
    # rows: stationarity, then nu_k (C_k u - d_k) for the two bounds
    np.testing.assert_allclose(J, [[2.0, -1.0, 1.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]],
                               atol=1e-12)
    # finite differences of the KKT map in p = (u, nu)
    p0 = pt.p
    h = 1e-7
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        up = kkt_residual(avi, np.zeros(1), *np.split(p0 + e, [1]), np.zeros(0))
        dn = kkt_residual(avi, np.zeros(1), *np.split(p0 - e, [1]), np.zeros(0))
        np.testing.assert_allclose(J[:, k], (up - dn) / (2 * h), atol=1e-7)
    assert Jt.shape == (3, 0)


def test_interior_slack_rows_are_diagonal():
    avi = make_avi([[2.0, 0.5], [0.0, 3.0]], [0.1, -0.2], Polytope.from_box([-5, -5], [5, 5]))
    pt = kkt_point(avi, np.zeros(1))
    J, _, _ = kkt_jacobians(pt, avi)
    np.testing.assert_array_equal(J[:2, :2], avi.M)
    Z = avi.feasible_set
    np.testing.assert_allclose(np.diag(J[2:, 2:]), Z.C @ pt.u - Z.d)
    assert np.all(J[2:, :2] == 0)


def test_interior_prediction_sensitivity():
    rng = np.random.default_rng(0)
    dyn, dims, K = random_game(rng, n_agents=2, K=3)
    Z = Polytope.from_box(-1e3 * np.ones(K * dyn.m), 1e3 * np.ones(K * dyn.m))
    _, avi = monotone_conjecture(rng, 0, dyn, K, Z)
    x = rng.normal(size=dyn.n_x)
    gx, gt, _, _ = prediction_sensitivity(kkt_point(avi, x), avi)
    np.testing.assert_allclose(gx, -np.linalg.solve(avi.M, avi.F_x), atol=1e-10)
    assert gt.shape[1] == 0


def test_zero_state_injection_gives_zero_sensitivity():
    avi = make_avi([[2.0]], [1.0], Polytope.from_box([0.0], [1.0]), F_x=np.zeros((1, 2)))
    gx, _, _, _ = prediction_sensitivity(kkt_point(avi, np.zeros(2)), avi)
    assert np.all(gx == 0)


def _active_instance(rng):
    """Two agents, some bounds active with clear margins."""
    while True:
        dyn, dims, K = random_game(rng, n_agents=2, K=2, n_x=2)
        n = K * dyn.m
        wide = Polytope.from_box(-1e6 * np.ones(n), 1e6 * np.ones(n))
        a, _ = monotone_conjecture(rng, 1, dyn, K, wide)
        b, _ = monotone_conjecture(rng, 1, dyn, K, wide)
        costs = tuple(ParamCostBasis((ca, cb), [0.6, 0.4]) for ca, cb in zip(a.costs, b.costs))
        conj = ConjectureSet(1, costs, K)
        x = rng.normal(size=2)
        try:
            avi = assemble_affine_vi(conj, dyn, wide)
        except Exception:
            continue
        free = unconstrained_solution(avi, x)
        half = np.sort(np.abs(free))[-2] * 0.8 + 0.05 * np.max(np.abs(free))
        Z = Polytope.from_box(-half * np.ones(n), half * np.ones(n))
        avi = assemble_affine_vi(conj, dyn, Z)
        pt = kkt_point(avi, x)
        if (pt.active.size and pt.min_active_nu > 1e-3 and pt.min_inactive_slack > 1e-3):
            return conj, dyn, Z, avi, x, pt


def test_prediction_sensitivity_matches_resolves():
    rng = np.random.default_rng(1)
    for _ in range(5):
        conj, dyn, Z, avi, x, pt = _active_instance(rng)
        gx, gt, _, _ = prediction_sensitivity(pt, avi)
        h = 1e-5
        for k in range(dyn.n_x):
            e = np.zeros(dyn.n_x)
            e[k] = h
            up = solve(avi, x + e, tol=1e-13).u_star
            dn = solve(avi, x - e, tol=1e-13).u_star
            fd = (up - dn) / (2 * h)
            assert np.max(np.abs(fd - gx[:, k])) <= max(1e-4 * np.max(np.abs(gx[:, k])), 1e-7)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            up = assemble_affine_vi(conj.with_theta(conj.theta + e), dyn, Z)
            dn = assemble_affine_vi(conj.with_theta(conj.theta - e), dyn, Z)
            fd = (solve(up, x, tol=1e-13).u_star - solve(dn, x, tol=1e-13).u_star) / (2 * h)
            assert np.max(np.abs(fd - gt[:, k])) <= max(1e-4 * np.max(np.abs(gt[:, k])), 1e-7)


def test_active_set_stable_under_small_perturbations():
    rng = np.random.default_rng(2)
    conj, dyn, Z, avi, x, pt = _active_instance(rng)
    for _ in range(10):
        v = rng.normal(size=dyn.n_x)
        v *= 1e-6 / np.linalg.norm(v)
        assert np.array_equal(kkt_point(avi, x + v).active, pt.active)


def _scalar_param_bank(theta, K=2, a=0.5, b=1.0):
    dyn = Dynamics([[a]], [[[b]]])
    g1 = StageCost([[1.0]], [-2.0], [[1.0]], (1,))
    g2 = StageCost([[0.3]], [-0.5], [[2.0]], (1,))
    conj = ConjectureSet(0, (ParamCostBasis((g1, g2), theta),), K)
    Z = Polytope.from_box(-100 * np.ones(K), 100 * np.ones(K))
    return ControllerBank(dyn, [conj], Z)


def test_scalar_equilibrium_sensitivity_closed_form():
    theta = np.array([0.7, 0.4])
    bank = _scalar_param_bank(theta)
    x_star, _, _ = newton_polish(bank, run(bank, [0.0]).final_state)
    rep = equilibrium_sensitivity(bank, x_star)
    vi = bank.vis[0]
    a, b = 0.5, 1.0
    # x* = N / D with N = -b e0' M^-1 f, D = 1 - a + b e0' M^-1 F_x
    Minv = np.linalg.inv(vi.M)
    N = -b * (Minv @ vi.f)[0]
    D = 1 - a + b * (Minv @ vi.F_x)[0, 0]
    assert x_star[0] == pytest.approx(N / D, rel=1e-12)
    for k, (Mk, fk, Fk) in enumerate(vi.theta_blocks):
        dMinv = -Minv @ Mk @ Minv
        dN = -b * (dMinv @ vi.f + Minv @ fk)[0]
        dD = b * (dMinv @ vi.F_x + Minv @ Fk)[0, 0]
        expect = (dN * D - N * dD) / D ** 2
        assert rep.dx_dtheta[0, k] == pytest.approx(expect, rel=1e-10)


def test_theta_free_game_has_zero_equilibrium_sensitivity(example1):
    bank = example1.bank()
    x = run(bank, [1.0, 1.0]).final_state
    rep = equilibrium_sensitivity(bank, x)
    assert rep.dx_dtheta.shape == (2, 0)


def test_chain_consistency_and_block_sparsity(example3):
    bank = example3.bank_at(0.4)
    x, _, _ = newton_polish(bank, run(bank, [1.0, 1.0]).final_state)
    rep = equilibrium_sensitivity(bank, x)
    T, Xi = rep.T, rep.Xi
    resid = rep.dx_dtheta - T @ Xi @ (rep.grad_x_ubar @ rep.dx_dtheta + rep.grad_theta_ubar)
    assert np.max(np.abs(resid)) <= 1e-10
    n0 = bank.vis[0].M.shape[0]
    # agent 0 has no parameters, agent 1's columns vanish in agent 0's rows
    assert rep.param_slices[0] == slice(0, 0)
    assert np.all(rep.grad_theta_ubar[:n0] == 0)


def test_example3_sensitivity_matches_finite_differences(example3):
    x0 = example3.initial_states[0]
    tangent = example3.sweep_tangent()
    h = 1e-5
    for s in (0.3, 0.8):
        row = sweep_point(example3.bank_at(s), s, x0, tangent)
        assert row.status == "ok"
        xs = []
        for v in (s - h, s + h):
            b = example3.bank_at(v)
            xs.append(newton_polish(b, run(b, x0).final_state)[0])
        fd = (xs[1] - xs[0]) / (2 * h)
        assert np.max(np.abs(fd - row.dx_dtheta)) <= 1e-4 * np.max(np.abs(row.dx_dtheta))


def test_weakly_active_constraint_refused():
    # unconstrained optimum of u_0 sits exactly on the upper bound
    bank = scalar_bank(A=0.5, q=-2.0, Qx=0.0, r=1.0, K=2)
    x = run(bank, [0.0]).final_state
    assert x[0] == pytest.approx(2.0)
    with pytest.raises(RegularityError) as info:
        local_derivatives(bank, x)
    assert info.value.kind == "strict_complementarity" and info.value.index == 2
    assert info.value.agent == 0


def test_rank_deficient_active_rows_refused():
    extra = (np.array([[1.0, 0.0]]), np.array([1.0]))  # repeats the upper bound on u_0
    bank = scalar_bank(A=0.5, q=-4.0, Qx=0.0, r=1.0, K=2, extra=extra)
    x = run(bank, [0.0]).final_state
    with pytest.raises(RegularityError) as info:
        local_derivatives(bank, x)
    assert info.value.kind == "licq"


def test_newton_polish_improves_residual(example3):
    bank = example3.bank_at(0.5)
    log = run(bank, [1.0, 1.0], conv_tol=1e-6)
    x, res, steps = newton_polish(bank, log.final_state)
    assert res <= 1e-14 * (1 + np.linalg.norm(x))


def test_sweep_orders_and_flags_points(example3):
    rows = theta_sweep(example3.bank_at, [0.5, 0.0, 1.0], [1.0, 1.0], example3.sweep_tangent())
    assert [r.theta for r in rows] == [0.0, 0.5, 1.0]
    assert all(r.status == "ok" for r in rows)
    bad = theta_sweep(example3.bank_at, [0.5], [1.0, 1.0], example3.sweep_tangent(), max_steps=2)
    assert bad[0].status == "nonconvergent"


def test_constant_in_theta_sweep():
    g = StageCost([[1.0]], [-1.0], [[1.0]], (1,))
    dyn = Dynamics([[0.5]], [[[1.0]]])
    Z = Polytope.from_box(-10 * np.ones(2), 10 * np.ones(2))

    def factory(s):
        conj = ConjectureSet(0, (ParamCostBasis((g, g), [s, 1 - s]),), 2)
        return ControllerBank(dyn, [conj], Z)

    rows = theta_sweep(factory, [0.0, 0.5, 1.0], [0.0], np.array([1.0, -1.0]))
    xs = np.array([r.x_star for r in rows])
    np.testing.assert_allclose(xs, np.broadcast_to(xs[0], xs.shape), atol=1e-12)
    np.testing.assert_allclose([r.dx_dtheta for r in rows], 0.0, atol=1e-12)
