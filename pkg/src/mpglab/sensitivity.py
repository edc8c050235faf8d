"""Parametric sensitivity of predictions and of the closed-loop equilibrium."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mpglab.errors import MpgLabError, RegularityError, SolverError
from mpglab.mpg import compose_action, max_workers, stacked_selection
from mpglab.simulate import equilibrium_residual, run
from mpglab.vi_solver import activity_threshold, solve

LICQ_TOL = 1e-9
STRICT_TOL = 1e-8
COND_MAX = 1e12
KKT_TOL = 1e-8


@dataclass
class KktPoint:
    u: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    x0: np.ndarray
    theta: np.ndarray
    active: np.ndarray
    min_active_nu: float
    min_inactive_slack: float
    licq_sigma: float
    residual: float

    @property
    def p(self):
        return np.concatenate([self.u, self.nu, self.mu])


def kkt_residual(avi, x, u, nu, mu):
    """Stacked KKT map ``[F + C'nu + H'mu; Hu - h; diag(nu)(Cu - d)]``."""
    feas = avi.feasible_set
    F = avi.pseudo_gradient(u, x)
    return np.concatenate([F + feas.C.T @ nu + feas.H.T @ mu,
                           feas.H @ u - feas.h,
                           nu * (feas.C @ u - feas.d)])


def kkt_point(avi, x, sol=None, tol=1e-12, theta=None):
    """Solve (or reuse ``sol``) and package the primal-dual point."""
    x = np.asarray(x, dtype=float)
    if sol is None:
        sol = solve(avi, x, tol=tol)
    feas = avi.feasible_set
    slack = feas.C @ sol.u_star - feas.d
    thr = activity_threshold(feas)
    act = np.flatnonzero(np.abs(slack) <= thr)
    inact = np.setdiff1d(np.arange(feas.n_ineq), act)
    G = np.vstack([feas.C[act], feas.H])
    if G.shape[0]:
        sv = np.linalg.svd(G, compute_uv=False)
        sigma = float(sv[-1] / max(sv[0], 1.0)) if G.shape[0] <= G.shape[1] else 0.0
    else:
        sigma = np.inf
    res = float(np.linalg.norm(kkt_residual(avi, x, sol.u_star, sol.nu, sol.mu)))
    return KktPoint(sol.u_star, sol.nu, sol.mu, x, theta, act,
                    float(np.min(sol.nu[act])) if act.size else np.inf,
                    float(np.min(-slack[inact])) if inact.size else np.inf,
                    sigma, res)


def check_regularity(point, agent=None):
    """Raise :class:`RegularityError` unless LICQ and strict complementarity hold."""
    if point.licq_sigma <= LICQ_TOL:
        raise RegularityError(
            f"active constraint rows are linearly dependent (relative singular value "
            f"{point.licq_sigma:.3g})", kind="licq", agent=agent)
    if point.active.size:
        k = int(np.argmin(point.nu[point.active]))
        if point.nu[point.active[k]] < STRICT_TOL:
            idx = int(point.active[k])
            raise RegularityError(
                f"constraint {idx} is weakly active (multiplier {point.nu[idx]:.3g})",
                kind="strict_complementarity", agent=agent, index=idx)


def kkt_jacobians(point, avi, agent=None):
    """``(dK/dp, dK/dx0, dK/dtheta)`` at a regular KKT point."""
    check_regularity(point, agent)
    feas = avi.feasible_set
    n, p, r = avi.M.shape[0], feas.n_ineq, feas.n_eq
    J = np.zeros((n + r + p, n + p + r))
    J[:n, :n] = avi.M
    J[:n, n:n + p] = feas.C.T
    J[:n, n + p:] = feas.H.T
    J[n:n + r, :n] = feas.H
    J[n + r:, :n] = point.nu[:, None] * feas.C
    J[n + r:, n:n + p] = np.diag(feas.C @ point.u - feas.d)
    Jx = np.zeros((n + r + p, avi.F_x.shape[1]))
    Jx[:n] = avi.F_x
    Jt = np.zeros((n + r + p, avi.n_params))
    Jt[:n] = avi.theta_gradient(point.u, point.x0)
    return J, Jx, Jt


def prediction_sensitivity(point, avi, agent=None):
    """``(du/dx0, du/dtheta, dp/dx0, dp/dtheta)`` from the implicit function theorem."""
    J, Jx, Jt = kkt_jacobians(point, avi, agent)
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise RegularityError(f"KKT Jacobian is ill-conditioned (condition {cond:.3g})",
                              kind="conditioning", agent=agent)
    D = -np.linalg.solve(J, np.hstack([Jx, Jt]))
    n = avi.M.shape[0]
    nx = Jx.shape[1]
    return D[:n, :nx], D[:n, nx:], D[:, :nx], D[:, nx:]


@dataclass
class SensitivityReport:
    du_dx: list
    du_dtheta: list
    grad_x_ubar: np.ndarray
    grad_theta_ubar: np.ndarray
    T: np.ndarray
    Xi: np.ndarray
    dx_dtheta: np.ndarray
    chain_residual: float
    closed_loop_cond: float
    param_slices: list
    points: list = field(default_factory=list)


def closed_loop_gain(A, B):
    n = A.shape[0]
    IA = np.eye(n) - A
    c = np.linalg.cond(IA)
    if not np.isfinite(c) or c > COND_MAX:
        raise RegularityError(f"I - A is singular (condition {c:.3g})", kind="open_loop")
    return np.linalg.solve(IA, B)


def local_derivatives(bank, x, tol=1e-12):
    """Per-agent prediction Jacobians at state ``x``.

    Returns ``(du_dx, du_dtheta, points)`` as per-agent lists.
    """
    du_dx, du_dt, points = [], [], []
    for j, vi in enumerate(bank.vis):
        try:
            sol = solve(vi, x, tol=tol)
        except SolverError as exc:
            exc.agent = j
            raise
        pt = kkt_point(vi, x, sol, theta=bank.conjectures[j].theta)
        gx, gt, _, _ = prediction_sensitivity(pt, vi, agent=j)
        du_dx.append(gx)
        du_dt.append(gt)
        points.append(pt)
    return du_dx, du_dt, points


def equilibrium_sensitivity(bank, x_star, eq_tol=1e-9):
    """Derivative of the closed-loop equilibrium with respect to every agent's theta.

    Columns of ``dx_dtheta`` follow agent order, ``param_slices[j]`` giving the
    slice that belongs to agent ``j``.
    """
    x_star = np.asarray(x_star, dtype=float)
    dyn = bank.dynamics
    res = equilibrium_residual(bank, x_star)
    if res > eq_tol * (1.0 + np.linalg.norm(x_star)):
        raise MpgLabError(f"state is not an equilibrium (residual {res:.3g})")
    du_dx, du_dt, points = local_derivatives(bank, x_star)
    Xi = stacked_selection(dyn.input_dims, bank.horizon)
    gx = np.vstack(du_dx)
    n_par = [g.shape[1] for g in du_dt]
    slices, c = [], 0
    for k in n_par:
        slices.append(slice(c, c + k))
        c += k
    gt = np.zeros((gx.shape[0], c))
    rows = 0
    for j, g in enumerate(du_dt):
        gt[rows:rows + g.shape[0], slices[j]] = g
        rows += g.shape[0]
    T = closed_loop_gain(dyn.A, dyn.B)
    L = np.eye(dyn.n_x) - T @ Xi @ gx
    cond = float(np.linalg.cond(L))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise RegularityError(f"I - T Xi du/dx is singular (condition {cond:.3g})",
                              kind="closed_loop")
    rhs = T @ Xi @ gt
    dx = np.linalg.solve(L, rhs)
    chain = float(np.max(np.abs(dx - T @ Xi @ (gx @ dx + gt)), initial=0.0))
    return SensitivityReport(du_dx, du_dt, gx, gt, T, Xi, dx, chain, cond, slices, points)


def newton_polish(bank, x, tol=1e-14, max_iter=20):
    """Refine an equilibrium by Newton steps on ``x - A x - B kappa(x) = 0``.

    Returns ``(x, residual, steps)``; stops early if a step fails to reduce
    the residual.
    """
    dyn = bank.dynamics
    Xi = stacked_selection(dyn.input_dims, bank.horizon)
    x = np.asarray(x, dtype=float).copy()

    def resid(z):
        u = compose_action(bank, bank.predict(z))
        return z - dyn.A @ z - dyn.B @ u

    r = resid(x)
    steps = 0
    for _ in range(max_iter):
        nr = np.linalg.norm(r)
        if nr <= tol * (1.0 + np.linalg.norm(x)):
            break
        du_dx, _, _ = local_derivatives(bank, x)
        J = np.eye(dyn.n_x) - dyn.A - dyn.B @ Xi @ np.vstack(du_dx)
        xn = x - np.linalg.solve(J, r)
        rn = resid(xn)
        if np.linalg.norm(rn) >= nr:
            break
        x, r = xn, rn
        steps += 1
    return x, float(np.linalg.norm(r)), steps


@dataclass
class SweepRow:
    theta: float
    x_star: np.ndarray
    dx_dtheta: np.ndarray
    status: str  # "ok", "nonconvergent", "irregular"
    message: str = ""
    steps: int = 0
    newton_steps: int = 0
    residual: float = np.nan
    chain_residual: float = np.nan


def sweep_point(bank, s, x0, tangent, max_steps=10_000, conv_tol=1e-10, polish=True):
    """Equilibrium and its derivative along ``tangent`` for one grid value ``s``."""
    nan = np.full(bank.dynamics.n_x, np.nan)
    try:
        log = run(bank, x0, max_steps=max_steps, conv_tol=conv_tol, gap_mode=None)
    except SolverError as exc:
        return SweepRow(s, nan, nan, "nonconvergent", str(exc))
    if log.status != "converged":
        return SweepRow(s, log.final_state, nan, "nonconvergent",
                        f"closed loop ended with status {log.status}", len(log))
    x = log.final_state
    nsteps = 0
    try:
        if polish:
            x, res, nsteps = newton_polish(bank, x)
        else:
            res = equilibrium_residual(bank, x)
        rep = equilibrium_sensitivity(bank, x)
    except RegularityError as exc:
        return SweepRow(s, x, nan, "irregular", str(exc), len(log), nsteps,
                        equilibrium_residual(bank, x))
    except SolverError as exc:
        return SweepRow(s, x, nan, "nonconvergent", str(exc), len(log), nsteps)
    g = rep.dx_dtheta @ np.asarray(tangent, dtype=float)
    return SweepRow(s, x, g, "ok", "", len(log), nsteps, res, rep.chain_residual)


def theta_sweep(bank_factory, grid, x0, tangent, max_steps=10_000, conv_tol=1e-10,
                polish=True, threads=None):
    """Equilibrium manifold along a scalar parameter path.

    ``bank_factory(s)`` builds the controller bank at path value ``s`` and
    ``tangent`` is ``d theta_bar / d s`` (constant along an affine path).
    Rows come back ordered by ``s``; failed points are flagged, not raised.
    """
    grid = sorted(float(s) for s in grid)

    def one(s):
        return sweep_point(bank_factory(s), s, x0, tangent, max_steps, conv_tol, polish)

    workers = min(threads or max_workers(), len(grid)) if grid else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, grid))
    return [one(s) for s in grid]
