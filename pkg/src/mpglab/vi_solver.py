"""Affine variational inequality solver (projected forward-backward).

Solves ``VI(Z, F)`` with ``F(u) = M u + b`` strongly monotone. The fixed-step
iteration ``u <- P_Z(u - gamma F(u))`` with ``gamma = rho / L**2`` runs in the
kernel backend; every ``polish_every`` steps the active set of the last
projection is used to solve the KKT equalities directly, and the candidate is
accepted only if it meets the natural-residual tolerance.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from mpglab import _backend
from mpglab.errors import SolverError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200_000


@dataclass
class VgneSolution:
    u_star: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    residual: float
    iterations: int
    active_set: np.ndarray
    licq: bool = True
    stationarity: float = 0.0
    polished: bool = False


def monotonicity_constant(M):
    """Smallest eigenvalue of the symmetric part of ``M``."""
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def natural_residual(avi, u, x, kernels=None):
    """``||u - P_Z(u - F(u; x))||``."""
    F = avi.pseudo_gradient(u, x)
    return float(np.linalg.norm(u - avi.feasible_set.project(u - F, kernels)))


def activity_threshold(feas):
    dmax = float(np.max(np.abs(feas.d))) if feas.n_ineq else 0.0
    return 1e-8 * (1.0 + dmax)


def recover_multipliers(u_star, avi, x, threshold=None):
    """Least-squares multipliers on the active rows.

    Returns ``(nu, mu, licq, stationarity_residual)``. Rank-deficient active
    rows set ``licq`` to False; the multipliers are then one nonnegative
    solution among many.
    """
    feas = avi.feasible_set
    F = avi.pseudo_gradient(u_star, x)
    thr = activity_threshold(feas) if threshold is None else threshold
    p, r = feas.n_ineq, feas.n_eq
    slack = feas.C @ u_star - feas.d if p else np.zeros(0)
    act = np.flatnonzero(np.abs(slack) <= thr)
    G = np.vstack([feas.C[act], feas.H]).T if (act.size or r) else np.zeros((F.shape[0], 0))
    nu = np.zeros(p)
    mu = np.zeros(r)
    licq = True
    if G.shape[1]:
        sv = np.linalg.svd(G, compute_uv=False)
        licq = bool(sv[-1] > 1e-9 * max(sv[0], 1.0)) and G.shape[1] <= G.shape[0]
        sol = np.linalg.lstsq(G, -F, rcond=None)[0]
        nu_a = sol[:act.size]
        if not licq or np.any(nu_a < -1e-10 * (1.0 + np.max(np.abs(sol), initial=0.0))):
            # nonnegative fit with free equality multipliers (mu = mu+ - mu-)
            Gs = np.hstack([feas.C[act].T, feas.H.T, -feas.H.T])
            sol2 = nnls(Gs, -F)[0]
            nu_a = sol2[:act.size]
            mu = sol2[act.size:act.size + r] - sol2[act.size + r:]
        else:
            mu = sol[act.size:]
        nu[act] = np.maximum(nu_a, 0.0)
    stat = float(np.linalg.norm(F + feas.C.T @ nu + feas.H.T @ mu))
    return nu, mu, licq, stat


def _polish(avi, b, active):
    feas = avi.feasible_set
    n = avi.M.shape[0]
    p = feas.n_ineq
    ineq = np.sort(active[active < p])
    A = np.vstack([feas.C[ineq], feas.H])
    rhs_c = np.concatenate([feas.d[ineq], feas.h])
    k = A.shape[0]
    KKT = np.zeros((n + k, n + k))
    KKT[:n, :n] = avi.M
    KKT[:n, n:] = A.T
    KKT[n:, :n] = A
    rhs = np.concatenate([-b, rhs_c])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
    u = sol[:n]
    lam = sol[n:n + ineq.size]
    if ineq.size and np.min(lam) < -1e-10 * (1.0 + np.max(np.abs(lam))):
        return None
    if feas.violation(u) > 1e-11 * (1.0 + (np.max(np.abs(feas.d)) if p else 0.0)):
        return None
    return u


def solve(avi, x, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, u0=None, polish=True,
          polish_every=10, kernels=None, record=None):
    """Solve the VI at state ``x`` and return a :class:`VgneSolution`.

    ``record``, if a list, receives every forward-backward iterate (one
    kernel call per step; meant for diagnostics).
    """
    k = kernels or _backend.kernels
    feas = avi.feasible_set
    x = np.asarray(x, dtype=float)
    b = np.ascontiguousarray(avi.offset(x))
    M = np.ascontiguousarray(avi.M)
    L = avi.lipschitz
    gamma = avi.rho / (L * L)
    scale = max(1.0, 1.0 / gamma)
    args = feas.kernel_args()
    u = feas.project(feas.center if u0 is None else u0, k)
    total = 0
    polished = False
    if record is not None:
        record.append(u.copy())
    while total < max_iter:
        if record is not None:
            chunk = 1
        else:
            chunk = polish_every if polish else max_iter - total
        chunk = min(chunk, max_iter - total)
        u, it, step_res, status, active = k.fb_iterate(M, b, *args, u, gamma, tol, chunk)
        total += it
        if record is not None:
            record.append(u.copy())
        if status in (1, 2):
            raise SolverError("projection failed inside the forward-backward loop")
        if polish and (record is None or status == 0):
            cand = _polish(avi, b, active)
            if cand is not None and natural_residual(avi, cand, x, k) <= tol:
                u = cand
                polished = True
                break
        if status == 0:
            break
    res = natural_residual(avi, u, x, k)
    if res > tol:
        if total < max_iter:
            # the step-residual bound was met but rounding left the natural
            # residual just above tol: continue plain iterations
            u, it, _, _, _ = k.fb_iterate(M, b, *args, u, gamma, tol / scale, max_iter - total)
            total += it
            res = natural_residual(avi, u, x, k)
        if res > tol:
            raise SolverError(f"VI solve stopped after {total} iterations with natural "
                              f"residual {res:.3e} > {tol:.1e}", residual=res)
    nu, mu, licq, stat = recover_multipliers(u, avi, x)
    thr = activity_threshold(feas)
    if feas.n_ineq:
        active_set = np.flatnonzero(np.abs(feas.C @ u - feas.d) <= thr)
    else:
        active_set = np.zeros(0, int)
    return VgneSolution(u, nu, mu, res, total, active_set, licq, stat, polished)
