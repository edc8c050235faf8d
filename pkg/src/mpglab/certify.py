"""Dissipativity-based stability certificate for heterogeneous MPG closed loops.

For each agent ``j`` the prediction map ``x -> u^(j)`` satisfies the
incremental inequality ``-du' F_x dx - rho_j |du|^2 >= 0``. Adding these with a
multiplier ``lambda`` to the decrease of ``V(x) = dx' P dx`` gives the matrix
inequality ``Phi(P) + lambda W <= -eps I`` over ``(dx, du_1, ..., du_n)``, where

    Phi(P) = G' P G - E' P E,   G = [A, B_hat],   E = [I, 0].
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from mpglab.errors import DimensionError
from mpglab.mpg import selection_matrix

DELTA_P = 1e-6
DELTA_LAMBDA = 1e-8
EPS_TARGET = 1e-6
MAX_ITER = 50_000
SLACK = 1e-7
VERIFY_TOL = 1e-9


@dataclass(frozen=True)
class CertificateProblem:
    """Data of the certificate LMI.

    ``convention="full"`` works on stacked full-horizon predictions;
    ``"reduced"`` keeps only each agent's own first action (a heuristic
    variant without the incremental guarantee, kept for comparison).
    """

    A: np.ndarray
    B_hat: np.ndarray
    W: np.ndarray
    rho_list: tuple
    F_x_list: tuple
    block_sizes: tuple
    convention: str = "full"

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def dim(self):
        return self.W.shape[0]

    @property
    def G(self):
        return np.hstack([self.A, self.B_hat])

    @property
    def E(self):
        return np.hstack([np.eye(self.n_x), np.zeros((self.n_x, self.B_hat.shape[1]))])


def assemble_W(F_x_list, rho_list):
    """Symmetric multiplier matrix over ``(dx, du_1, ..., du_n)``."""
    n_x = F_x_list[0].shape[1]
    sizes = [F.shape[0] for F in F_x_list]
    N = n_x + sum(sizes)
    W = np.zeros((N, N))
    r = n_x
    for F, rho in zip(F_x_list, rho_list):
        k = F.shape[0]
        W[r:r + k, :n_x] = -0.5 * F
        W[:n_x, r:r + k] = -0.5 * F.T
        W[r:r + k, r:r + k] = -rho * np.eye(k)
        r += k
    return W


def build_problem(dyn, bank, convention="full"):
    """Certificate data for a controller bank."""
    if bank.n_agents != dyn.n_agents:
        raise DimensionError(f"bank has {bank.n_agents} agents, dynamics has {dyn.n_agents}")
    K = bank.horizon
    dims = dyn.input_dims
    rho = tuple(float(vi.rho) for vi in bank.vis)
    if convention == "full":
        F_list = tuple(np.array(vi.F_x) for vi in bank.vis)
        B_hat = np.hstack([dyn.B_list[j] @ selection_matrix(dims, K, j)
                           for j in range(dyn.n_agents)])
    elif convention == "reduced":
        F_list = tuple(selection_matrix(dims, K, j) @ vi.F_x for j, vi in enumerate(bank.vis))
        B_hat = np.hstack(dyn.B_list)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    W = assemble_W(F_list, rho)
    sizes = tuple(F.shape[0] for F in F_list)
    return CertificateProblem(np.array(dyn.A), B_hat, W, rho, F_list, sizes, convention)


def lmi_value(problem, P, lam):
    """``[A'PA - P, A'PB; B'PA, B'PB] + lam W``, symmetrized exactly."""
    P = np.asarray(P, dtype=float)
    G = problem.G
    n = problem.n_x
    Mx = G.T @ P @ G
    Mx[:n, :n] -= P
    Mx += lam * problem.W
    return 0.5 * (Mx + Mx.T)


def lmi_adjoint(problem, S):
    """Adjoint of ``(P, lam) -> lmi_value`` applied to a symmetric ``S``."""
    G = problem.G
    n = problem.n_x
    gP = G @ S @ G.T - S[:n, :n]
    return 0.5 * (gP + gP.T), float(np.sum(problem.W * S))


@dataclass
class StabilityCertificate:
    P: np.ndarray
    lam: float
    epsilon: float
    achieved_max_eig: float
    iterations: int = 0
    status: str = "certified"


@dataclass
class InfeasibilityReport:
    status: str  # "infeasible" (likely) or "inconclusive"
    best_max_eig: float
    P: np.ndarray
    lam: float
    iterations: int
    history: list = field(default_factory=list)


@dataclass
class VerificationReport:
    ok: bool
    min_eig_P: float
    max_eig_lmi: float
    messages: list


def _project_P(P, delta):
    """Nearest matrix with eigenvalues >= delta and trace n (Frobenius norm)."""
    n = P.shape[0]
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    # project w onto {v >= delta, sum v = n}: shifted simplex
    target = n - n * delta
    s = np.sort(w - delta)[::-1]
    cs = np.cumsum(s)
    k = np.arange(1, n + 1)
    cond = s - (cs - target) / k > 0
    r = k[cond][-1]
    tau = (cs[r - 1] - target) / r
    v = np.maximum(w - delta - tau, 0.0) + delta
    return (V * v) @ V.T


def _smooth_max(M, mu):
    w, V = np.linalg.eigh(M)
    top = w[-1]
    e = np.exp((w - top) / mu)
    s = e.sum()
    val = top + mu * np.log(s)
    S = (V * (e / s)) @ V.T
    return val, top, S


def _initial_lambda(problem, P):
    grid = 10.0 ** np.arange(-4, 4.5, 0.5)
    vals = [np.linalg.eigvalsh(lmi_value(problem, P, g))[-1] for g in grid]
    return float(grid[int(np.argmin(vals))])


def find_certificate(problem, delta_P=DELTA_P, delta_lambda=DELTA_LAMBDA, eps_target=EPS_TARGET,
                     max_iter=MAX_ITER, slack=SLACK, patience=2000, stall_tol=1e-6):
    """Minimize ``lambda_max(LMI(P, lam))`` with ``trace P = n_x``.

    Smoothed projected gradient: the maximum eigenvalue is replaced by a
    log-sum-exp with temperature ``mu`` that shrinks as progress stalls, with
    Armijo backtracking on every step. The search also stops when the best
    value improves by less than ``stall_tol`` (relative) over ``patience``
    iterations. Returns a :class:`StabilityCertificate`
    once ``lambda_max <= -eps_target`` and independent verification passes,
    otherwise an :class:`InfeasibilityReport`.
    """
    n = problem.n_x
    P = np.eye(n)
    lam = max(_initial_lambda(problem, P), delta_lambda)
    scale = max(1.0, float(np.max(np.abs(lmi_value(problem, P, lam)))))
    mu = 1e-2 * scale
    mu_min = 1e-10 * scale
    t = 1.0 / scale
    best = (np.inf, P, lam)
    checkpoint = np.inf
    history = []
    it = 0
    f, top, S = _smooth_max(lmi_value(problem, P, lam), mu)
    while it < max_iter:
        it += 1
        if top < best[0]:
            best = (top, P.copy(), lam)
        if best[0] <= -eps_target:
            break
        if it % patience == 0:
            # stalled: the best value moved less than stall_tol over a window
            if checkpoint - best[0] <= stall_tol * (abs(best[0]) + eps_target):
                break
            checkpoint = best[0]
        gP, gl = lmi_adjoint(problem, S)
        # Armijo backtracking on the projected step
        accepted = False
        for _ in range(60):
            Pn = _project_P(P - t * gP, delta_P)
            ln = max(lam - t * gl, delta_lambda)
            dP = Pn - P
            dl = ln - lam
            fn, topn, Sn = _smooth_max(lmi_value(problem, Pn, ln), mu)
            pred = np.sum(gP * dP) + gl * dl
            sq = np.sum(dP * dP) + dl * dl
            if fn <= f + pred + sq / (2.0 * t):
                accepted = True
                break
            t *= 0.5
        if not accepted or sq <= (1e-14 * (1.0 + lam)) ** 2:
            if mu <= mu_min:
                break
            mu = max(0.5 * mu, mu_min)
            f, top, S = _smooth_max(lmi_value(problem, P, lam), mu)
            t = max(t, 1e-12)
            continue
        P, lam, f, top, S = Pn, ln, fn, topn, Sn
        # stationary for this temperature: cool down
        if np.sqrt(sq) / t <= mu:
            mu = max(0.5 * mu, mu_min)
            f, top, S = _smooth_max(lmi_value(problem, P, lam), mu)
        t *= 2.0
        if it % 500 == 0:
            history.append((it, float(best[0])))
    if top < best[0]:
        best = (top, P.copy(), lam)
    best_val, P_best, lam_best = best
    if best_val <= -eps_target:
        cert = StabilityCertificate(P_best, float(lam_best), float(-best_val), 0.0, it)
        cert.achieved_max_eig = float(np.linalg.eigvalsh(
            lmi_value(problem, P_best, lam_best) + cert.epsilon * np.eye(problem.dim))[-1])
        if verify_certificate(problem, cert).ok:
            return cert
        # shave the margin slightly so rounding in the re-check cannot flip it
        cert.epsilon = float(-best_val) * (1.0 - 1e-6)
        cert.achieved_max_eig = float(np.linalg.eigvalsh(
            lmi_value(problem, P_best, lam_best) + cert.epsilon * np.eye(problem.dim))[-1])
        if verify_certificate(problem, cert).ok:
            return cert
    status = "infeasible" if best_val > slack else "inconclusive"
    return InfeasibilityReport(status, float(best_val), P_best, float(lam_best), it, history)


def verify_certificate(problem, cert, delta_P=DELTA_P, tol=VERIFY_TOL):
    """Re-check a certificate with a different LAPACK eigensolver."""
    msgs = []
    P = np.asarray(cert.P, dtype=float)
    sym = float(np.max(np.abs(P - P.T)))
    if sym > 1e-12 * max(1.0, float(np.max(np.abs(P)))):
        msgs.append(f"P is not symmetric (asymmetry {sym:.3g})")
    Ps = 0.5 * (P + P.T)
    min_p = float(scipy.linalg.eigvalsh(Ps, driver="ev")[0])
    if min_p < delta_P * (1.0 - 1e-9):
        msgs.append(f"lambda_min(P) = {min_p:.6g} < {delta_P:g}")
    if not cert.lam > 0:
        msgs.append(f"lambda = {cert.lam:.6g} is not positive")
    if not cert.epsilon > 0:
        msgs.append(f"epsilon = {cert.epsilon:.6g} is not positive")
    # second assembly path: explicit blocks
    B = problem.B_hat
    A = problem.A
    top = np.block([[A.T @ Ps @ A - Ps, A.T @ Ps @ B], [B.T @ Ps @ A, B.T @ Ps @ B]])
    L = top + cert.lam * problem.W + cert.epsilon * np.eye(problem.dim)
    L = 0.5 * (L + L.T)
    max_l = float(scipy.linalg.eigvalsh(L, driver="ev")[-1])
    if max_l > tol:
        msgs.append(f"lambda_max(LMI + eps I) = {max_l:.6g} > {tol:g}")
    return VerificationReport(not msgs, min_p, max_l, msgs)


def format_certificate(problem, result):
    """Plain-text report with full-precision numbers."""
    lines = [f"convention: {problem.convention}",
             f"state dimension: {problem.n_x}",
             f"prediction blocks: {list(problem.block_sizes)}",
             "rho: " + ", ".join(repr(float(r)) for r in problem.rho_list)]
    if isinstance(result, StabilityCertificate):
        ver = verify_certificate(problem, result)
        lines += [f"status: {result.status}",
                  f"lambda: {result.lam!r}",
                  f"epsilon: {result.epsilon!r}",
                  f"achieved max eigenvalue: {result.achieved_max_eig!r}",
                  f"iterations: {result.iterations}",
                  f"verified: {ver.ok}",
                  "P:"]
        lines += ["  " + " ".join(repr(float(v)) for v in row) for row in result.P]
    else:
        lines += [f"status: {result.status}",
                  f"best max eigenvalue: {result.best_max_eig!r}",
                  f"lambda: {result.lam!r}",
                  f"iterations: {result.iterations}",
                  "P:"]
        lines += ["  " + " ".join(repr(float(v)) for v in row) for row in result.P]
    return "\n".join(lines) + "\n"
