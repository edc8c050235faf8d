"""Pure-Python kernels (numpy).

Same algorithms and call signatures as the compiled ``_core`` extension. Used
when the extension is not built or ``MPG_LAB_BACKEND=python`` is set.
"""

import numpy as np

OK = 0
INFEASIBLE = 1
STALLED = 2
MAX_ITER = 3

_DEP_TOL = 1e-11
_RATIO_TOL = 1e-14


def _clamp(w, lo, hi):
    n = w.shape[0]
    y = np.minimum(np.maximum(w, lo), hi)
    lower = np.flatnonzero(w < lo)
    upper = np.flatnonzero(w > hi) + n
    active = np.concatenate([lower, upper]).astype(np.intp)
    lam = np.concatenate([lo[lower] - w[lower], w[upper - n] - hi[upper - n]])
    return y, active, lam


class _Basis:
    """Orthonormal basis of the active normals with its triangular factor."""

    def __init__(self, n):
        self.Qt = np.zeros((n, n))
        self.R = np.zeros((n, n))
        self.q = 0

    def decompose(self, a):
        q = self.q
        Qt = self.Qt[:q]
        qa = Qt @ a
        z = a - Qt.T @ qa
        c = Qt @ z
        z = z - Qt.T @ c
        qa = qa + c
        if q:
            r = _back_substitute(self.R[:q, :q], qa)
        else:
            r = qa
        return qa, z, r

    def append(self, qa, z):
        q = self.q
        nz = np.sqrt(z @ z)
        self.Qt[q] = z / nz
        self.R[:q, q] = qa
        self.R[q, q] = nz
        self.q = q + 1


def _back_substitute(R, b):
    n = b.shape[0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def _rows(C, H, ids, p):
    return [C[i] if i < p else H[i - p] for i in ids]


def _project_gi(C, d, H, h, u, feas_tol):
    p, n = C.shape
    r_eq = H.shape[0]
    y = u.copy()
    basis = _Basis(n)
    act = []
    lam = []

    for j in range(r_eq):
        a = H[j]
        s = a @ y - h[j]
        qa, z, rr = basis.decompose(a)
        zz = z @ z
        if zz <= _DEP_TOL * _DEP_TOL * (a @ a):
            if abs(s) > feas_tol * (1.0 + abs(h[j])):
                return y, act, lam, INFEASIBLE
            continue
        t = s / zz
        y -= t * z
        for k in range(len(act)):
            lam[k] -= t * rr[k]
        act.append(p + j)
        lam.append(t)
        basis.append(qa, z)

    max_steps = 5 * (p + r_eq) + 20
    steps = 0
    in_active = np.zeros(p, dtype=bool)
    while True:
        s_all = C @ y - d
        s_all[in_active] = -np.inf
        if p == 0:
            break
        k_p = int(np.argmax(s_all))
        s_p = s_all[k_p]
        if s_p <= feas_tol * (1.0 + abs(d[k_p])):
            break
        a = C[k_p]
        lam_p = 0.0
        while True:
            steps += 1
            if steps > max_steps:
                return y, act, lam, STALLED
            qa, z, rr = basis.decompose(a)
            zz = z @ z
            t1 = s_p / zz if zz > _DEP_TOL * _DEP_TOL * (a @ a) else np.inf
            t2 = np.inf
            k_drop = -1
            for k, idx in enumerate(act):
                if idx < p and rr[k] > _RATIO_TOL:
                    ratio = lam[k] / rr[k]
                    if ratio < t2:
                        t2 = ratio
                        k_drop = k
            if t1 == np.inf and t2 == np.inf:
                return y, act, lam, INFEASIBLE
            if t1 <= t2:
                y -= t1 * z
                for k in range(len(act)):
                    lam[k] -= t1 * rr[k]
                act.append(k_p)
                lam.append(lam_p + t1)
                in_active[k_p] = True
                basis.append(qa, z)
                break
            y -= t2 * z
            for k in range(len(act)):
                lam[k] -= t2 * rr[k]
            lam_p += t2
            in_active[act[k_drop]] = False
            del act[k_drop]
            del lam[k_drop]
            basis = _Basis(n)
            for row in _rows(C, H, act, p):
                qa_k, z_k, _ = basis.decompose(row)
                basis.append(qa_k, z_k)
            s_p = a @ y - d[k_p]
    return y, act, lam, OK


def project(C, d, H, h, lo, hi, box_only, u, feas_tol=1e-12):
    """Euclidean projection onto ``{y | C y <= d, H y = h}``.

    Returns ``(y, active, lam, status)``; ``active`` holds row ids (equality
    rows offset by ``len(d)``) and ``lam`` the matching multipliers.
    """
    u = np.asarray(u, dtype=float)
    if box_only:
        y, active, lam = _clamp(u, lo, hi)
        return y, active, lam, OK
    y, act, lam, status = _project_gi(C, d, H, h, u, feas_tol)
    return y, np.asarray(act, dtype=np.intp), np.asarray(lam, dtype=float), status


def fb_iterate(M, b, C, d, H, h, lo, hi, box_only, u, gamma, tol, max_iter,
               feas_tol=1e-12):
    """Run projected forward-backward steps ``u <- P(u - gamma (M u + b))``.

    Stops once ``max(1, 1/gamma) * ||u_new - u||`` drops below ``tol`` (a
    bound on the natural residual) or after ``max_iter`` steps.
    Returns ``(u, iterations, step_residual, status, active)``.
    """
    u = np.array(u, dtype=float)
    scale = max(1.0, 1.0 / gamma)
    diff = np.inf
    active = np.zeros(0, dtype=np.intp)
    it = 0
    while it < max_iter:
        w = u - gamma * (M @ u + b)
        y, active, _, status = project(C, d, H, h, lo, hi, box_only, w, feas_tol)
        it += 1
        if status != OK:
            return u, it, diff, status, active
        diff = np.sqrt(np.sum((y - u) ** 2))
        u = y
        if diff * scale <= tol:
            return u, it, diff, OK, active
    return u, it, diff, MAX_ITER, active
