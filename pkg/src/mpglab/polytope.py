"""Joint feasible set ``Z = {u | C u <= d, H u = h}``."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from mpglab import _backend
from mpglab.errors import DimensionError, ProjectionError


def _as_rows(C, n):
    C = np.zeros((0, n)) if C is None else np.array(C, dtype=float)
    if C.ndim == 1:
        C = C[None, :]
    return np.ascontiguousarray(C)


@dataclass
class CompactnessReport:
    nonempty: bool
    bounded: bool
    lower: np.ndarray = None
    upper: np.ndarray = None
    direction: np.ndarray = None


class Polytope:
    """Polyhedral feasible set with exact Euclidean projection.

    Parameters
    ----------
    C, d : array_like
        Inequality rows ``C u <= d``.
    H, h : array_like, optional
        Equality rows ``H u = h``.
    box_hint : tuple of array_like, optional
        ``(lower, upper)`` when the first ``2 n`` rows of ``C`` are exactly the
        box rows ``-u <= -lower`` followed by ``u <= upper``. With no other
        rows, projection reduces to clamping.
    check : bool
        Probe nonemptiness at construction (Chebyshev-center LP).
    """

    def __init__(self, C, d, H=None, h=None, box_hint=None, check=True):
        C = np.asarray(C, dtype=float)
        n = C.shape[1] if C.ndim == 2 else (np.asarray(H).shape[1] if H is not None else None)
        if n is None:
            raise DimensionError("cannot infer dimension")
        self.C = _as_rows(C, n)
        self.d = np.ascontiguousarray(np.array(d, dtype=float).ravel())
        self.H = _as_rows(H, n)
        h = np.zeros(0) if h is None else np.array(h, dtype=float).ravel()
        self.h = np.ascontiguousarray(h)
        if self.C.shape[0] != self.d.shape[0] or self.H.shape[0] != self.h.shape[0]:
            raise DimensionError("constraint rows and right-hand sides disagree")
        for a in (self.C, self.d, self.H, self.h):
            a.setflags(write=False)
        self.box_hint = None
        self._lo = np.zeros(0)
        self._hi = np.zeros(0)
        box_only = False
        if box_hint is not None:
            lo = np.ascontiguousarray(np.array(box_hint[0], dtype=float))
            hi = np.ascontiguousarray(np.array(box_hint[1], dtype=float))
            if lo.shape != (n,) or hi.shape != (n,):
                raise DimensionError("box bounds must match the dimension")
            if not (np.array_equal(self.C[:n], -np.eye(n))
                    and np.array_equal(self.C[n:2 * n], np.eye(n))
                    and np.array_equal(self.d[:n], -lo) and np.array_equal(self.d[n:2 * n], hi)):
                raise ValueError("box_hint does not match the leading rows of C")
            self.box_hint = (lo, hi)
            self._lo, self._hi = lo, hi
            box_only = self.C.shape[0] == 2 * n and self.H.shape[0] == 0
        self._box_only = box_only
        self.center = None
        if check:
            self.center = self.chebyshev_center()

    @classmethod
    def from_box(cls, lower, upper, C=None, d=None, H=None, h=None, check=True):
        lower = np.array(lower, dtype=float).ravel()
        upper = np.array(upper, dtype=float).ravel()
        n = lower.shape[0]
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        rows = [-np.eye(n), np.eye(n)]
        rhs = [-lower, upper]
        if C is not None and np.size(C):
            rows.append(_as_rows(C, n))
            rhs.append(np.array(d, dtype=float).ravel())
        return cls(np.vstack(rows), np.concatenate(rhs), H, h, box_hint=(lower, upper), check=check)

    @property
    def dim(self):
        return self.C.shape[1]

    @property
    def n_ineq(self):
        return self.C.shape[0]

    @property
    def n_eq(self):
        return self.H.shape[0]

    @property
    def box_only(self):
        return self._box_only

    def kernel_args(self):
        return self.C, self.d, self.H, self.h, self._lo, self._hi, self._box_only

    def project_with_multipliers(self, u, kernels=None):
        """Projection plus the active row ids and their multipliers."""
        k = kernels or _backend.kernels
        u = np.ascontiguousarray(np.asarray(u, dtype=float).ravel())
        if u.shape[0] != self.dim:
            raise DimensionError(f"point has length {u.shape[0]}, expected {self.dim}")
        y, active, lam, status = k.project(*self.kernel_args(), u)
        if status != 0:
            reason = {1: "constraints infeasible or degenerate", 2: "iteration cap reached"}[status]
            raise ProjectionError(f"projection failed: {reason}")
        return y, active, lam

    def project(self, u, kernels=None):
        """``argmin_{y in Z} ||y - u||``."""
        return self.project_with_multipliers(u, kernels)[0]

    def violation(self, u):
        u = np.asarray(u, dtype=float)
        worst = 0.0
        if self.n_ineq:
            worst = max(worst, float(np.max(self.C @ u - self.d)))
        if self.n_eq:
            worst = max(worst, float(np.max(np.abs(self.H @ u - self.h))))
        return worst

    def is_feasible(self, u, tol=1e-10):
        """Return ``(feasible, worst_violation)``."""
        worst = self.violation(u)
        return worst <= tol, worst

    def chebyshev_center(self):
        """Center of the largest inscribed ball (radius capped at 1)."""
        if self._box_only:
            lo, hi = self.box_hint
            return 0.5 * (lo + hi)
        n = self.dim
        norms = np.linalg.norm(self.C, axis=1)
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.C, norms[:, None]]) if self.n_ineq else None
        b_ub = self.d if self.n_ineq else None
        A_eq = np.hstack([self.H, np.zeros((self.n_eq, 1))]) if self.n_eq else None
        b_eq = self.h if self.n_eq else None
        bounds = [(None, None)] * n + [(0.0, 1.0)]
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if res.status != 0:
            raise ValueError("feasible set is empty")
        return res.x[:n]

    def compactness_check(self):
        """Per-coordinate bounds over ``Z``, or a recession direction."""
        n = self.dim
        try:
            self.chebyshev_center()
        except ValueError:
            return CompactnessReport(nonempty=False, bounded=False)
        if self._box_only:
            lo, hi = self.box_hint
            if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
                return CompactnessReport(True, True, lo.copy(), hi.copy())
        kw = dict(A_ub=self.C if self.n_ineq else None, b_ub=self.d if self.n_ineq else None,
                  A_eq=self.H if self.n_eq else None, b_eq=self.h if self.n_eq else None,
                  bounds=[(None, None)] * n, method="highs")
        lower = np.empty(n)
        upper = np.empty(n)
        for i in range(n):
            for sign, out in ((1.0, lower), (-1.0, upper)):
                c = np.zeros(n)
                c[i] = sign
                res = linprog(c, **kw)
                if res.status != 0:
                    return CompactnessReport(True, False, direction=self._recession_direction())
                out[i] = res.x[i]
        return CompactnessReport(True, True, lower, upper)

    def _recession_direction(self):
        n = self.dim
        kw = dict(A_ub=self.C if self.n_ineq else None,
                  b_ub=np.zeros(self.n_ineq) if self.n_ineq else None,
                  A_eq=self.H if self.n_eq else None,
                  b_eq=np.zeros(self.n_eq) if self.n_eq else None,
                  bounds=[(-1.0, 1.0)] * n, method="highs")
        for i in range(n):
            for sign in (1.0, -1.0):
                c = np.zeros(n)
                c[i] = -sign
                res = linprog(c, **kw)
                if res.status == 0 and sign * res.x[i] > 1e-9:
                    return res.x
        return None
