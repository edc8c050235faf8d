# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the forward-backward VI iteration.

``project`` is a Goldfarb-Idnani dual active-set projection onto a polytope
(identity Hessian), ``fb_iterate`` the projected forward-backward loop that
calls it. Signatures and return values match ``mpglab._core_py``.
"""

import numpy as np
from libc.math cimport sqrt, fabs, INFINITY

cdef double _DEP_TOL = 1e-11
cdef double _RATIO_TOL = 1e-14

cdef enum:
    _OK = 0
    _INFEASIBLE = 1
    _STALLED = 2
    _MAX_ITER = 3

OK = _OK
INFEASIBLE = _INFEASIBLE
STALLED = _STALLED
MAX_ITER = _MAX_ITER


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


cdef struct Work:
    Py_ssize_t n
    Py_ssize_t p
    Py_ssize_t r
    const double* C
    const double* d
    const double* H
    const double* h
    double* Qt      # n x n, rows are basis vectors
    double* R       # n x n, upper triangular, R[i*n + j]
    double* lam     # n
    Py_ssize_t* act # n
    double* qa      # n
    double* z       # n
    double* rr      # n
    double* c       # n
    unsigned char* in_active  # p
    Py_ssize_t q
    Py_ssize_t nact


cdef inline const double* _normal(Work* w, Py_ssize_t idx) noexcept nogil:
    if idx < w.p:
        return w.C + idx * w.n
    return w.H + (idx - w.p) * w.n


cdef void _decompose(Work* w, const double* a) noexcept nogil:
    cdef Py_ssize_t i, k, n = w.n, q = w.q
    cdef double s
    for i in range(n):
        w.z[i] = a[i]
    for k in range(q):
        s = _dot(w.Qt + k * n, a, n)
        w.qa[k] = s
        for i in range(n):
            w.z[i] -= s * w.Qt[k * n + i]
    # second Gram-Schmidt pass
    for k in range(q):
        s = _dot(w.Qt + k * n, w.z, n)
        w.qa[k] += s
        for i in range(n):
            w.z[i] -= s * w.Qt[k * n + i]
    for i in range(q - 1, -1, -1):
        s = w.qa[i]
        for k in range(i + 1, q):
            s -= w.R[i * n + k] * w.rr[k]
        w.rr[i] = s / w.R[i * n + i]


cdef void _append(Work* w) noexcept nogil:
    cdef Py_ssize_t i, n = w.n, q = w.q
    cdef double nz = sqrt(_dot(w.z, w.z, n))
    for i in range(n):
        w.Qt[q * n + i] = w.z[i] / nz
    for i in range(q):
        w.R[i * n + q] = w.qa[i]
    w.R[q * n + q] = nz
    w.q = q + 1


cdef void _rebuild(Work* w) noexcept nogil:
    cdef Py_ssize_t k
    w.q = 0
    for k in range(w.nact):
        _decompose(w, _normal(w, w.act[k]))
        _append(w)


cdef int _project_gi(Work* w, const double* u, double* y, double feas_tol) noexcept nogil:
    cdef Py_ssize_t n = w.n, p = w.p, i, j, k, k_p, k_drop, steps = 0
    cdef Py_ssize_t max_steps = 5 * (p + w.r) + 20
    cdef const double* a
    cdef double s, zz, t, t1, t2, ratio, s_p, lam_p, aa

    for i in range(n):
        y[i] = u[i]
    w.q = 0
    w.nact = 0
    for i in range(p):
        w.in_active[i] = 0

    for j in range(w.r):
        a = w.H + j * n
        s = _dot(a, y, n) - w.h[j]
        _decompose(w, a)
        zz = _dot(w.z, w.z, n)
        aa = _dot(a, a, n)
        if zz <= _DEP_TOL * _DEP_TOL * aa:
            if fabs(s) > feas_tol * (1.0 + fabs(w.h[j])):
                return _INFEASIBLE
            continue
        t = s / zz
        for i in range(n):
            y[i] -= t * w.z[i]
        for k in range(w.nact):
            w.lam[k] -= t * w.rr[k]
        w.act[w.nact] = p + j
        w.lam[w.nact] = t
        w.nact += 1
        _append(w)

    if p == 0:
        return _OK
    while True:
        k_p = -1
        s_p = -INFINITY
        for i in range(p):
            if w.in_active[i]:
                continue
            s = _dot(w.C + i * n, y, n) - w.d[i]
            if s > s_p:
                s_p = s
                k_p = i
        if k_p < 0 or s_p <= feas_tol * (1.0 + fabs(w.d[k_p])):
            return _OK
        a = w.C + k_p * n
        aa = _dot(a, a, n)
        lam_p = 0.0
        while True:
            steps += 1
            if steps > max_steps:
                return _STALLED
            _decompose(w, a)
            zz = _dot(w.z, w.z, n)
            if zz > _DEP_TOL * _DEP_TOL * aa:
                t1 = s_p / zz
            else:
                t1 = INFINITY
            t2 = INFINITY
            k_drop = -1
            for k in range(w.nact):
                if w.act[k] < p and w.rr[k] > _RATIO_TOL:
                    ratio = w.lam[k] / w.rr[k]
                    if ratio < t2:
                        t2 = ratio
                        k_drop = k
            if t1 == INFINITY and t2 == INFINITY:
                return _INFEASIBLE
            if t1 <= t2:
                for i in range(n):
                    y[i] -= t1 * w.z[i]
                for k in range(w.nact):
                    w.lam[k] -= t1 * w.rr[k]
                w.act[w.nact] = k_p
                w.lam[w.nact] = lam_p + t1
                w.nact += 1
                w.in_active[k_p] = 1
                _append(w)
                break
            for i in range(n):
                y[i] -= t2 * w.z[i]
            for k in range(w.nact):
                w.lam[k] -= t2 * w.rr[k]
            lam_p += t2
            w.in_active[w.act[k_drop]] = 0
            for k in range(k_drop, w.nact - 1):
                w.act[k] = w.act[k + 1]
                w.lam[k] = w.lam[k + 1]
            w.nact -= 1
            _rebuild(w)
            s_p = _dot(a, y, n) - w.d[k_p]


cdef Py_ssize_t _clamp(const double* v, const double* lo, const double* hi,
                       double* y, Py_ssize_t* act, double* lam, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, nact = 0
    for i in range(n):
        if v[i] < lo[i]:
            y[i] = lo[i]
            act[nact] = i
            lam[nact] = lo[i] - v[i]
            nact += 1
        elif v[i] > hi[i]:
            y[i] = hi[i]
            act[nact] = n + i
            lam[nact] = v[i] - hi[i]
            nact += 1
        else:
            y[i] = v[i]
    return nact


cdef class _Buffers:
    cdef public object Qt, R, lam, act, qa, z, rr, c, in_active, box_act

    def __init__(self, Py_ssize_t n, Py_ssize_t p):
        self.Qt = np.zeros((n, n))
        self.R = np.zeros((n, n))
        self.lam = np.zeros(max(n, 1))
        self.act = np.zeros(max(n, 1), dtype=np.intp)
        self.qa = np.zeros(max(n, 1))
        self.z = np.zeros(max(n, 1))
        self.rr = np.zeros(max(n, 1))
        self.c = np.zeros(max(n, 1))
        self.in_active = np.zeros(max(p, 1), dtype=np.uint8)


cdef void _bind(Work* w, _Buffers buf, const double[:, ::1] C, const double[::1] d,
                const double[:, ::1] H, const double[::1] h):
    cdef double[:, ::1] Qt = buf.Qt
    cdef double[:, ::1] R = buf.R
    cdef double[::1] lam = buf.lam
    cdef Py_ssize_t[::1] act = buf.act
    cdef double[::1] qa = buf.qa
    cdef double[::1] z = buf.z
    cdef double[::1] rr = buf.rr
    cdef double[::1] c = buf.c
    cdef unsigned char[::1] ina = buf.in_active
    w.n = C.shape[1]
    w.p = C.shape[0]
    w.r = H.shape[0]
    w.C = &C[0, 0] if w.p > 0 else NULL
    w.d = &d[0] if w.p > 0 else NULL
    w.H = &H[0, 0] if w.r > 0 else NULL
    w.h = &h[0] if w.r > 0 else NULL
    w.Qt = &Qt[0, 0]
    w.R = &R[0, 0]
    w.lam = &lam[0]
    w.act = &act[0]
    w.qa = &qa[0]
    w.z = &z[0]
    w.rr = &rr[0]
    w.c = &c[0]
    w.in_active = &ina[0]
    w.q = 0
    w.nact = 0


def project(const double[:, ::1] C, const double[::1] d, const double[:, ::1] H,
            const double[::1] h, const double[::1] lo, const double[::1] hi,
            bint box_only, u, double feas_tol=1e-12):
    """Euclidean projection onto ``{y | C y <= d, H y = h}``.

    Returns ``(y, active, lam, status)``.
    """
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0]
    cdef Py_ssize_t nact
    cdef int status = _OK
    y_arr = np.empty(n)
    cdef double[::1] y = y_arr
    cdef Work w
    cdef _Buffers buf
    cdef Py_ssize_t[::1] act_view
    cdef double[::1] lam_view
    if box_only:
        act_arr = np.empty(max(n, 1), dtype=np.intp)
        lam_arr = np.empty(max(n, 1))
        act_view = act_arr
        lam_view = lam_arr
        with nogil:
            nact = _clamp(&uv[0], &lo[0], &hi[0], &y[0], &act_view[0], &lam_view[0], n)
        return y_arr, act_arr[:nact].copy(), lam_arr[:nact].copy(), _OK
    buf = _Buffers(n, C.shape[0])
    _bind(&w, buf, C, d, H, h)
    with nogil:
        status = _project_gi(&w, &uv[0], &y[0], feas_tol)
    return (y_arr, np.asarray(buf.act)[:w.nact].copy(),
            np.asarray(buf.lam)[:w.nact].copy(), status)


def fb_iterate(const double[:, ::1] M, const double[::1] b, const double[:, ::1] C,
               const double[::1] d, const double[:, ::1] H, const double[::1] h,
               const double[::1] lo, const double[::1] hi, bint box_only, u,
               double gamma, double tol, Py_ssize_t max_iter, double feas_tol=1e-12):
    """Run projected forward-backward steps ``u <- P(u - gamma (M u + b))``.

    Returns ``(u, iterations, step_residual, status, active)``.
    """
    u_arr = np.array(u, dtype=np.float64)
    cdef double[::1] uv = u_arr
    cdef Py_ssize_t n = uv.shape[0]
    cdef Py_ssize_t i, j, it = 0, nact = 0
    cdef double s, diff = INFINITY
    cdef double scale = 1.0 / gamma if gamma < 1.0 else 1.0
    cdef int status = _MAX_ITER
    cdef double[::1] wv = np.empty(n)
    cdef double[::1] yv = np.empty(n)
    cdef Work w
    cdef _Buffers buf = _Buffers(n, C.shape[0])
    box_act = np.empty(max(n, 1), dtype=np.intp)
    box_lam = np.empty(max(n, 1))
    cdef Py_ssize_t[::1] bact = box_act
    cdef double[::1] blam = box_lam
    _bind(&w, buf, C, d, H, h)

    with nogil:
        while it < max_iter:
            for i in range(n):
                s = b[i]
                for j in range(n):
                    s += M[i, j] * uv[j]
                wv[i] = uv[i] - gamma * s
            if box_only:
                nact = _clamp(&wv[0], &lo[0], &hi[0], &yv[0], &bact[0], &blam[0], n)
                status = _OK
            else:
                status = _project_gi(&w, &wv[0], &yv[0], feas_tol)
                nact = w.nact
            it += 1
            if status != _OK:
                break
            s = 0.0
            for i in range(n):
                s += (yv[i] - uv[i]) * (yv[i] - uv[i])
                uv[i] = yv[i]
            diff = sqrt(s)
            if diff * scale <= tol:
                status = _OK
                break
            status = _MAX_ITER
    if box_only:
        active = box_act[:nact].copy()
    else:
        active = np.asarray(buf.act)[:nact].copy()
    return u_arr, it, diff, status, active
