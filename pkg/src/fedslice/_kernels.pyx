# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled local prox kernel; mirrors ``_kernels_py`` step for step."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, fabs, NAN, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF OK = 0
DEF INFEASIBLE = 1
DEF MAXITER = 2


cdef struct Cell:
    int N
    double *cb
    double cq
    double *lam
    double *sla
    double *a
    double budget
    double *lb
    double *mu_lo
    double rho
    double *c


cdef bint _slacks_ok(Cell *P, double *x) nogil:
    cdef int n, N = P.N
    cdef double s4 = P.budget, b, m, u
    for n in range(N):
        s4 -= P.a[n] * x[n]
    if not s4 > 0:
        return False
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - P.lam[n]
        if not (b - P.lb[n] > 0 and m - P.mu_lo[n] > 0 and u > 0):
            return False
        if not P.sla[n] - P.cb[n] / b - P.cq / u > 0:
            return False
    return True


cdef double _merit(Cell *P, double *x, double t) nogil:
    cdef int n, N = P.N
    cdef double s4 = P.budget, val = 0.0, logs = 0.0
    cdef double b, m, u, p, q, db, dm
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - P.lam[n]
        p = P.cb[n] / b
        q = P.cq / u
        s4 -= P.a[n] * b
        db = b - P.c[n]
        dm = m - P.c[N + n]
        val += p + q + 0.5 * P.rho * (db * db + dm * dm)
        logs += log(b - P.lb[n]) + log(m - P.mu_lo[n]) + log(P.sla[n] - p - q)
    logs += log(s4)
    return val - t * logs


cdef double _grad(Cell *P, double *x, double t, double *g) nogil:
    cdef int n, N = P.N
    cdef double s4 = P.budget, b, m, u, pb, qu, s3
    for n in range(N):
        s4 -= P.a[n] * x[n]
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - P.lam[n]
        pb = P.cb[n] / (b * b)
        qu = P.cq / (u * u)
        s3 = P.sla[n] - P.cb[n] / b - P.cq / u
        g[n] = -pb + P.rho * (b - P.c[n]) - t / (b - P.lb[n]) - t * pb / s3 + t * P.a[n] / s4
        g[N + n] = -qu + P.rho * (m - P.c[N + n]) - t / (m - P.mu_lo[n]) - t * qu / s3
    return s4


cdef double _newton_step(Cell *P, double *x, double t, double *g, double *dx,
                         double *work) nogil:
    cdef int n, N = P.N
    cdef double s4 = _grad(P, x, t, g)
    cdef double w = t / (s4 * s4)
    cdef double ey = 0.0, ez = 0.0
    cdef double *yb = work
    cdef double *ym = work + N
    cdef double *zb = work + 2 * N
    cdef double *zm = work + 3 * N
    cdef double b, m, u, pb, qu, pbb, quu, s1, s2, s3, k3, d1, d2
    cdef double hbb, hmm, hbm, det, rb, rm, coef, lam2
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - P.lam[n]
        pb = P.cb[n] / (b * b)
        qu = P.cq / (u * u)
        pbb = 2.0 * P.cb[n] / (b * b * b)
        quu = 2.0 * P.cq / (u * u * u)
        s1 = b - P.lb[n]
        s2 = m - P.mu_lo[n]
        s3 = P.sla[n] - P.cb[n] / b - P.cq / u
        k3 = t / (s3 * s3)
        d1 = pbb + P.rho + t / (s1 * s1) + t * pbb / s3
        d2 = quu + P.rho + t / (s2 * s2) + t * quu / s3
        hbb = d1 + k3 * pb * pb
        hmm = d2 + k3 * qu * qu
        hbm = k3 * pb * qu
        det = d1 * d2 + k3 * (d1 * qu * qu + d2 * pb * pb)
        rb = -g[n]
        rm = -g[N + n]
        yb[n] = (hmm * rb - hbm * rm) / det
        ym[n] = (hbb * rm - hbm * rb) / det
        zb[n] = hmm * P.a[n] / det
        zm[n] = -hbm * P.a[n] / det
        ey += P.a[n] * yb[n]
        ez += P.a[n] * zb[n]
    coef = w * ey / (1.0 + w * ez)
    lam2 = 0.0
    for n in range(N):
        dx[n] = yb[n] - coef * zb[n]
        dx[N + n] = ym[n] - coef * zm[n]
        lam2 -= g[n] * dx[n] + g[N + n] * dx[N + n]
    return lam2


cdef int _start(Cell *P, double *x) nogil:
    cdef int n, N = P.N
    cdef double used = 0.0, left, need, b, room, u
    for n in range(N):
        need = P.cb[n] / P.sla[n]
        if P.lb[n] > need:
            need = P.lb[n]
        x[n] = need
        used += P.a[n] * need
    left = P.budget - used
    if not left > 0:
        return INFEASIBLE
    for n in range(N):
        b = x[n] + 0.5 * left / (N * P.a[n])
        room = P.sla[n] - P.cb[n] / b
        u = 2.0 * (P.mu_lo[n] - P.lam[n])
        if 2.0 * P.cq / room > u:
            u = 2.0 * P.cq / room
        x[n] = b
        x[N + n] = P.lam[n] + u
    return OK


cdef int _solve(Cell *P, double *x, double t0, double t_final, double shrink,
                double tol, int max_newton, double *kkt_out, int *iters_out) nogil:
    cdef int N = P.N, i, k, ls, iters = 0, status = OK
    cdef double scale = P.rho if P.rho > 1.0 else 1.0
    cdef double t = t0 * scale, t_last = t_final * scale
    cdef double lam2, step, slope, phi
    cdef bint accepted
    cdef double *buf = <double *> malloc(8 * N * sizeof(double))
    cdef double *g = buf
    cdef double *dx = buf + 2 * N
    cdef double *xn = buf + 4 * N
    cdef double *g2 = buf + 6 * N
    cdef double *work = <double *> malloc(4 * N * sizeof(double))

    if _start(P, x) != OK:
        free(buf)
        free(work)
        kkt_out[0] = INFINITY
        iters_out[0] = 0
        return INFEASIBLE

    while True:
        phi = _merit(P, x, t)
        for k in range(100):
            lam2 = _newton_step(P, x, t, g, dx, work)
            iters += 1
            if lam2 <= 1e-20 * scale or iters >= max_newton:
                break
            step = 1.0
            accepted = False
            for ls in range(60):
                for i in range(2 * N):
                    xn[i] = x[i] + step * dx[i]
                if _slacks_ok(P, xn):
                    _grad(P, xn, t, g2)
                    slope = 0.0
                    for i in range(2 * N):
                        slope += g2[i] * dx[i]
                    if slope <= 0.0:
                        accepted = True
                        break
                    if _merit(P, xn, t) <= phi - 0.25 * step * lam2:
                        accepted = True
                        break
                step *= 0.5
            if not accepted:
                break
            for i in range(2 * N):
                x[i] = xn[i]
            phi = _merit(P, x, t)
        if iters >= max_newton:
            status = MAXITER
            break
        if t <= t_last * (1.0 + 1e-12):
            break
        t = t * shrink
        if t < t_last:
            t = t_last

    lam2 = _newton_step(P, x, t, g, dx, work)
    if lam2 < 0.0:
        lam2 = 0.0
    kkt_out[0] = sqrt(lam2 / scale)
    if t / scale > kkt_out[0]:
        kkt_out[0] = t / scale
    if status == OK and kkt_out[0] > tol:
        status = MAXITER
    iters_out[0] = iters
    free(buf)
    free(work)
    return status


def solve_local(cb, double cq, lam, sla, a, double budget, lb, mu_lo, double rho, center,
                double t0=1.0, double t_final=1e-9, double shrink=0.1, double tol=1e-8,
                int max_newton=1000, record=None):
    """Compiled counterpart of :func:`fedslice._kernels_py.solve_local` (``record`` unsupported)."""
    if record is not None:
        raise ValueError("merit recording is only available in the pure-Python kernel")
    cdef double[::1] cb_v = np.ascontiguousarray(cb, dtype=np.float64)
    cdef double[::1] lam_v = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double[::1] sla_v = np.ascontiguousarray(sla, dtype=np.float64)
    cdef double[::1] a_v = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] lb_v = np.ascontiguousarray(lb, dtype=np.float64)
    cdef double[::1] mu_v = np.ascontiguousarray(mu_lo, dtype=np.float64)
    cdef double[::1] c_v = np.ascontiguousarray(center, dtype=np.float64)
    cdef int N = cb_v.shape[0]
    out = np.empty(2 * N, dtype=np.float64)
    cdef double[::1] x_v = out
    cdef Cell P
    cdef double kkt
    cdef int iters, status
    P.N = N
    P.cb = &cb_v[0]
    P.cq = cq
    P.lam = &lam_v[0]
    P.sla = &sla_v[0]
    P.a = &a_v[0]
    P.budget = budget
    P.lb = &lb_v[0]
    P.mu_lo = &mu_v[0]
    P.rho = rho
    P.c = &c_v[0]
    with nogil:
        status = _solve(&P, &x_v[0], t0, t_final, shrink, tol, max_newton, &kkt, &iters)
    if status == INFEASIBLE:
        out[:] = NAN
    return out, kkt, iters, status
