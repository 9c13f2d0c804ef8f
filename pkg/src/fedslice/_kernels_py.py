"""Pure-Python local prox kernel (reference implementation and fallback).

Solves, for one cell with N services and x = [b_1..b_N, mu_1..mu_N],

    min  sum_n cb_n/b_n + cq/(mu_n - lam_n) + rho/2 ||x - c||^2
    s.t. b_n >= lb_n, mu_n >= mu_lo_n,
         cb_n/b_n + cq/(mu_n - lam_n) <= sla_n,
         sum_n a_n b_n <= budget

with a log-barrier path and damped Newton steps.  The Newton system is a
2x2-block-diagonal matrix plus a rank-one budget term, solved by
Sherman-Morrison in O(N).
"""

import math

import numpy as np

OK, INFEASIBLE, MAXITER = 0, 1, 2


def feasible_start(cb, cq, lam, sla, a, budget, lb, mu_lo):
    """Strictly feasible point, or None when the cell's feasible set is empty.

    The mu variables have no upper bound locally, so the set is nonempty iff
    bandwidths meeting both the floor and the comm part of the SLA fit in the
    budget.
    """
    N = len(cb)
    need = [max(lb[n], cb[n] / sla[n]) for n in range(N)]
    used = 0.0
    for n in range(N):
        used += a[n] * need[n]
    left = budget - used
    if not left > 0:
        return None
    x = np.empty(2 * N)
    for n in range(N):
        b = need[n] + 0.5 * left / (N * a[n])
        room = sla[n] - cb[n] / b
        u = max(2.0 * (mu_lo[n] - lam[n]), 2.0 * cq / room)
        x[n] = b
        x[N + n] = lam[n] + u
    return x


def _slacks(x, cb, cq, lam, sla, a, budget, lb, mu_lo, N):
    s4 = budget
    for n in range(N):
        s4 -= a[n] * x[n]
    ok = s4 > 0
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - lam[n]
        if not (b - lb[n] > 0 and m - mu_lo[n] > 0 and u > 0):
            return False, s4
        if not sla[n] - cb[n] / b - cq / u > 0:
            return False, s4
    return ok, s4


def _merit(x, cb, cq, lam, sla, a, budget, lb, mu_lo, rho, c, t, N):
    s4 = budget
    val = 0.0
    logs = 0.0
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - lam[n]
        p = cb[n] / b
        q = cq / u
        s4 -= a[n] * b
        db = b - c[n]
        dm = m - c[N + n]
        val += p + q + 0.5 * rho * (db * db + dm * dm)
        logs += math.log(b - lb[n]) + math.log(m - mu_lo[n]) + math.log(sla[n] - p - q)
    logs += math.log(s4)
    return val - t * logs


def _grad(x, cb, cq, lam, sla, a, budget, lb, mu_lo, rho, c, t, N, g):
    s4 = budget
    for n in range(N):
        s4 -= a[n] * x[n]
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - lam[n]
        pb = cb[n] / (b * b)
        qu = cq / (u * u)
        s3 = sla[n] - cb[n] / b - cq / u
        g[n] = -pb + rho * (b - c[n]) - t / (b - lb[n]) - t * pb / s3 + t * a[n] / s4
        g[N + n] = -qu + rho * (m - c[N + n]) - t / (m - mu_lo[n]) - t * qu / s3
    return s4


def _newton_step(x, cb, cq, lam, sla, a, budget, lb, mu_lo, rho, c, t, N, g, dx):
    """Fill g with the barrier gradient and dx with the Newton direction; return decrement^2."""
    s4 = _grad(x, cb, cq, lam, sla, a, budget, lb, mu_lo, rho, c, t, N, g)
    w = t / (s4 * s4)
    # y = D^-1 (-g), z = D^-1 e  with e = a on the b slots
    ey = 0.0
    ez = 0.0
    yb = [0.0] * N
    ym = [0.0] * N
    zb = [0.0] * N
    zm = [0.0] * N
    for n in range(N):
        b = x[n]
        m = x[N + n]
        u = m - lam[n]
        pb = cb[n] / (b * b)
        qu = cq / (u * u)
        pbb = 2.0 * cb[n] / (b * b * b)
        quu = 2.0 * cq / (u * u * u)
        s1 = b - lb[n]
        s2 = m - mu_lo[n]
        s3 = sla[n] - cb[n] / b - cq / u
        k3 = t / (s3 * s3)
        d1 = pbb + rho + t / (s1 * s1) + t * pbb / s3
        d2 = quu + rho + t / (s2 * s2) + t * quu / s3
        hbb = d1 + k3 * pb * pb
        hmm = d2 + k3 * qu * qu
        hbm = k3 * pb * qu
        # expanded form avoids cancellation when the SLA term dominates
        det = d1 * d2 + k3 * (d1 * qu * qu + d2 * pb * pb)
        rb = -g[n]
        rm = -g[N + n]
        yb[n] = (hmm * rb - hbm * rm) / det
        ym[n] = (hbb * rm - hbm * rb) / det
        zb[n] = hmm * a[n] / det
        zm[n] = -hbm * a[n] / det
        ey += a[n] * yb[n]
        ez += a[n] * zb[n]
    coef = w * ey / (1.0 + w * ez)
    lam2 = 0.0
    for n in range(N):
        dx[n] = yb[n] - coef * zb[n]
        dx[N + n] = ym[n] - coef * zm[n]
        lam2 -= g[n] * dx[n] + g[N + n] * dx[N + n]
    return lam2


def solve_local(cb, cq, lam, sla, a, budget, lb, mu_lo, rho, center,
                t0=1.0, t_final=1e-9, shrink=0.1, tol=1e-8, max_newton=1000,
                record=None):
    """Barrier-path Newton solve of one cell's prox problem.

    Returns ``(x, kkt_residual, newton_iterations, status)``.  When ``record`` is
    a list, ``(stage, merit)`` pairs are appended after every accepted step.
    """
    cb = [float(v) for v in cb]
    lam = [float(v) for v in lam]
    sla = [float(v) for v in sla]
    a = [float(v) for v in a]
    lb = [float(v) for v in lb]
    mu_lo = [float(v) for v in mu_lo]
    c = [float(v) for v in center]
    cq = float(cq)
    budget = float(budget)
    rho = float(rho)
    N = len(cb)

    x0 = feasible_start(cb, cq, lam, sla, a, budget, lb, mu_lo)
    if x0 is None:
        return np.full(2 * N, np.nan), math.inf, 0, INFEASIBLE
    x = [float(v) for v in x0]
    g = [0.0] * (2 * N)
    dx = [0.0] * (2 * N)
    xn = [0.0] * (2 * N)
    g2 = [0.0] * (2 * N)
    iters = 0
    status = OK
    # barrier weights are relative to the objective scale, which rho dominates when large
    scale = max(1.0, rho)
    t = t0 * scale
    t_last = t_final * scale
    stage = 0
    args = (cb, cq, lam, sla, a, budget, lb, mu_lo)
    while True:
        phi = _merit(x, *args, rho, c, t, N)
        if record is not None:
            record.append((stage, phi))
        for _ in range(100):
            lam2 = _newton_step(x, *args, rho, c, t, N, g, dx)
            iters += 1
            if lam2 <= 1e-20 * scale or iters >= max_newton:
                break
            # phi is convex along dx, so a non-positive slope at the trial point
            # certifies descent without comparing nearly equal merit values
            step = 1.0
            accepted = False
            for _ls in range(60):
                for i in range(2 * N):
                    xn[i] = x[i] + step * dx[i]
                ok, _ = _slacks(xn, *args, N)
                if ok:
                    _grad(xn, *args, rho, c, t, N, g2)
                    slope = 0.0
                    for i in range(2 * N):
                        slope += g2[i] * dx[i]
                    if slope <= 0.0:
                        accepted = True
                        break
                    if _merit(xn, *args, rho, c, t, N) <= phi - 0.25 * step * lam2:
                        accepted = True
                        break
                step *= 0.5
            if not accepted:
                break
            x, xn = xn, x
            phi = _merit(x, *args, rho, c, t, N)
            if record is not None:
                record.append((stage, phi))
        if iters >= max_newton:
            status = MAXITER
            break
        if t <= t_last * (1.0 + 1e-12):
            break
        t = max(t * shrink, t_last)
        stage += 1

    lam2 = _newton_step(x, *args, rho, c, t, N, g, dx)
    kkt = max(math.sqrt(max(lam2, 0.0) / scale), t / scale)
    if status == OK and kkt > tol:
        status = MAXITER
    return np.array(x), kkt, iters, status

