"""Compiled composite integrator.

State layout of the RK4 block ``y``::

    [0:4]    plant x1..x4
    [4:6]    xi
    [6:10]   Phi, row-major
    [10:34]  filter states, (4 filters) x (yE, psi1..psi5)
    [34]     running integral of Delta^2
    [35:]    gradient observers, 2 per entry

The estimator block ``est`` holds 5 components per DREM entry followed by
5 per overparameterised entry.  It is advanced either inside RK4
(``exact=False``) or by the closed-form frozen-coefficient step.

This duplicates the formulas of the public modules on purpose: the tests
check every record against them.
"""
import math

import numpy as np
from numba import njit

N_CORE = 35
OK, DIVERGED, UNOBSERVABLE = 0, 1, 2

W1, W2, W3, W4 = 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0


@njit(cache=True)
def _sample(times, values, t):
    # left-continuous: the value of the last breakpoint strictly before t
    k = np.searchsorted(times, t) - 1
    if k < 0:
        k = 0
    return values[k]


_POP = np.array([bin(m).count("1") for m in range(32)], dtype=np.int64)
_ORDER = np.array(sorted(range(1, 32), key=lambda m: (_POP[m], m)), dtype=np.int64)


@njit(cache=True)
def _minor_table(M, m, D):
    # D[mask] = det of rows m-popcount(mask)..m-1 on the columns in mask
    D[0] = 1.0
    for mask in _ORDER:
        p = _POP[mask]
        if p > m:
            break
        row = m - p
        acc = 0.0
        sign = 1.0
        for j in range(5):
            if (mask >> j) & 1:
                acc += sign * M[row, j] * D[mask ^ (1 << j)]
                sign = -sign
        D[mask] = acc


@njit(cache=True)
def mix5_cofactor(Psi, YE, calY, sub, D):
    """Delta = det(Psi) and calY = adj(Psi) @ YE by cofactors (singular-safe)."""
    full = 31
    _minor_table(Psi, 5, D)
    delta = D[full]
    for j in range(5):
        calY[j] = 0.0
    for i in range(5):
        r = 0
        for ii in range(5):
            if ii != i:
                for jj in range(5):
                    sub[r, jj] = Psi[ii, jj]
                r += 1
        _minor_table(sub, 4, D)
        for j in range(5):
            cof = D[full ^ (1 << j)]
            if (i + j) % 2 == 1:
                cof = -cof
            # adj[j, i] = cof
            calY[j] += cof * YE[i]
    return delta


@njit(cache=True)
def mix5(Psi, YE, calY, sub, D, W):
    """Delta = det(Psi) and calY = Delta * solve(Psi, YE), partial pivoting.

    Falls back to cofactors when a pivot is exactly zero.
    """
    n = 5
    for i in range(n):
        for j in range(n):
            W[i, j] = Psi[i, j]
        W[i, n] = YE[i]
    delta = 1.0
    for c in range(n):
        p = c
        best = abs(W[c, c])
        for r in range(c + 1, n):
            if abs(W[r, c]) > best:
                best = abs(W[r, c])
                p = r
        if best == 0.0:
            return mix5_cofactor(Psi, YE, calY, sub, D)
        if p != c:
            for j in range(c, n + 1):
                tmp = W[c, j]
                W[c, j] = W[p, j]
                W[p, j] = tmp
            delta = -delta
        piv = W[c, c]
        delta *= piv
        for r in range(c + 1, n):
            f = W[r, c] / piv
            if f != 0.0:
                for j in range(c + 1, n + 1):
                    W[r, j] -= f * W[c, j]
    for i in range(n - 1, -1, -1):
        acc = W[i, n]
        for j in range(i + 1, n):
            acc -= W[i, j] * calY[j]
        calY[i] = acc / W[i, i]
    for i in range(n):
        calY[i] *= delta
    return delta


@njit(cache=True)
def _stage(t, y, est, dy, dest, aux, Psi, YE, calY, sub, D, W,
           coef, filt, gam_drem, gam_op, gam_grad, n_drem, n_op, n_grad, exact,
           tu1, vu1, tu2, vu2, ty1, vy1, ty2, vy2, y1_tol):
    a0 = coef[0]; b0 = coef[1]; a1 = coef[2]; b1 = coef[3]; c1 = coef[4]
    a2 = coef[5]; b2 = coef[6]; xq = coef[7]
    u1 = _sample(tu1, vu1, t)
    u2 = _sample(tu2, vu2, t)
    y1 = _sample(ty1, vy1, t)
    y2 = _sample(ty2, vy2, t)

    x1 = y[0]; x2 = y[1]; x3 = y[2]; x4 = y[3]
    dl = x1 - y1
    s = math.sin(dl)
    c = math.cos(dl)
    k = y2 / xq
    y5 = k * (x4 * s - x3 * c)
    y6 = k * (x4 * c + x3 * s - y2)
    y4sq = (x3 * x3 + x4 * x4 + y2 * y2 - 2.0 * y2 * (x4 * c + x3 * s)) / (xq * xq)

    dy[0] = x2
    dy[1] = -a0 * x2 + b0 * (u1 - y5)
    dy[2] = -a2 * x3 + b2 * y2 * s
    dy[3] = -a1 * x4 + b1 * y2 * c + c1 * u2

    # observer side sees only PMU outputs and inputs from here on
    z0 = y6 + y2 * y2 / xq
    Y1 = xq * xq * y4sq + 2.0 * xq * y6 + y2 * y2
    if not (Y1 > y1_tol):
        return UNOBSERVABLE
    kk = xq / Y1
    A11 = -a2 + b2 * kk * z0
    A12 = b2 * kk * y5
    A21 = -b1 * kk * y5
    A22 = -a1 + b1 * kk * z0
    cu = c1 * u2

    xi1 = y[4]; xi2 = y[5]
    p11 = y[6]; p12 = y[7]; p21 = y[8]; p22 = y[9]
    dy[4] = A11 * xi1 + A12 * xi2
    dy[5] = A21 * xi1 + A22 * xi2 + cu
    dy[6] = A11 * p11 + A12 * p21
    dy[7] = A11 * p12 + A12 * p22
    dy[8] = A21 * p11 + A22 * p21
    dy[9] = A21 * p12 + A22 * p22

    yE = Y1 - (xi1 * xi1 + xi2 * xi2)
    Psi[0, 0] = 2.0 * (p11 * xi1 + p21 * xi2)
    Psi[0, 1] = 2.0 * (p12 * xi1 + p22 * xi2)
    Psi[0, 2] = 2.0 * (p11 * p12 + p21 * p22)
    Psi[0, 3] = p11 * p11 + p21 * p21
    Psi[0, 4] = p12 * p12 + p22 * p22
    YE[0] = yE
    for i in range(4):
        di = filt[i]
        base = 10 + 6 * i
        dy[base] = di * (yE - y[base])
        YE[i + 1] = y[base]
        for j in range(5):
            dy[base + 1 + j] = di * (Psi[0, j] - y[base + 1 + j])
            Psi[i + 1, j] = y[base + 1 + j]

    delta = mix5(Psi, YE, calY, sub, D, W)
    dy[34] = delta * delta

    for g in range(n_grad):
        o = N_CORE + 2 * g
        h3 = y[o]; h4 = y[o + 1]
        r = Y1 - (h3 * h3 + h4 * h4)
        dy[o] = r * (gam_grad[g, 0, 0] * h3 + gam_grad[g, 0, 1] * h4) + A11 * h3 + A12 * h4
        dy[o + 1] = r * (gam_grad[g, 1, 0] * h3 + gam_grad[g, 1, 1] * h4) + A21 * h3 + A22 * h4 + cu

    aux[0] = delta
    for j in range(5):
        aux[1 + j] = calY[j]
        aux[7 + j] = Psi[0, j]
    aux[6] = yE

    if not exact:
        for e in range(n_drem):
            for j in range(5):
                th = est[5 * e + j]
                dest[5 * e + j] = -gam_drem[e, j] * delta * (delta * th - calY[j])
        for e in range(n_op):
            o = 5 * (n_drem + e)
            res = -yE
            for j in range(5):
                res += Psi[0, j] * est[o + j]
            for i in range(5):
                gp = 0.0
                for j in range(5):
                    gp += gam_op[e, i, j] * Psi[0, j]
                dest[o + i] = -gp * res

    for i in range(dy.shape[0]):
        if not math.isfinite(dy[i]):
            return DIVERGED
    if not exact:
        for i in range(dest.shape[0]):
            if not math.isfinite(dest[i]):
                return DIVERGED
    return OK


@njit(cache=True)
def _phi1(z):
    if z > 0.0:
        return -math.expm1(-z) / z
    return 1.0


@njit(cache=True)
def integrate(y0, est0, h, n_steps, coef, filt, gam_drem, gam_op, gam_grad, exact,
              tu1, vu1, tu2, vu2, ty1, vy1, ty2, vy2, y1_tol):
    """Fixed-step RK4 on the composite state; returns ``(Y, E, status, t_fail)``."""
    n = y0.shape[0]
    ne = est0.shape[0]
    n_drem = gam_drem.shape[0]
    n_op = gam_op.shape[0]
    n_grad = gam_grad.shape[0]
    Yrec = np.empty((n_steps + 1, n))
    Erec = np.empty((n_steps + 1, ne))
    Yrec[0] = y0
    Erec[0] = est0

    y = y0.copy()
    est = est0.copy()
    ys = np.empty(n)
    es = np.empty(ne)
    k = np.empty((4, n))
    ke = np.empty((4, ne))
    aux = np.empty((4, 12))
    Psi = np.empty((5, 5))
    YE = np.empty(5)
    calY = np.empty(5)
    sub = np.empty((4, 5))
    D = np.empty(32)
    W = np.empty((5, 6))
    cs = (0.0, 0.5, 0.5, 1.0)

    for step in range(n_steps):
        t = step * h
        for st in range(4):
            if st == 0:
                for i in range(n):
                    ys[i] = y[i]
                for i in range(ne):
                    es[i] = est[i]
            else:
                a = cs[st] * h
                for i in range(n):
                    ys[i] = y[i] + a * k[st - 1, i]
                if not exact:
                    for i in range(ne):
                        es[i] = est[i] + a * ke[st - 1, i]
            status = _stage(t + cs[st] * h, ys, es, k[st], ke[st], aux[st], Psi, YE, calY, sub, D, W,
                            coef, filt, gam_drem, gam_op, gam_grad, n_drem, n_op, n_grad, exact,
                            tu1, vu1, tu2, vu2, ty1, vy1, ty2, vy2, y1_tol)
            if status != OK:
                return Yrec[:step + 1], Erec[:step + 1], status, t + cs[st] * h
        for i in range(n):
            y[i] = y[i] + h * (W1 * k[0, i] + W2 * k[1, i] + W3 * k[2, i] + W4 * k[3, i])
        if exact:
            dbar2 = 0.0
            for st in range(4):
                w = W1 if (st == 0 or st == 3) else W2
                dbar2 += w * aux[st, 0] * aux[st, 0]
            for e in range(n_drem):
                for j in range(5):
                    b = 0.0
                    for st in range(4):
                        w = W1 if (st == 0 or st == 3) else W2
                        b += w * aux[st, 0] * aux[st, 1 + j]
                    a_ = gam_drem[e, j] * dbar2
                    th = est[5 * e + j]
                    est[5 * e + j] = th - (a_ * th - gam_drem[e, j] * b) * h * _phi1(a_ * h)
            if n_op > 0:
                psib = np.zeros(5)
                yEb = 0.0
                for st in range(4):
                    w = W1 if (st == 0 or st == 3) else W2
                    yEb += w * aux[st, 6]
                    for j in range(5):
                        psib[j] += w * aux[st, 7 + j]
                for e in range(n_op):
                    o = 5 * (n_drem + e)
                    gp = np.zeros(5)
                    lam = 0.0
                    res = -yEb
                    for i in range(5):
                        for j in range(5):
                            gp[i] += gam_op[e, i, j] * psib[j]
                        lam += psib[i] * gp[i]
                        res += psib[i] * est[o + i]
                    f = res * h * _phi1(lam * h)
                    for i in range(5):
                        est[o + i] -= gp[i] * f
        else:
            for i in range(ne):
                est[i] = est[i] + h * (W1 * ke[0, i] + W2 * ke[1, i] + W3 * ke[2, i] + W4 * ke[3, i])
        for i in range(n):
            if not math.isfinite(y[i]):
                return Yrec[:step + 1], Erec[:step + 1], DIVERGED, t + h
        for i in range(ne):
            if not math.isfinite(est[i]):
                return Yrec[:step + 1], Erec[:step + 1], DIVERGED, t + h
        Yrec[step + 1] = y
        Erec[step + 1] = est
    return Yrec, Erec, OK, n_steps * h
