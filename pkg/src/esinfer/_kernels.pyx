# cython: language_level=3
"""Compiled hot kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, erfc, sqrt, fabs, INFINITY

cnp.import_array()

cdef double INV_SQRT2PI = 0.3989422804014327
cdef double INV_SQRT2 = 0.7071067811865476


cdef inline double _step_bound(double[::1] v, double[::1] dv, Py_ssize_t n) noexcept nogil:
    cdef double best = INFINITY
    cdef double cand
    cdef Py_ssize_t i
    for i in range(n):
        if dv[i] < 0.0:
            cand = -v[i] / dv[i]
            if cand < best:
                best = cand
    return best


cdef inline double _pinball(const double[:, ::1] X, const double[::1] y, double[::1] lam,
                            double tau, Py_ssize_t n, Py_ssize_t p) noexcept nogil:
    # coefficients are -lam
    cdef double total = 0.0
    cdef double r
    cdef Py_ssize_t i, j
    for i in range(n):
        r = y[i]
        for j in range(p):
            r += X[i, j] * lam[j]
        if r < 0.0:
            total += r * (tau - 1.0)
        else:
            total += r * tau
    return total


cdef int _cholesky(double[:, ::1] M, double[:, ::1] L, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double acc
    for j in range(p):
        acc = M[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if not (acc > 0.0):
            return -1
        L[j, j] = sqrt(acc)
        for i in range(j + 1, p):
            acc = M[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] L, double[::1] b, double[::1] out, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(p):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * out[k]
        out[i] = acc / L[i, i]
    for i in range(p - 1, -1, -1):
        acc = out[i]
        for k in range(i + 1, p):
            acc -= L[k, i] * out[k]
        out[i] = acc / L[i, i]


cdef void _xt_q_v(const double[:, ::1] X, double[::1] q, double[::1] v, double[::1] out,
                  Py_ssize_t n, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double qv
    for j in range(p):
        out[j] = 0.0
    for i in range(n):
        qv = q[i] * v[i]
        for j in range(p):
            out[j] += X[i, j] * qv


def rq_fnb(X_in, y_in, double tau, double beta=0.99995, double tol=1e-8, int max_iter=200):
    cdef const double[:, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    coef_ls_arr = np.linalg.lstsq(np.asarray(X), np.asarray(y), rcond=None)[0]
    cdef double[::1] lam = -np.ascontiguousarray(coef_ls_arr)
    cdef double[::1] x = np.empty(n)
    cdef double[::1] s = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef double[::1] r = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double[::1] v = np.empty(n)
    cdef double[::1] dx = np.empty(n)
    cdef double[::1] ds = np.empty(n)
    cdef double[::1] dz = np.empty(n)
    cdef double[::1] dw = np.empty(n)
    cdef double[::1] dxdz = np.empty(n)
    cdef double[::1] dsdw = np.empty(n)
    cdef double[::1] dlam = np.empty(p)
    cdef double[::1] rhs = np.empty(p)
    cdef double[:, ::1] M = np.empty((p, p))
    cdef double[:, ::1] L = np.zeros((p, p))
    cdef Py_ssize_t i, j, k
    cdef double acc, scale, delta, gap, obj, fp, fd, mu, g, xi, t1, t2
    cdef int it = 0
    cdef bint converged = False

    scale = 0.0
    for i in range(n):
        acc = -y[i]
        for j in range(p):
            acc -= X[i, j] * lam[j]
        r[i] = acc
        scale += fabs(acc)
    scale /= n
    if scale == 0.0:
        return np.asarray(coef_ls_arr), 0, 0.0, 0.0, True
    delta = 0.01 * scale
    gap = 0.0
    for i in range(n):
        x[i] = 1.0 - tau
        s[i] = tau
        z[i] = (r[i] if r[i] > 0.0 else 0.0) + delta
        w[i] = (-r[i] if r[i] < 0.0 else 0.0) + delta
        gap += z[i] * x[i] + w[i] * s[i]
    obj = _pinball(X, y, lam, tau, n, p)

    with nogil:
        while True:
            if gap <= tol * (1.0 + fabs(obj)):
                converged = True
                break
            if it >= max_iter:
                break
            it += 1
            for i in range(n):
                q[i] = 1.0 / (z[i] / x[i] + w[i] / s[i])
                r[i] = z[i] - w[i]
            for j in range(p):
                for k in range(j + 1):
                    M[j, k] = 0.0
            for i in range(n):
                for j in range(p):
                    t1 = q[i] * X[i, j]
                    for k in range(j + 1):
                        M[j, k] += t1 * X[i, k]
            for j in range(p):
                for k in range(j + 1, p):
                    M[j, k] = M[k, j]
            if _cholesky(M, L, p) != 0:
                break
            _xt_q_v(X, q, r, rhs, n, p)
            _chol_solve(L, rhs, dlam, p)
            for i in range(n):
                acc = 0.0
                for j in range(p):
                    acc += X[i, j] * dlam[j]
                dx[i] = q[i] * (acc - r[i])
                ds[i] = -dx[i]
                dz[i] = -z[i] * (1.0 + dx[i] / x[i])
                dw[i] = -w[i] * (1.0 + ds[i] / s[i])
            fp = _step_bound(x, dx, n)
            t1 = _step_bound(s, ds, n)
            if t1 < fp:
                fp = t1
            fd = _step_bound(z, dz, n)
            t1 = _step_bound(w, dw, n)
            if t1 < fd:
                fd = t1
            fp = beta * fp
            if fp > 1.0:
                fp = 1.0
            fd = beta * fd
            if fd > 1.0:
                fd = 1.0
            if fp < 1.0 or fd < 1.0:
                g = 0.0
                for i in range(n):
                    g += (x[i] + fp * dx[i]) * (z[i] + fd * dz[i]) + (s[i] + fp * ds[i]) * (w[i] + fd * dw[i])
                mu = gap * (g / gap) * (g / gap) * (g / gap) / (2.0 * n)
                for i in range(n):
                    dxdz[i] = dx[i] * dz[i]
                    dsdw[i] = ds[i] * dw[i]
                    xi = mu * (1.0 / x[i] - 1.0 / s[i])
                    v[i] = r[i] - xi + dxdz[i] / x[i] - dsdw[i] / s[i]
                _xt_q_v(X, q, v, rhs, n, p)
                _chol_solve(L, rhs, dlam, p)
                for i in range(n):
                    acc = 0.0
                    for j in range(p):
                        acc += X[i, j] * dlam[j]
                    dx[i] = q[i] * (acc - v[i])
                    ds[i] = -dx[i]
                    dz[i] = mu / x[i] - z[i] - dxdz[i] / x[i] - (z[i] / x[i]) * dx[i]
                    dw[i] = mu / s[i] - w[i] - dsdw[i] / s[i] - (w[i] / s[i]) * ds[i]
                fp = _step_bound(x, dx, n)
                t1 = _step_bound(s, ds, n)
                if t1 < fp:
                    fp = t1
                fd = _step_bound(z, dz, n)
                t1 = _step_bound(w, dw, n)
                if t1 < fd:
                    fd = t1
                fp = beta * fp
                if fp > 1.0:
                    fp = 1.0
                fd = beta * fd
                if fd > 1.0:
                    fd = 1.0
            gap = 0.0
            for i in range(n):
                x[i] += fp * dx[i]
                s[i] += fp * ds[i]
                z[i] += fd * dz[i]
                w[i] += fd * dw[i]
                gap += z[i] * x[i] + w[i] * s[i]
            for j in range(p):
                lam[j] += fd * dlam[j]
            obj = _pinball(X, y, lam, tau, n, p)

    coef = -np.asarray(lam)
    return coef, it, gap, obj, bool(converged)


def kde_truncated_moments(e_in, double h, t_in, double lower, int npts=512):
    cdef const double[::1] e = np.ascontiguousarray(e_in, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(t_in, dtype=np.float64)
    cdef Py_ssize_t m = e.shape[0]
    cdef Py_ssize_t nt = t.shape[0]
    F_arr = np.empty(nt)
    m1_arr = np.zeros(nt)
    m2_arr = np.zeros(nt)
    dens_arr = np.empty(npts)
    cdef double[::1] F = F_arr
    cdef double[::1] m1 = m1_arr
    cdef double[::1] m2 = m2_arr
    cdef double[::1] dens = dens_arr
    cdef double norm = INV_SQRT2PI / (m * h)
    cdef double inv_h = 1.0 / h
    cdef Py_ssize_t i, j, k, kc
    cdef double ti, acc, step, b, bb, q, u0, term, r, node, wt, a1, a2, pos
    with nogil:
        for i in range(nt):
            ti = t[i]
            acc = 0.0
            for j in range(m):
                acc += 0.5 * erfc(-(ti - e[j]) * inv_h * INV_SQRT2)
            F[i] = acc / m
            if ti <= lower:
                continue
            step = (ti - lower) / (npts - 1)
            b = step * inv_h
            bb = b * b
            q = exp(-bb)
            for k in range(npts):
                dens[k] = 0.0
            # Gaussian kernels on a uniform grid obey a two-term product
            # recurrence; walk outward from the node nearest each centre.
            for j in range(m):
                pos = (e[j] - lower) / step
                if pos <= 0.0:
                    kc = 0
                elif pos >= npts - 1:
                    kc = npts - 1
                else:
                    kc = <Py_ssize_t>(pos + 0.5)
                u0 = (lower + kc * step - e[j]) * inv_h
                term = exp(-0.5 * u0 * u0)
                if term == 0.0:
                    continue
                dens[kc] += term
                r = exp(-u0 * b - 0.5 * bb)
                acc = term
                for k in range(kc + 1, npts):
                    acc *= r
                    r *= q
                    if acc < 1e-30:
                        break
                    dens[k] += acc
                r = exp(u0 * b - 0.5 * bb)
                acc = term
                for k in range(kc - 1, -1, -1):
                    acc *= r
                    r *= q
                    if acc < 1e-30:
                        break
                    dens[k] += acc
            a1 = 0.0
            a2 = 0.0
            for k in range(npts):
                node = lower + (ti - lower) * (<double>k / (npts - 1))
                wt = 0.5 if (k == 0 or k == npts - 1) else 1.0
                a1 += wt * dens[k] * node
                a2 += wt * dens[k] * node * node
            m1[i] = a1 * norm * step
            m2[i] = a2 * norm * step
    return F_arr, m1_arr, m2_arr


def joint_loss_sum(y_in, X_in, theta_q_in, theta_e_in, double tau, int family_code):
    cdef const double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef const double[:, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef const double[::1] tq = np.ascontiguousarray(theta_q_in, dtype=np.float64)
    cdef const double[::1] te = np.ascontiguousarray(theta_e_in, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double zq, ze, ind, g2, cg2, total = 0.0
    with nogil:
        for i in range(n):
            zq = 0.0
            ze = 0.0
            for j in range(p):
                zq += X[i, j] * tq[j]
                ze += X[i, j] * te[j]
            if family_code == 1:
                if ze >= 0.0:
                    total = INFINITY
                    break
                g2 = -1.0 / ze
                cg2 = -log(-ze)
            else:
                g2 = ze
                cg2 = 0.5 * ze * ze
            ind = 1.0 if y[i] <= zq else 0.0
            total += (ind - tau) * zq - ind * y[i] + g2 * (ze - zq + (zq - y[i]) * ind / tau) - cg2
    return total
