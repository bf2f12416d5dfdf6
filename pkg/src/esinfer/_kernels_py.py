"""Pure numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or ``ESINFER_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _max_step(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _pinball(X, y, coef, tau):
    r = y - X @ coef
    return float(np.sum(r * (tau - (r < 0.0))))


def rq_fnb(X, y, tau, beta=0.99995, tol=1e-8, max_iter=200):
    """Frisch-Newton interior point solver for linear quantile regression.

    Works on the bounded dual ``min -y'a  s.t.  X'a = (1-tau) X'1, 0 <= a <= 1``
    with Mehrotra predictor-corrector steps. Returns
    ``(coef, iterations, gap, objective, converged)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    coef_ls = np.linalg.lstsq(X, y, rcond=None)[0]
    lam = -coef_ls
    r = -y - X @ lam
    scale = float(np.mean(np.abs(r)))
    if scale == 0.0:
        return coef_ls, 0, 0.0, 0.0, True
    delta = 0.01 * scale
    x = np.full(n, 1.0 - tau)
    s = np.full(n, tau)
    z = np.maximum(r, 0.0) + delta
    w = np.maximum(-r, 0.0) + delta

    gap = float(z @ x + w @ s)
    obj = _pinball(X, y, -lam, tau)
    it = 0
    converged = False
    while True:
        if gap <= tol * (1.0 + abs(obj)):
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        q = 1.0 / (z / x + w / s)
        r = z - w
        M = X.T @ (q[:, None] * X)
        try:
            chol = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            break

        def solve(b):
            return np.linalg.solve(chol.T, np.linalg.solve(chol, b))

        dlam = solve(X.T @ (q * r))
        dx = q * (X @ dlam - r)
        ds = -dx
        dz = -z * (1.0 + dx / x)
        dw = -w * (1.0 + ds / s)
        fp = min(beta * min(_max_step(x, dx), _max_step(s, ds)), 1.0)
        fd = min(beta * min(_max_step(z, dz), _max_step(w, dw)), 1.0)
        if min(fp, fd) < 1.0:
            mu = gap
            g = float((x + fp * dx) @ (z + fd * dz) + (s + fp * ds) @ (w + fd * dw))
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            dxdz = dx * dz
            dsdw = ds * dw
            xi = mu * (1.0 / x - 1.0 / s)
            v = r - xi + dxdz / x - dsdw / s
            dlam = solve(X.T @ (q * v))
            dx = q * (X @ dlam - v)
            ds = -dx
            dz = mu / x - z - dxdz / x - (z / x) * dx
            dw = mu / s - w - dsdw / s - (w / s) * ds
            fp = min(beta * min(_max_step(x, dx), _max_step(s, ds)), 1.0)
            fd = min(beta * min(_max_step(z, dz), _max_step(w, dw)), 1.0)
        x = x + fp * dx
        s = s + fp * ds
        lam = lam + fd * dlam
        z = z + fd * dz
        w = w + fd * dw
        gap = float(z @ x + w @ s)
        obj = _pinball(X, y, -lam, tau)
    return -lam, it, gap, obj, converged


def kde_truncated_moments(e, h, t, lower, npts=512):
    """Truncated moments of a Gaussian-kernel density estimate.

    For each truncation point ``t[i]`` returns the analytic kernel CDF
    ``F[i] = mean_j Phi((t[i] - e_j) / h)`` and trapezoid-rule integrals of
    ``u * f(u)`` and ``u**2 * f(u)`` over ``[lower, t[i]]`` on ``npts`` nodes.
    """
    e = np.asarray(e, dtype=float)
    t = np.asarray(t, dtype=float)
    m = e.shape[0]
    F = np.empty(t.shape[0])
    m1 = np.zeros(t.shape[0])
    m2 = np.zeros(t.shape[0])
    norm = _INV_SQRT2PI / (m * h)
    k = np.arange(npts, dtype=float) / (npts - 1)
    wts = np.ones(npts)
    wts[0] = wts[-1] = 0.5
    for i, ti in enumerate(t):
        F[i] = float(np.sum(ndtr((ti - e) / h))) / m
        if ti <= lower:
            continue
        grid = lower + (ti - lower) * k
        u = (grid[:, None] - e[None, :]) / h
        dens = np.exp(-0.5 * u * u).sum(axis=1) * norm
        step = (ti - lower) / (npts - 1)
        wf = wts * dens * step
        m1[i] = float(np.sum(wf * grid))
        m2[i] = float(np.sum(wf * grid * grid))
    return F, m1, m2


def joint_loss_sum(y, X, theta_q, theta_e, tau, family_code):
    """Sum of the joint loss; ``inf`` outside the ``logneg`` domain."""
    zq = X @ theta_q
    ze = X @ theta_e
    if family_code == 1:
        if np.any(ze >= 0.0):
            return np.inf
        g2 = -1.0 / ze
        cg2 = -np.log(-ze)
    else:
        g2 = ze
        cg2 = 0.5 * ze * ze
    ind = (y <= zq).astype(float)
    val = (ind - tau) * zq - ind * y + g2 * (ze - zq + (zq - y) * ind / tau) - cg2
    return float(np.sum(val))
