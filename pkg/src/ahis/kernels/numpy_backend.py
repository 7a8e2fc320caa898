"""Pure-numpy implementations of the hot numeric kernels.

Every function here has a numba twin in ``numba_backend``; the active
implementation is chosen in ``ahis.kernels`` via the AHIS_BACKEND
environment variable.  Polynomials arrive flattened: an integer exponent
matrix ``exps`` of shape (n_terms, dim) and a float coefficient vector
``coeffs`` of shape (n_terms,).
"""

from __future__ import annotations

import numpy as np


def polyval_many(exps, coeffs, pts):
    """Evaluate sum_k coeffs[k] * prod_j pts[:,j]**exps[k,j] at many points."""
    pts = np.asarray(pts, dtype=np.float64)
    out = np.zeros(pts.shape[0])
    for k in range(exps.shape[0]):
        out += coeffs[k] * np.prod(pts ** exps[k], axis=1)
    return out


def polygrad_many(exps, coeffs, pts):
    """Gradient of the same polynomial at many points, shape (n_pts, dim)."""
    pts = np.asarray(pts, dtype=np.float64)
    n, d = pts.shape
    out = np.zeros((n, d))
    for k in range(exps.shape[0]):
        for j in range(d):
            e = exps[k, j]
            if e == 0:
                continue
            ek = exps[k].copy()
            ek[j] -= 1
            out[:, j] += coeffs[k] * e * np.prod(pts ** ek, axis=1)
    return out


def newton_line_many(exps, coeffs, base, direction, t0, tol, maxit):
    """Batched 1-D Newton solve of f(base + t*direction) = 0 along fixed lines.

    Returns (t, fval, fprime, converged).  A point is marked unconverged when
    the directional derivative degenerates or maxit is exhausted.
    """
    base = np.asarray(base, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    t = np.array(t0, dtype=np.float64, copy=True)
    n = base.shape[0]
    conv = np.zeros(n, dtype=np.bool_)
    fval = np.zeros(n)
    fprime = np.zeros(n)
    active = np.arange(n)
    for _ in range(maxit):
        pts = base[active] + t[active, None] * direction[active]
        f = polyval_many(exps, coeffs, pts)
        g = polygrad_many(exps, coeffs, pts)
        fp = np.sum(g * direction[active], axis=1)
        fval[active] = f
        fprime[active] = fp
        bad = np.abs(fp) < 1e-300
        step = np.zeros_like(f)
        ok = ~bad
        step[ok] = f[ok] / fp[ok]
        t[active[ok]] -= step[ok]
        done = ok & (np.abs(step) <= tol * (1.0 + np.abs(t[active])))
        conv[active[done]] = True
        active = active[~(done | bad)]
        if active.size == 0:
            break
    if active.size:
        pts = base[active] + t[active, None] * direction[active]
        fval[active] = polyval_many(exps, coeffs, pts)
    return t, fval, fprime, conv


def chart_newton2_many(exps_f, coeffs_f, exps_g, coeffs_g, pts, i1, i2,
                       g_target, tol, maxit):
    """Batched 2x2 Newton solve of f(x)=0, g(x)=g_target in coordinates (i1,i2).

    ``pts`` supplies both the initial guesses and the frozen remaining
    coordinates; solved points are returned together with a convergence mask.
    """
    pts = np.array(pts, dtype=np.float64, copy=True)
    n = pts.shape[0]
    conv = np.zeros(n, dtype=np.bool_)
    active = np.arange(n)
    for _ in range(maxit):
        p = pts[active]
        f = polyval_many(exps_f, coeffs_f, p)
        g = polyval_many(exps_g, coeffs_g, p) - g_target
        gf = polygrad_many(exps_f, coeffs_f, p)
        gg = polygrad_many(exps_g, coeffs_g, p)
        a, b = gf[:, i1], gf[:, i2]
        c, d = gg[:, i1], gg[:, i2]
        det = a * d - b * c
        bad = np.abs(det) < 1e-300
        ok = ~bad
        d1 = np.zeros_like(f)
        d2 = np.zeros_like(f)
        d1[ok] = (d[ok] * f[ok] - b[ok] * g[ok]) / det[ok]
        d2[ok] = (-c[ok] * f[ok] + a[ok] * g[ok]) / det[ok]
        pts[active[ok], i1] -= d1[ok]
        pts[active[ok], i2] -= d2[ok]
        res = np.hypot(f, g)
        done = ok & (np.hypot(d1, d2) <= tol) & (res < np.inf)
        conv[active[done]] = True
        active = active[~(done | bad)]
        if active.size == 0:
            break
    return pts, conv
