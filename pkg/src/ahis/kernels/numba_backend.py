"""Numba-compiled twins of the numpy kernels.

Same signatures and semantics as ``numpy_backend``; compiled lazily with
``cache=True`` so the JIT cost is paid once per environment.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _term(pt, exps_k):
    v = 1.0
    for j in range(exps_k.shape[0]):
        e = exps_k[j]
        x = pt[j]
        acc = 1.0
        for _ in range(e):
            acc *= x
        v *= acc
    return v


@njit(cache=True)
def _poly_at(pt, exps, coeffs):
    s = 0.0
    for k in range(exps.shape[0]):
        s += coeffs[k] * _term(pt, exps[k])
    return s


@njit(cache=True)
def _grad_at(pt, exps, coeffs, out):
    d = pt.shape[0]
    for j in range(d):
        out[j] = 0.0
    for k in range(exps.shape[0]):
        for j in range(d):
            e = exps[k, j]
            if e == 0:
                continue
            v = coeffs[k] * e
            for l in range(d):
                el = exps[k, l]
                if l == j:
                    el -= 1
                x = pt[l]
                for _ in range(el):
                    v *= x
            out[j] += v


@njit(cache=True)
def polyval_many(exps, coeffs, pts):
    n = pts.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _poly_at(pts[i], exps, coeffs)
    return out


@njit(cache=True)
def polygrad_many(exps, coeffs, pts):
    n, d = pts.shape
    out = np.empty((n, d))
    for i in range(n):
        _grad_at(pts[i], exps, coeffs, out[i])
    return out


@njit(cache=True)
def newton_line_many(exps, coeffs, base, direction, t0, tol, maxit):
    n, d = base.shape
    t = t0.copy()
    fval = np.zeros(n)
    fprime = np.zeros(n)
    conv = np.zeros(n, dtype=np.bool_)
    pt = np.empty(d)
    grad = np.empty(d)
    for i in range(n):
        ti = t[i]
        for _ in range(maxit):
            for j in range(d):
                pt[j] = base[i, j] + ti * direction[i, j]
            f = _poly_at(pt, exps, coeffs)
            _grad_at(pt, exps, coeffs, grad)
            fp = 0.0
            for j in range(d):
                fp += grad[j] * direction[i, j]
            fval[i] = f
            fprime[i] = fp
            if abs(fp) < 1e-300:
                break
            step = f / fp
            ti -= step
            if abs(step) <= tol * (1.0 + abs(ti)):
                conv[i] = True
                break
        t[i] = ti
        for j in range(d):
            pt[j] = base[i, j] + ti * direction[i, j]
        fval[i] = _poly_at(pt, exps, coeffs)
    return t, fval, fprime, conv


@njit(cache=True)
def chart_newton2_many(exps_f, coeffs_f, exps_g, coeffs_g, pts, i1, i2,
                       g_target, tol, maxit):
    n, d = pts.shape
    out = pts.copy()
    conv = np.zeros(n, dtype=np.bool_)
    gf = np.empty(d)
    gg = np.empty(d)
    for i in range(n):
        p = out[i]
        for _ in range(maxit):
            f = _poly_at(p, exps_f, coeffs_f)
            g = _poly_at(p, exps_g, coeffs_g) - g_target
            _grad_at(p, exps_f, coeffs_f, gf)
            _grad_at(p, exps_g, coeffs_g, gg)
            a, b = gf[i1], gf[i2]
            c, dd = gg[i1], gg[i2]
            det = a * dd - b * c
            if abs(det) < 1e-300:
                break
            d1 = (dd * f - b * g) / det
            d2 = (-c * f + a * g) / det
            p[i1] -= d1
            p[i2] -= d2
            if (d1 * d1 + d2 * d2) ** 0.5 <= tol:
                conv[i] = True
                break
    return out, conv
