"""Compiled stepping loops for the built-in coefficient families.

Each routine performs the same floating-point operations, in the same order,
as the numpy path in ``schemes`` so both give bit-identical trajectories.
A negative radius means no truncation.
"""
import math

import numpy as np
from numba import njit

LEWIS = 0
GBM = 1
ZERO = 2


@njit(cache=True)
def _coefficients(family, params, x, mu, sig):
    if family == LEWIS:
        v = x[0]
        mu[0] = v - v * v * v
        a = abs(v)
        sig[0, 0] = a * math.sqrt(a)
    elif family == GBM:
        mu[0] = params[0] * x[0]
        sig[0, 0] = params[1] * x[0]
    else:
        mu[:] = 0.0
        sig[:, :] = 0.0


@njit(cache=True)
def _step_one(family, params, x, dB, step, radius, arg, mu, sig, out):
    d = x.shape[0]
    m = dB.shape[0]
    if radius >= 0.0:
        if d == 1:
            r = abs(x[0])
        else:
            r = 0.0
            for a in range(d):
                r += x[a] * x[a]
            r = math.sqrt(r)
        if r > radius:
            scale = radius / r
            for a in range(d):
                arg[a] = x[a] * scale
        else:
            for a in range(d):
                arg[a] = x[a]
    else:
        for a in range(d):
            arg[a] = x[a]
    _coefficients(family, params, arg, mu, sig)
    ok = True
    for a in range(d):
        noise = sig[a, 0] * dB[0]
        for j in range(1, m):
            noise += sig[a, j] * dB[j]
        v = x[a] + mu[a] * step + noise
        out[a] = v
        if not math.isfinite(v):
            ok = False
    return ok


@njit(cache=True)
def advance_paths(family, params, x, dB, step, radius, blowup, k_offset):
    """Advance each row of ``x`` through ``dB[i, k]``; rows that blew up stay frozen."""
    n, d = x.shape
    m = dB.shape[2]
    arg = np.empty(d)
    mu = np.empty(d)
    sig = np.empty((d, m))
    out = np.empty(d)
    for i in range(n):
        if blowup[i] >= 0:
            continue
        for k in range(dB.shape[1]):
            ok = _step_one(family, params, x[i], dB[i, k], step, radius, arg, mu, sig, out)
            x[i, :] = out
            if not ok:
                blowup[i] = k_offset + k + 1
                break


@njit(cache=True)
def advance_pairs(family, params, xf, xc, dB, M, step_f, step_c, radius_f, radius_c,
                  blow_f, blow_c, k_offset):
    """Advance coupled fine/coarse rows; coarse increments are left-to-right sums of M fine ones."""
    n, d = xf.shape
    m = dB.shape[2]
    arg = np.empty(d)
    mu = np.empty(d)
    sig = np.empty((d, m))
    out = np.empty(d)
    dBc = np.empty(m)
    n_coarse = dB.shape[1] // M
    for i in range(n):
        for kc in range(n_coarse):
            base = kc * M
            if blow_f[i] < 0:
                for j in range(M):
                    ok = _step_one(family, params, xf[i], dB[i, base + j], step_f, radius_f, arg, mu, sig, out)
                    xf[i, :] = out
                    if not ok:
                        blow_f[i] = k_offset + base + j + 1
                        break
            if blow_c[i] < 0:
                for c in range(m):
                    dBc[c] = dB[i, base, c]
                for j in range(1, M):
                    for c in range(m):
                        dBc[c] += dB[i, base + j, c]
                ok = _step_one(family, params, xc[i], dBc, step_c, radius_c, arg, mu, sig, out)
                xc[i, :] = out
                if not ok:
                    blow_c[i] = k_offset // M + kc + 1
            if blow_f[i] >= 0 and blow_c[i] >= 0:
                break
