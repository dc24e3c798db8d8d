"""Numba kernels for workload paths, QBP scans and sequential statistics."""

import math

import numba
import numpy as np

_INF = np.inf


@numba.njit(cache=True)
def _drain(v, d):
    v = v - d
    return v if v > 0.0 else 0.0


@numba.njit(cache=True)
def cp_paths(rng, lam, mu, xi, v0, values, epochs):
    """Exact event-driven compound Poisson workload at Poisson sampling epochs.

    ``values[p, 0] = v0[p]``; row ``p`` is filled with ``V_1..V_n``.
    Within each sampling gap jump times are generated one at a time and the
    overshoot past the gap end is discarded (memorylessness).
    """
    npaths, m = values.shape
    inv_lam = 1.0 / lam if lam > 0 else 0.0
    for p in range(npaths):
        v = v0[p]
        t = 0.0
        values[p, 0] = v
        epochs[p, 0] = 0.0
        for i in range(1, m):
            rem = rng.exponential(1.0 / xi)
            t += rem
            if lam > 0:
                while True:
                    e = rng.exponential(inv_lam)
                    if e >= rem:
                        v = _drain(v, rem)
                        break
                    v = _drain(v, e) + rng.exponential(1.0 / mu)
                    rem -= e
            else:
                v = _drain(v, rem)
            values[p, i] = v
            epochs[p, i] = t


@numba.njit(cache=True)
def gamma_paths(rng, beta, gamma, xi, h, v0, values, epochs):
    """Lindley recursion on a grid of step ``h`` for Gamma-subordinator input.

    Samples read the grid point at or before each Poisson epoch.
    """
    npaths, m = values.shape
    shape = beta * h
    scale = 1.0 / gamma
    for p in range(npaths):
        v = v0[p]
        t = 0.0
        g = 0
        values[p, 0] = v
        epochs[p, 0] = 0.0
        for i in range(1, m):
            t += rng.exponential(1.0 / xi)
            target = int(math.floor(t / h))
            while g < target:
                inc = rng.gamma(shape, scale) if shape > 0 else 0.0
                v = v + inc - h
                if v < 0.0:
                    v = 0.0
                g += 1
            values[p, i] = v
            epochs[p, i] = t


@numba.njit(cache=True)
def gamma_warmup(rng, beta, gamma, h, duration, count):
    out = np.empty(count)
    shape = beta * h
    scale = 1.0 / gamma
    steps = int(math.ceil(duration / h))
    for p in range(count):
        v = 0.0
        for _ in range(steps):
            inc = rng.gamma(shape, scale) if shape > 0 else 0.0
            v = v + inc - h
            if v < 0.0:
                v = 0.0
        out[p] = v
    return out


@numba.njit(cache=True)
def _seg_integral_exp(v, d, a):
    # int_0^d exp(-a * max(v - s, 0)) ds
    w = v if v < d else d
    if a == 0.0:
        return d
    out = (math.exp(-a * (v - w)) - math.exp(-a * v)) / a
    if d > v:
        out += d - v
    return out


@numba.njit(cache=True)
def _seg_integral_id(v, d):
    # int_0^d max(v - s, 0) ds
    if v >= d:
        return d * v - 0.5 * d * d
    return 0.5 * v * v


@numba.njit(cache=True)
def cp_coupled(rng, lam, mu, xi, vstar, alphas, vals_empty, vals_stat, int_id, int_exp):
    """Two workloads driven by the same input: one from 0, one from ``vstar[p]``.

    Records both workloads at the sampling epochs and the exact time integrals
    of ``V`` and ``exp(-a V)`` (difference empty minus stationary) up to the
    last epoch.
    """
    npaths, m = vals_empty.shape
    na = alphas.shape[0]
    inv_lam = 1.0 / lam if lam > 0 else 0.0
    for p in range(npaths):
        u = 0.0
        w = vstar[p]
        vals_empty[p, 0] = u
        vals_stat[p, 0] = w
        iid = 0.0
        for j in range(na):
            int_exp[p, j] = 0.0
        for i in range(1, m):
            rem = rng.exponential(1.0 / xi)
            while True:
                e = rng.exponential(inv_lam) if lam > 0 else _INF
                d = e if e < rem else rem
                if u != w:
                    iid += _seg_integral_id(u, d) - _seg_integral_id(w, d)
                    for j in range(na):
                        int_exp[p, j] += _seg_integral_exp(u, d, alphas[j]) - _seg_integral_exp(w, d, alphas[j])
                u = _drain(u, d)
                w = _drain(w, d)
                if e >= rem:
                    break
                b = rng.exponential(1.0 / mu)
                u += b
                w += b
                rem -= e
            vals_empty[p, i] = u
            vals_stat[p, i] = w
        int_id[p] = iid


@numba.njit(cache=True)
def qbp_first_passage(zeros, incr, lump_incr, K, x0, x1, n_trunc, out_n, out_l, out_verdict):
    """Sequential QBP test on rows of zero indicators ``zeros[p, 0..n-1]`` (=Y_1..Y_n).

    The first zero observation starts the first period; each completed period
    of length ``R`` adds ``incr[R]`` (``R < K``) or ``lump_incr``.  ``out_n``
    holds the observation index at which the test stopped (or ``n_trunc``),
    ``out_verdict`` is 1 for reject, -1 for accept, 0 for continue.
    """
    npaths, n = zeros.shape
    if n_trunc < n:
        n = n_trunc
    for p in range(npaths):
        ell = 0.0
        started = False
        last = 0
        verdict = 0
        stop = n
        for i in range(n):
            if zeros[p, i]:
                idx = i + 1
                if started:
                    r = idx - last
                    ell += incr[r] if r < K else lump_incr
                    if ell > x1:
                        verdict = 1
                        stop = idx
                        break
                    if ell < x0:
                        verdict = -1
                        stop = idx
                        break
                started = True
                last = idx
        out_n[p] = stop
        out_l[p] = ell
        out_verdict[p] = verdict


@numba.njit(cache=True)
def first_crossing(increments, x, out_n, out_l):
    """First index ``n`` (1-based) with cumulative sum ``>= x``; 0 if never."""
    npaths, n = increments.shape
    for p in range(npaths):
        ell = 0.0
        hit = 0
        for i in range(n):
            ell += increments[p, i]
            if ell >= x:
                hit = i + 1
                break
        out_n[p] = hit
        out_l[p] = ell


@numba.njit(cache=True)
def cov_accumulate(Z, betas, s_ab, s_a, s_b):
    """Accumulate sums for ``Cov(exp(b * l_{j-1}), exp(b * Z_j))`` over rows of ``Z``.

    Column ``j`` of the sums (0-based) refers to observation ``j + 1``.
    """
    npaths, n = Z.shape
    G = betas.shape[0]
    for p in range(npaths):
        ell = 0.0
        for j in range(n):
            z = Z[p, j]
            if j > 0:
                for g in range(G):
                    a = math.exp(betas[g] * ell)
                    b = math.exp(betas[g] * z)
                    s_ab[j, g] += a * b
                    s_a[j, g] += a
                    s_b[j, g] += b
            ell += z


@numba.njit(cache=True)
def lag_products(Z, m, I, out):
    """Per-row means of ``(Z_t - m)(Z_{t+i} - m)`` for ``i = 0..I`` over ``t <= n - I``."""
    npaths, n = Z.shape
    T = n - I
    for p in range(npaths):
        for i in range(I + 1):
            acc = 0.0
            for t in range(T):
                acc += (Z[p, t] - m) * (Z[p, t + i] - m)
            out[p, i] = acc / T
