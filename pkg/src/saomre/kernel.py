"""Compiled inner loop of the tie-change process.

The walk consumes pre-drawn uniforms and an explicit step count so that the
compiled code is a pure function of its arguments: no RNG state inside, which
keeps replicates coupled when two parameter points share a stream.

Per-candidate statistic changes are computed incrementally from the current
state. They must agree with whole-statistic recomputation to 1e-12; the test
suite enforces that against the slow reference route.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# effect kind codes, aligned with effects.KIND_CODE
K_OUT = 0
K_RECIP = 1
K_TT = 2
K_ACT = 3
K_ALTER = 4
K_EGO = 5
K_SIM = 6


@njit(cache=True)
def _candidate_deltas(x, i, kinds, covs, simbar, ds, path_in, path_out):
    """Fill ds[c, k] with the change of statistic k if actor i plays candidate c.

    Candidate c < n-1 toggles tie to j = c (+1 past the diagonal); the last
    row is the no-change candidate and stays zero.
    """
    n = x.shape[0]
    m = kinds.shape[0]
    out_i = 0.0
    for j in range(n):
        out_i += x[i, j]
    need_paths = False
    for k in range(m):
        if kinds[k] == K_TT:
            need_paths = True
    if need_paths:
        # path_in[j] = two-paths i->h->j closed by a new i->j tie,
        # path_out[j] = shared out-neighbours of i and j
        for j in range(n):
            path_in[j] = 0.0
            path_out[j] = 0.0
        for h in range(n):
            if x[i, h] == 1:
                for j in range(n):
                    path_in[j] += x[h, j]
                    path_out[j] += x[j, h]
    for c in range(n - 1):
        j = c if c < i else c + 1
        dlt = 1.0 - 2.0 * x[i, j]
        for k in range(m):
            kk = kinds[k]
            if kk == K_OUT:
                ds[c, k] = dlt
            elif kk == K_RECIP:
                ds[c, k] = dlt * x[j, i]
            elif kk == K_TT:
                ds[c, k] = dlt * (path_in[j] + path_out[j])
            elif kk == K_ACT:
                ds[c, k] = dlt * (2.0 * out_i) + 1.0
            elif kk == K_ALTER:
                ds[c, k] = dlt * covs[k, j]
            elif kk == K_EGO:
                ds[c, k] = dlt * covs[k, i]
            else:
                ds[c, k] = dlt * (1.0 - abs(covs[k, i] - covs[k, j]) - simbar[k])
    for k in range(m):
        ds[n - 1, k] = 0.0


@njit(cache=True)
def walk(x, n_steps, u_actor, u_choice, kinds, covs, simbar, coef, n_fixed, l_beta, l_b):
    """Run n_steps tie changes in place; accumulate multinomial score terms.

    coef[i, k] is the coefficient actor i applies to effect k (shared betas
    in the first n_fixed columns, actor-specific draws after). Returns 0 on
    success, 1 if the evaluation function went non-finite.
    """
    n = x.shape[0]
    m = kinds.shape[0]
    ds = np.empty((n, m))
    path_in = np.empty(n)
    path_out = np.empty(n)
    f = np.empty(n)
    e = np.empty(n)
    for t in range(n_steps):
        i = int(u_actor[t] * n)
        if i >= n:
            i = n - 1
        if i < 0:
            i = 0
        _candidate_deltas(x, i, kinds, covs, simbar, ds, path_in, path_out)
        fmax = 0.0
        for c in range(n):
            acc = 0.0
            for k in range(m):
                acc += coef[i, k] * ds[c, k]
            f[c] = acc
            if c == 0 or acc > fmax:
                fmax = acc
        if not np.isfinite(fmax):
            return 1
        tot = 0.0
        for c in range(n):
            ec = np.exp(f[c] - fmax)
            e[c] = ec
            tot += ec
        if not np.isfinite(tot) or tot <= 0.0:
            return 1
        target = u_choice[t] * tot
        chosen = n - 1
        csum = 0.0
        for c in range(n):
            csum += e[c]
            if csum >= target:
                chosen = c
                break
        for k in range(m):
            acc = 0.0
            for c in range(n):
                acc += e[c] * ds[c, k]
            inc = ds[chosen, k] - acc / tot
            if k < n_fixed:
                l_beta[k] += inc
            else:
                l_b[i, k - n_fixed] += inc
        if chosen < n - 1:
            j = chosen if chosen < i else chosen + 1
            x[i, j] = np.int8(1 - x[i, j])
    return 0


@njit(cache=True)
def candidate_probabilities(x, i, kinds, covs, simbar, coef_i):
    """Choice probabilities of actor i over its n candidates (no-change last)."""
    n = x.shape[0]
    m = kinds.shape[0]
    ds = np.empty((n, m))
    path_in = np.empty(n)
    path_out = np.empty(n)
    _candidate_deltas(x, i, kinds, covs, simbar, ds, path_in, path_out)
    f = np.empty(n)
    fmax = 0.0
    for c in range(n):
        acc = 0.0
        for k in range(m):
            acc += coef_i[k] * ds[c, k]
        f[c] = acc
        if c == 0 or acc > fmax:
            fmax = acc
    p = np.empty(n)
    tot = 0.0
    for c in range(n):
        ec = np.exp(f[c] - fmax)
        p[c] = ec
        tot += ec
    for c in range(n):
        p[c] /= tot
    return p
