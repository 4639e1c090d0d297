"""Independent reference implementations used as test oracles.

Everything here is written as plainly as possible (literal loops, textbook
formulas) so the production code is checked against a second, dumber route
rather than against itself.
"""

from __future__ import annotations

import numpy as np

from saomre.engine import ParameterPoint
from saomre.estimator import _run_replicates


def brute_similarity_mean(v) -> float:
    n = len(v)
    total = 0.0
    count = 0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += 1.0 - abs(v[i] - v[j])
                count += 1
    return total / count


def brute_actor_stat(ties, i, kind, v=None) -> float:
    """One effect statistic for one actor, by literal summation."""
    n = len(ties)
    out = sum(ties[i][j] for j in range(n))
    if kind == "out_degree":
        return float(out)
    if kind == "reciprocity":
        return float(sum(ties[i][j] * ties[j][i] for j in range(n)))
    if kind == "transitive_triplets":
        return float(
            sum(
                ties[i][j] * ties[i][h] * ties[h][j]
                for j in range(n)
                for h in range(n)
            )
        )
    if kind == "out_degree_activity":
        return float(out) ** 2
    if kind == "covariate_alter":
        return float(sum(ties[i][j] * v[j] for j in range(n)))
    if kind == "covariate_ego":
        return float(v[i] * out)
    if kind == "covariate_similarity":
        simbar = brute_similarity_mean(v)
        return float(
            sum(ties[i][j] * ((1.0 - abs(v[i] - v[j])) - simbar) for j in range(n))
        )
    raise AssertionError(kind)


def all_digraphs(n: int):
    """Every directed binary network on n actors (zero diagonal)."""
    slots = [(i, j) for i in range(n) for j in range(n) if i != j]
    m = len(slots)
    for code in range(2**m):
        ties = np.zeros((n, n), dtype=np.int8)
        for b, (i, j) in enumerate(slots):
            if code >> b & 1:
                ties[i, j] = 1
        yield ties


def score_product_vs_fd(spec, panel, pp, T, seed, h_lam, h_beta, workers=1):
    """Derivative of the mean statistics two ways: score products and
    coupled central finite differences sharing the replicate streams.

    Returns (D_score, D_fd, combined_se) over the rate+fixed block.
    """
    dim = 1 + spec.p
    rows, ls, _ = _run_replicates(spec, panel, pp, T, seed, phase=1, workers=workers)
    g = rows[:, :dim]
    l_theta = ls[:, :dim]
    prod = (g - g.mean(axis=0))[:, :, None] * l_theta[:, None, :]
    D_score = prod.mean(axis=0)
    se_score = prod.std(axis=0, ddof=1) / np.sqrt(prod.shape[0])

    D_fd = np.zeros((dim, dim))
    se_fd = np.zeros((dim, dim))
    base = np.concatenate(([pp.lam], pp.beta))
    for k in range(dim):
        h = h_lam if k == 0 else h_beta
        plus = base.copy()
        minus = base.copy()
        plus[k] += h
        minus[k] -= h
        pp_p = ParameterPoint(lam=plus[0], beta=plus[1:])
        pp_m = ParameterPoint(lam=minus[0], beta=minus[1:])
        rows_p, _, _ = _run_replicates(spec, panel, pp_p, T, seed, phase=1, workers=workers)
        rows_m, _, _ = _run_replicates(spec, panel, pp_m, T, seed, phase=1, workers=workers)
        diff = (rows_p[:, :dim] - rows_m[:, :dim]) / (2.0 * h)
        D_fd[:, k] = diff.mean(axis=0)
        se_fd[:, k] = diff.std(axis=0, ddof=1) / np.sqrt(diff.shape[0])
    return D_score, D_fd, np.sqrt(se_score**2 + se_fd**2)
