"""Simulation of one observation period of the network process.

A period runs for unit time: the number of change opportunities K is
Poisson(n * lambda), each opportunity hands a uniformly chosen actor the
multinomial choice over its candidate moves. Actor-level coefficients are
drawn once per period. Alongside the end state, the simulator accumulates
the score of the realized trajectory, which downstream modules use as the
derivative estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import pdtr, pdtrik

from . import kernel
from .effects import (
    EffectTable,
    ModelSpec,
    actor_statistics,
    build_effect_table,
    dispersion_from_matrix,
    dispersion_matrix,
)
from .errors import DegeneracyError, DivergenceError, ValidationError
from .networks import Network, adjacency_candidates, apply_candidate
from .streams import split_generators


@dataclass(frozen=True)
class ParameterPoint:
    """One point of the parameter space: rate, fixed coefficients, variance part.

    sigma is None when the model has no random effects, a length-1 array for
    the scalar variance, length-q for the diagonal one, and a q x q matrix
    for the unrestricted one.
    """

    lam: float
    beta: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise ValidationError(f"rate must be positive and finite, got {self.lam}")
        if self.beta.ndim != 1 or not np.isfinite(self.beta).all():
            raise ValidationError("beta must be a finite vector")
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=np.float64)
            if not np.isfinite(s).all():
                raise ValidationError("variance parameters must be finite")
            if s.ndim == 1:
                if (s < 0).any():
                    raise ValidationError("variances must be nonnegative")
            elif s.ndim == 2:
                if s.shape[0] != s.shape[1] or not np.allclose(s, s.T, atol=1e-12):
                    raise ValidationError("covariance matrix must be square symmetric")
                s = (s + s.T) / 2.0
            else:
                raise ValidationError("sigma must be a vector or a square matrix")
            object.__setattr__(self, "sigma", s)

    @property
    def theta(self) -> np.ndarray:
        """Rate and fixed coefficients stacked, rate first."""
        return np.concatenate(([self.lam], self.beta))

    def sigma_vector(self, variance_model: str | None) -> np.ndarray:
        """Variance parameters flattened in statistic order (empty when q=0)."""
        if self.sigma is None or variance_model is None:
            return np.empty(0)
        if variance_model in ("scalar", "diagonal"):
            return np.asarray(self.sigma, dtype=np.float64).ravel().copy()
        q = self.sigma.shape[0]
        return np.array([self.sigma[h, g] for h in range(q) for g in range(h + 1)])

    def as_vector(self, variance_model: str | None) -> np.ndarray:
        return np.concatenate([self.theta, self.sigma_vector(variance_model)])


def point_from_vector(vec: np.ndarray, spec: ModelSpec) -> ParameterPoint:
    """Inverse of as_vector for a given model layout."""
    vec = np.asarray(vec, dtype=np.float64)
    lam = float(vec[0])
    beta = vec[1 : 1 + spec.p]
    if spec.q == 0:
        return ParameterPoint(lam=lam, beta=beta)
    tail = vec[1 + spec.p :]
    if spec.variance_model in ("scalar", "diagonal"):
        sigma = tail.copy()
    else:
        q = spec.q
        sigma = np.zeros((q, q))
        pos = 0
        for h in range(q):
            for g in range(h + 1):
                sigma[h, g] = sigma[g, h] = tail[pos]
                pos += 1
    return ParameterPoint(lam=lam, beta=beta, sigma=sigma)


@dataclass(frozen=True)
class RandomEffectsDraw:
    """Standard-normal draws and the actor coefficients they scale to."""

    u: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class ScoreContribution:
    """Trajectory score: rate part, fixed part, per-actor random part, variance part."""

    l_lambda: float
    l_beta: np.ndarray
    l_b: np.ndarray
    l_sigma: np.ndarray | None

    def stacked(self, n_sigma: int) -> np.ndarray:
        """(l_lambda, l_beta, l_sigma) as one row; NaN where no variance score exists."""
        out = np.full(1 + self.l_beta.shape[0] + n_sigma, np.nan)
        out[0] = self.l_lambda
        out[1 : 1 + self.l_beta.shape[0]] = self.l_beta
        if n_sigma and self.l_sigma is not None:
            out[1 + self.l_beta.shape[0] :] = self.l_sigma
        return out


@dataclass(frozen=True)
class SimOutcome:
    end_network: Network
    g_hat: np.ndarray
    scores: ScoreContribution
    draw: RandomEffectsDraw
    n_ministeps: int


def poisson_quantile(u: float, mu: float) -> int:
    """Smallest k with Poisson(mu) CDF at k of at least u (CDF inversion).

    Inversion keeps the count comonotone in the rate, which couples runs at
    nearby rates when they share the uniform.
    """
    if u <= 0.0 or mu <= 0.0:
        return 0
    if u >= 1.0:
        raise ValidationError("quantile input must be below 1")
    k = int(np.ceil(pdtrik(u, mu)))
    if k < 0:
        k = 0
    while k > 0 and pdtr(k - 1, mu) >= u:
        k -= 1
    while pdtr(k, mu) < u:
        k += 1
    return k


def draw_random_effects(
    variance_model: str | None,
    sigma: np.ndarray | None,
    n: int,
    q: int,
    rng: np.random.Generator,
) -> RandomEffectsDraw:
    """Actor coefficient rows b_i, i.i.d. normal with the requested covariance."""
    if q == 0:
        empty = np.zeros((n, 0))
        return RandomEffectsDraw(u=empty, b=empty)
    u = rng.standard_normal((n, q))
    s = np.asarray(sigma, dtype=np.float64)
    if variance_model == "scalar":
        if s.shape != (1,):
            raise ValidationError("scalar variance takes a single value")
        b = np.sqrt(s[0]) * u
    elif variance_model == "diagonal":
        if s.shape != (q,):
            raise ValidationError(f"diagonal variance needs {q} values")
        b = u * np.sqrt(s)[None, :]
    elif variance_model == "unrestricted":
        if s.shape != (q, q):
            raise ValidationError(f"unrestricted variance needs a {q}x{q} matrix")
        try:
            chol = np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("covariance matrix is not positive definite") from exc
        b = u @ chol.T
    else:
        raise ValidationError(f"unknown variance model {variance_model!r}")
    return RandomEffectsDraw(u=u, b=b)


def _coefficient_matrix(
    pp: ParameterPoint, b: np.ndarray, n: int, table: EffectTable
) -> np.ndarray:
    coef = np.empty((n, table.n_effects))
    coef[:, : table.n_fixed] = pp.beta[None, :]
    if table.n_random:
        coef[:, table.n_fixed :] = b
    return coef


def choice_probabilities(
    x: Network,
    i: int,
    pp: ParameterPoint,
    b_i: np.ndarray,
    spec: ModelSpec,
    cov: dict[str, np.ndarray],
) -> np.ndarray:
    """Probabilities over actor i's candidates, no-change last.

    Reference route: evaluates the full evaluation function on every applied
    candidate network. The compiled walk uses incremental changes instead;
    the two must agree and are compared in tests.
    """
    from .effects import evaluation_function

    cands = adjacency_candidates(x, i)
    f = np.array(
        [
            evaluation_function(apply_candidate(x, i, c), i, pp.beta, b_i, spec, cov)
            for c in cands
        ]
    )
    if not np.isfinite(f).all():
        raise DivergenceError("evaluation function is non-finite; parameters ran away")
    e = np.exp(f - f.max())
    return e / e.sum()


def ministep(
    x: Network,
    pp: ParameterPoint,
    draw: RandomEffectsDraw,
    spec: ModelSpec,
    cov: dict[str, np.ndarray],
    rng: np.random.Generator,
) -> tuple[Network, ScoreContribution]:
    """One change opportunity via the reference route; returns the score increment."""
    n = x.n_actors
    u_actor, u_choice = rng.random(2)
    i = min(int(u_actor * n), n - 1)
    probs = choice_probabilities(x, i, pp, draw.b[i] if spec.q else np.empty(0), spec, cov)
    chosen = int(np.searchsorted(np.cumsum(probs), u_choice * probs.sum()))
    chosen = min(chosen, n - 1)
    cands = adjacency_candidates(x, i)
    stats = np.stack(
        [
            actor_statistics(apply_candidate(x, i, c), spec.all_effects, cov)[i]
            for c in cands
        ]
    )
    mean_stats = probs @ stats
    inc = stats[chosen] - mean_stats
    l_beta = inc[: spec.p]
    l_b = np.zeros((n, spec.q))
    if spec.q:
        l_b[i] = inc[spec.p :]
    return (
        apply_candidate(x, i, cands[chosen]),
        ScoreContribution(l_lambda=0.0, l_beta=l_beta, l_b=l_b, l_sigma=None),
    )


def ministep_cap(n: int, lam: float) -> int:
    # floor of 1.0 on the rate keeps tiny-rate points from tripping the guard
    return int(np.ceil(100.0 * n * max(lam, 1.0)))


def _variance_score(
    variance_model: str | None, sigma, l_b: np.ndarray, b: np.ndarray
) -> np.ndarray | None:
    if variance_model == "scalar":
        s2 = float(np.asarray(sigma).ravel()[0])
        if s2 <= 0:
            return None
        return np.array([float((l_b * b).sum()) / (2.0 * s2)])
    if variance_model == "diagonal":
        s = np.asarray(sigma, dtype=np.float64)
        if (s <= 0).any():
            return None
        return (l_b * b).sum(axis=0) / (2.0 * s)
    return None


def simulate_period(
    x1: Network,
    pp: ParameterPoint,
    spec: ModelSpec,
    cov: dict[str, np.ndarray],
    rng: np.random.SeedSequence | np.random.Generator,
    cap: int | None = None,
    table: EffectTable | None = None,
) -> SimOutcome:
    """Simulate wave 1 forward for one period and collect statistics and scores.

    A seed sequence is split into a coefficient/count stream and a walk
    stream, so runs at nearby parameters stay coupled when reusing the seed.
    """
    n = x1.n_actors
    if isinstance(rng, np.random.SeedSequence):
        rng_draw, rng_walk = split_generators(rng, 2)
    else:
        rng_draw = rng_walk = rng
    if table is None:
        table = build_effect_table(spec.all_effects, cov, n, spec.p)
    draw = draw_random_effects(spec.variance_model, pp.sigma, n, spec.q, rng_draw)
    n_steps = poisson_quantile(rng_draw.random(), n * pp.lam)
    if cap is None:
        cap = ministep_cap(n, pp.lam)
    if n_steps > cap:
        raise DegeneracyError(
            f"drew {n_steps} change opportunities against a cap of {cap}"
        )
    uniforms = rng_walk.random((n_steps, 2))
    ties = x1.copy_ties()
    l_beta = np.zeros(spec.p)
    l_b = np.zeros((n, spec.q))
    coef = _coefficient_matrix(pp, draw.b, n, table)
    status = kernel.walk(
        ties,
        n_steps,
        np.ascontiguousarray(uniforms[:, 0]),
        np.ascontiguousarray(uniforms[:, 1]),
        table.kinds,
        table.covs,
        table.simbar,
        coef,
        spec.p,
        l_beta,
        l_b,
    )
    if status != 0:
        raise DivergenceError("evaluation function is non-finite; parameters ran away")
    end = Network(ties)
    stats = actor_statistics(end, spec.all_effects, cov)
    parts = [
        np.array([float(np.sum(ties != x1.ties))]),
        stats[:, : spec.p].sum(axis=0),
    ]
    l_sigma = None
    if spec.q:
        W = dispersion_matrix(stats[:, spec.p :])
        parts.append(dispersion_from_matrix(W, spec.variance_model))
        l_sigma = _variance_score(spec.variance_model, pp.sigma, l_b, draw.b)
    scores = ScoreContribution(
        l_lambda=n_steps / pp.lam - n, l_beta=l_beta, l_b=l_b, l_sigma=l_sigma
    )
    return SimOutcome(
        end_network=end,
        g_hat=np.concatenate(parts),
        scores=scores,
        draw=draw,
        n_ministeps=n_steps,
    )


def out_degree_distribution(x: Network, max_bin: int = 20) -> np.ndarray:
    """Proportion of actors with out-degree 0..max_bin; the top bin absorbs the rest."""
    d = np.minimum(x.out_degrees(), max_bin)
    counts = np.bincount(d, minlength=max_bin + 1)
    return counts / x.n_actors
