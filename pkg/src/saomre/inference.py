"""Post-estimation inference on Monte-Carlo archives.

Everything here is deterministic post-processing of simulated archives:
standard errors from the sandwich of the derivative and covariance
estimates, orthogonalized score-type tests for statistics the fitted model
did not use, a penalized selection criterion for non-nested comparison,
and a distribution-based fit check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .effects import EffectDef, actor_statistics
from .errors import CollinearityError, ValidationError
from .estimator import COND_LIMIT, MonitorPlan, MonteCarloSummaries, phase3
from .networks import PanelData, hamming_distance
from .streams import PHASE_PSC

log = logging.getLogger(__name__)


@dataclass
class CovarianceReport:
    C: np.ndarray
    standard_errors: np.ndarray
    parameterization: str
    param_names: list[str]


@dataclass
class OrthogonalizedTest:
    """Score-type test of statistics orthogonalized against the fitted ones."""

    tested: list[str]
    gamma: np.ndarray
    xi: np.ndarray
    y_obs: np.ndarray
    y_bar: np.ndarray
    z_obs: float
    p_asymptotic: float
    p_empirical: float
    p_empirical_se: float
    replicate_z: np.ndarray
    kind: str  # "one-sided" (scalar residual) or "quadratic"


@dataclass
class PscModelEntry:
    name: str
    fit: float
    penalty: float
    psc: float
    n_theta: int
    n_variance: int
    mean_replicate_quadratic: float


@dataclass
class PscReport:
    entries: list[PscModelEntry]
    statistic_names: list[str]
    g0_observed: np.ndarray
    penalty_kind: str
    df_value: float

    def best(self) -> str:
        return min(self.entries, key=lambda e: e.psc).name


@dataclass
class GofReport:
    a_obs: np.ndarray
    a_bar: np.ndarray
    omega: np.ndarray
    d_obs: float
    distances: np.ndarray
    p_value: float
    ridge: float


def _theta_block(summaries: MonteCarloSummaries) -> np.ndarray:
    D = summaries.D_hat[summaries.est_slice, :]
    if np.isnan(D).any():
        raise ValidationError(
            "no variance-score column available; model evaluation supports "
            "scalar and diagonal variance models only"
        )
    if D.shape[0] != D.shape[1]:
        raise ValidationError("derivative matrix is not square")
    return D


def _name_collinear_block(D: np.ndarray, names: list[str]) -> str:
    _, _, vt = np.linalg.svd(D)
    loadings = np.abs(vt[-1])
    worst = np.argsort(loadings)[::-1][:2]
    return " and ".join(names[int(k)] for k in worst)


def standard_errors(summaries: MonteCarloSummaries) -> CovarianceReport:
    """Sandwich covariance of the estimator; square roots of its diagonal."""
    D = _theta_block(summaries)
    cond = np.linalg.cond(D)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise CollinearityError(
            f"derivative matrix is numerically singular (condition {cond:.3g}); "
            f"worst-conditioned block: {_name_collinear_block(D, summaries.param_names)}"
        )
    Dinv = np.linalg.inv(D)
    V = summaries.V_hat[summaries.est_slice, summaries.est_slice]
    C = Dinv @ V @ Dinv.T
    C = (C + C.T) / 2.0
    return CovarianceReport(
        C=C,
        standard_errors=np.sqrt(np.clip(np.diagonal(C), 0.0, None)),
        parameterization="sigma-squared",
        param_names=list(summaries.param_names),
    )


def reparametrize_to_sd(report: CovarianceReport, sigma2_hat) -> CovarianceReport:
    """Delta-method change of the variance entries to standard deviations.

    The last variance entries of the parameter vector are replaced by their
    square roots; the covariance transforms by the Jacobian, so each
    standard error divides by twice the standard deviation.
    """
    if report.parameterization != "sigma-squared":
        raise ValidationError("report is not in the variance parameterization")
    s2 = np.atleast_1d(np.asarray(sigma2_hat, dtype=np.float64))
    if (s2 <= 0).any():
        raise ValidationError("variance estimates must be positive to take roots")
    k = s2.shape[0]
    dim = report.C.shape[0]
    if k > dim:
        raise ValidationError("more variance entries than parameters")
    j = np.ones(dim)
    j[dim - k :] = 2.0 * np.sqrt(s2)
    C = report.C / np.outer(j, j)
    names = list(report.param_names)
    for i in range(dim - k, dim):
        names[i] = names[i].replace("variance", "sd", 1)
    return CovarianceReport(
        C=C,
        standard_errors=np.sqrt(np.clip(np.diagonal(C), 0.0, None)),
        parameterization="sigma",
        param_names=names,
    )


def _resolve_rows(summaries: MonteCarloSummaries, tested) -> list[int]:
    rows = []
    for t in tested:
        rows.append(t if isinstance(t, (int, np.integer)) else summaries.row_index(t))
    est_dim = summaries.est_dim
    for r in rows:
        if r < est_dim:
            raise ValidationError(
                f"row {summaries.names[r]!r} is an estimation statistic; "
                "only statistics outside the fitted moment set can be tested"
            )
    return [int(r) for r in rows]


def _orthogonalize(summaries: MonteCarloSummaries, rows: list[int]):
    est = summaries.est_slice
    D1 = _theta_block(summaries)
    if np.linalg.cond(D1) > COND_LIMIT:
        raise CollinearityError("estimation-block derivative matrix is singular")
    D2 = summaries.D_hat[rows, :]
    if np.isnan(D2).any():
        raise ValidationError("tested rows carry no derivative information")
    gamma = D2 @ np.linalg.inv(D1)
    V = summaries.V_hat
    V11 = V[est, est]
    V12 = V[est, :][:, rows]
    V22 = V[rows, :][:, rows]
    xi = V22 - gamma @ V12 - V12.T @ gamma.T + gamma @ V11 @ gamma.T
    xi = (xi + xi.T) / 2.0
    y_obs = summaries.g_obs[rows] - gamma @ summaries.g_obs[est]
    y_rep = summaries.rows[:, rows] - summaries.rows[:, est] @ gamma.T
    return gamma, xi, y_obs, y_rep


def _binomial_se(p: float, T: int) -> float:
    return float(np.sqrt(max(p * (1.0 - p), 0.0) / T))


def score_test_overdispersion(
    summaries_null: MonteCarloSummaries,
    observed=None,
    row: str | int | None = None,
) -> OrthogonalizedTest:
    """One-sided test of a dispersion statistic against a null without it.

    The null archive must carry the dispersion row as a monitored
    statistic; by default the single monitored dispersion row is used.
    Large observed dispersion, relative to what the fitted model simulates,
    is evidence for actor-level heterogeneity.
    """
    s = summaries_null
    if row is None:
        candidates = [
            k
            for k in range(s.est_dim, s.est_dim + s.extra_dim)
            if s.names[k].startswith("dispersion(")
        ]
        if not candidates:
            if s.spec.q:
                raise ValidationError(
                    "the overdispersion test runs against a null model that "
                    "does not contain the random effect; refit without the "
                    "random_effects declaration and test its dispersion row"
                )
            raise ValidationError(
                "no dispersion rows are archived; monitor one when simulating"
            )
        if len(candidates) > 1:
            raise ValidationError(
                "specify which dispersion row to test; archived rows: "
                + ", ".join(s.names[k] for k in candidates)
            )
        rows = candidates
    else:
        rows = _resolve_rows(s, [row])
    if observed is not None:
        g_est = observed.estimation_vector(s.spec)
        if not np.allclose(g_est, s.g_obs[s.est_slice]):
            raise ValidationError("observed targets disagree with the archived ones")
    gamma, xi, y_obs, y_rep = _orthogonalize(s, rows)
    xi_val = float(xi[0, 0])
    if xi_val <= 0:
        raise CollinearityError(
            f"residual variance of the orthogonalized statistic is {xi_val:.3g}; "
            "the dispersion row is explained exactly by the fitted statistics"
        )
    y = float(y_obs[0])
    y_t = y_rep[:, 0]
    y_bar = float(y_t.mean())
    z = (y - y_bar) / np.sqrt(xi_val)
    p_emp = float(np.mean(y_t >= y))
    return OrthogonalizedTest(
        tested=[s.names[rows[0]]],
        gamma=gamma[0],
        xi=np.array([[xi_val]]),
        y_obs=np.array([y]),
        y_bar=np.array([y_bar]),
        z_obs=float(z),
        p_asymptotic=float(norm.sf(z)),
        p_empirical=p_emp,
        p_empirical_se=_binomial_se(p_emp, y_t.shape[0]),
        replicate_z=(y_t - y_bar) / np.sqrt(xi_val),
        kind="one-sided",
    )


def composite_score_test(
    summaries_null: MonteCarloSummaries,
    observed=None,
    tested=(),
) -> OrthogonalizedTest:
    """Quadratic score-type test of one or more monitored statistics.

    tested names must be archived rows outside the estimation set. With a
    single row this reduces to the square of the one-sided statistic, but
    the p-values are two-sided.
    """
    s = summaries_null
    rows = _resolve_rows(s, list(tested))
    if not rows:
        raise ValidationError("no tested statistics given")
    if observed is not None:
        g_est = observed.estimation_vector(s.spec)
        if not np.allclose(g_est, s.g_obs[s.est_slice]):
            raise ValidationError("observed targets disagree with the archived ones")
    gamma, xi, y_obs, y_rep = _orthogonalize(s, rows)
    p2 = len(rows)
    cond = np.linalg.cond(xi)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise CollinearityError(
            f"residual covariance of the tested block is singular (condition {cond:.3g})"
        )
    xi_inv = np.linalg.inv(xi)
    y_bar = y_rep.mean(axis=0)
    d = y_obs - y_bar
    z2 = float(d @ xi_inv @ d)
    dev = y_rep - y_bar
    q_t = np.einsum("ti,ij,tj->t", dev, xi_inv, dev)
    p_emp = float(np.mean(q_t >= z2))
    return OrthogonalizedTest(
        tested=[s.names[r] for r in rows],
        gamma=gamma,
        xi=xi,
        y_obs=y_obs,
        y_bar=y_bar,
        z_obs=z2,
        p_asymptotic=float(chi2.sf(z2, df=p2)),
        p_empirical=p_emp,
        p_empirical_se=_binomial_se(p_emp, q_t.shape[0]),
        replicate_z=q_t,
        kind="quadratic",
    )


# ---------------------------------------------------------------------------
# parameter selection criterion


def _union_effects(models) -> tuple[list[EffectDef], list[EffectDef]]:
    fixed: dict[tuple, EffectDef] = {}
    rand: dict[tuple, EffectDef] = {}
    for _, spec, _ in models:
        for e in spec.fixed_effects:
            fixed.setdefault(e.key(), e)
        for e in spec.random_effects:
            rand.setdefault(e.key(), e)
    return list(fixed.values()), list(rand.values())


def psc(
    models,
    panel: PanelData,
    T: int = 5000,
    master_seed: int = 0,
    penalty: str = "aic",
    df_mode: str = "n",
    workers: int = 1,
    ridge: float = 0.0,
) -> PscReport:
    """Penalized fit comparison over the union of the models' statistics.

    models is a sequence of (name, spec, fitted parameters). Every model is
    re-simulated at its estimates with a shared replicate seed set and scored
    on the shared statistic vector, so identical models receive identical
    values. The fit term is the squared standardized deviation of the mean
    simulated statistics from the observed ones, scaled by the degrees of
    freedom; models using fewer of the shared statistics earn a penalty
    rebate per unused one.
    """
    models = list(models)
    if not models:
        raise ValidationError("no models to compare")
    n = panel.n_actors
    df_value = float(n) if df_mode == "n" else float(n * (n - 1))
    if df_mode not in ("n", "n(n-1)"):
        raise ValidationError("df_mode must be 'n' or 'n(n-1)'")
    if penalty == "aic":
        pen = 2.0
    elif penalty == "bic":
        pen = float(np.log(df_value))
    else:
        raise ValidationError("penalty must be 'aic' or 'bic'")
    union_fixed, union_random = _union_effects(models)
    p0 = 1 + len(union_fixed)
    q0 = len(union_random)
    names = (
        ["rate"]
        + [e.label for e in union_fixed]
        + [f"dispersion({e.label})" for e in union_random]
    )
    # observed shared statistics
    obs_parts = [np.array([float(hamming_distance(panel.wave1, panel.wave2))])]
    if union_fixed:
        obs_parts.append(
            actor_statistics(panel.wave2, tuple(union_fixed), panel.actor_covariates).sum(axis=0)
        )
    for e in union_random:
        r = actor_statistics(panel.wave2, (e,), panel.actor_covariates)[:, 0]
        obs_parts.append(np.array([float(np.sum((r - r.mean()) ** 2))]))
    g0_obs = np.concatenate(obs_parts)

    entries = []
    for name, spec, pp in models:
        fixed_keys = {e.key() for e in spec.fixed_effects}
        missing = tuple(e for e in union_fixed if e.key() not in fixed_keys)
        summ = phase3(
            spec,
            panel,
            pp,
            T=T,
            master_seed=master_seed,
            workers=workers,
            monitor=MonitorPlan(
                extra_effects=missing,
                extra_dispersion=tuple(union_random),
                aux_max_bin=0,
            ),
            phase=PHASE_PSC,
        )
        idx = [0]
        for e in union_fixed:
            if e.key() in fixed_keys:
                idx.append(1 + [f.key() for f in spec.fixed_effects].index(e.key()))
            else:
                idx.append(summ.row_index(e.label))
        for e in union_random:
            idx.append(summ.row_index(f"dispersion({e.label})"))
        rows = summ.rows[:, idx]
        m = rows.mean(axis=0)
        dev_rep = rows - m
        V0 = dev_rep.T @ dev_rep / rows.shape[0]
        if ridge > 0 or np.linalg.cond(V0) > 1e12:
            bump = ridge if ridge > 0 else 1e-8 * np.trace(V0) / V0.shape[0]
            log.warning("shared-statistic covariance ridged by %.3g for %s", bump, name)
            V0 = V0 + bump * np.eye(V0.shape[0])
        sol = np.linalg.solve(V0, m - g0_obs)
        fit = df_value * float((m - g0_obs) @ sol)
        mean_quad = float(
            np.mean(np.einsum("ti,ij,tj->t", rows - g0_obs, np.linalg.inv(V0), rows - g0_obs))
        )
        n_theta = 1 + spec.p
        n_var = spec.q_star
        pen_term = (p0 - n_theta + q0 - n_var) * pen
        entries.append(
            PscModelEntry(
                name=name,
                fit=fit,
                penalty=pen_term,
                psc=fit - pen_term,
                n_theta=n_theta,
                n_variance=n_var,
                mean_replicate_quadratic=mean_quad,
            )
        )
    return PscReport(
        entries=entries,
        statistic_names=names,
        g0_observed=g0_obs,
        penalty_kind=penalty,
        df_value=df_value,
    )


# ---------------------------------------------------------------------------
# goodness of fit


def gof(
    summaries: MonteCarloSummaries,
    observed_aux: np.ndarray | None = None,
    ridge: float = 0.2,
) -> GofReport:
    """Squared standardized distance of the auxiliary statistic, with p-value.

    The auxiliary covariance is regularized by adding the ridge to its
    diagonal; bins that never vary would otherwise make it singular. The
    p-value is the fraction of simulated distances at least as large as the
    observed one.
    """
    aux = summaries.aux_slice
    if summaries.aux_dim == 0:
        raise ValidationError("archive carries no auxiliary rows")
    rows = summaries.rows[:, aux]
    a_obs = (
        np.asarray(observed_aux, dtype=np.float64)
        if observed_aux is not None
        else summaries.g_obs[aux]
    )
    if a_obs.shape != (summaries.aux_dim,):
        raise ValidationError("observed auxiliary statistic has the wrong length")
    a_bar = rows.mean(axis=0)
    dev = rows - a_bar
    omega = dev.T @ dev / rows.shape[0] + ridge * np.eye(summaries.aux_dim)
    cond = np.linalg.cond(omega)
    if not np.isfinite(cond) or cond > 1e12:
        raise CollinearityError(
            f"auxiliary covariance is singular even after the ridge (condition {cond:.3g})"
        )
    omega_inv = np.linalg.inv(omega)
    distances = np.einsum("ti,ij,tj->t", dev, omega_inv, dev)
    d = a_obs - a_bar
    d_obs = float(d @ omega_inv @ d)
    return GofReport(
        a_obs=a_obs,
        a_bar=a_bar,
        omega=omega,
        d_obs=d_obs,
        distances=distances,
        p_value=float(np.mean(distances >= d_obs)),
        ridge=ridge,
    )
