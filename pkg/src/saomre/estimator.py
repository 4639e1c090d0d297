"""Three-phase simulated method-of-moments estimation.

Phase 1 estimates a preconditioning derivative matrix at the starting point.
Phase 2 runs stochastic-approximation subphases with shrinking gains, a
floor on variance parameters, and tail averaging. Phase 3 simulates the
fitted model many times to deliver moment means, their covariance, the
derivative matrix from accumulated scores, and a per-replicate archive for
empirical p-values.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .effects import (
    EffectDef,
    ModelSpec,
    TargetStatistics,
    actor_statistics,
    dispersion_from_matrix,
    spec_effect_table,
    target_statistics,
)
from .engine import (
    ParameterPoint,
    out_degree_distribution,
    point_from_vector,
    simulate_period,
)
from .errors import CollinearityError, DegeneracyError, DivergenceError, ValidationError
from .networks import PanelData, hamming_distance
from .streams import PHASE_COVARIANCE, PHASE_ESTIMATE, PHASE_PRECONDITION, replicate_seed

log = logging.getLogger(__name__)

COND_LIMIT = 1e8


@dataclass(frozen=True)
class Phase2Schedule:
    """Iteration counts, averaging windows, and gains of the update phase."""

    subphase_lengths: tuple[int, ...] = (100, 100, 200, 1700)
    tail_lengths: tuple[int, ...] = (20, 40, 80, 1500)
    initial_gain_theta: float = 0.2
    initial_gain_sigma: float | None = None  # None: matched to the first theta step
    gain_reduction: float = 0.5
    sigma_min: float = 1e-4

    def __post_init__(self):
        if len(self.subphase_lengths) != len(self.tail_lengths):
            raise ValidationError("subphase and tail lists must have equal length")
        if not self.subphase_lengths:
            raise ValidationError("at least one subphase is required")
        for L, t in zip(self.subphase_lengths, self.tail_lengths):
            if t < 1 or t > L:
                raise ValidationError("tail window must be within its subphase length")
        if not 0 < self.gain_reduction < 1:
            raise ValidationError("gain_reduction must be in (0, 1)")
        if self.initial_gain_theta <= 0 or self.sigma_min <= 0:
            raise ValidationError("gains and the variance floor must be positive")

    @property
    def total_iterations(self) -> int:
        return int(sum(self.subphase_lengths))


@dataclass(frozen=True)
class MonitorPlan:
    """Statistics tracked in Phase 3 beyond the estimation ones.

    extra_effects are whole-network totals of effects outside the model
    (the rows score tests for omitted effects consume), extra_dispersion
    adds sum-of-squared-deviation rows of per-actor statistics, and the
    auxiliary block is the out-degree distribution used for fit checks.
    extra_dispersion=None picks the default: the out-degree dispersion row
    for models without random effects, nothing otherwise.
    """

    extra_effects: tuple[EffectDef, ...] = ()
    extra_dispersion: tuple[EffectDef, ...] | None = None
    aux_max_bin: int = 20

    def resolved_dispersion(self, spec: ModelSpec) -> tuple[EffectDef, ...]:
        if self.extra_dispersion is not None:
            return tuple(self.extra_dispersion)
        if spec.q == 0:
            return (EffectDef("out_degree"),)
        return ()


@dataclass
class EstimationResult:
    theta_hat: ParameterPoint
    chain: np.ndarray
    converged: bool = False
    t_ratios: np.ndarray | None = None
    tmax: float | None = None
    param_names: list[str] = field(default_factory=list)


@dataclass
class MonteCarloSummaries:
    """Phase-3 archive: moment summaries plus the per-replicate rows."""

    m_bar: np.ndarray
    V_hat: np.ndarray
    D_hat: np.ndarray
    rows: np.ndarray
    T: int
    names: list[str]
    param_names: list[str]
    g_obs: np.ndarray
    est_dim: int
    extra_dim: int
    aux_dim: int
    n_aborted: int
    theta: ParameterPoint
    spec: ModelSpec

    @property
    def est_slice(self) -> slice:
        return slice(0, self.est_dim)

    @property
    def extra_slice(self) -> slice:
        return slice(self.est_dim, self.est_dim + self.extra_dim)

    @property
    def aux_slice(self) -> slice:
        return slice(self.est_dim + self.extra_dim, self.est_dim + self.extra_dim + self.aux_dim)

    def row_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(
                f"statistic {name!r} is not archived; available: {self.names}"
            ) from None


@dataclass
class ConvergenceReport:
    t_ratios: np.ndarray
    tmax: float
    converged: bool
    degenerate: list[str]


def project_pd(M: np.ndarray, floor: float) -> np.ndarray:
    """Nearest symmetric matrix with all eigenvalues at or above the floor."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 0:
        return np.maximum(M, floor)
    if M.ndim == 1:
        return np.maximum(M, floor)
    sym = (M + M.T) / 2.0
    w, Q = np.linalg.eigh(sym)
    if w.min() >= floor:
        return sym
    w = np.maximum(w, floor)
    out = (Q * w) @ Q.T
    return (out + out.T) / 2.0


# ---------------------------------------------------------------------------
# replicate batches shared by Phases 1 and 3


def _observed_monitor_rows(
    panel: PanelData,
    extra_effects: tuple[EffectDef, ...],
    extra_dispersion: tuple[EffectDef, ...],
    aux_max_bin: int,
) -> np.ndarray:
    parts = []
    if extra_effects:
        parts.append(
            actor_statistics(panel.wave2, extra_effects, panel.actor_covariates).sum(axis=0)
        )
    for e in extra_dispersion:
        r = actor_statistics(panel.wave2, (e,), panel.actor_covariates)[:, 0]
        parts.append(np.array([float(np.sum((r - r.mean()) ** 2))]))
    if aux_max_bin:
        parts.append(out_degree_distribution(panel.wave2, aux_max_bin))
    if not parts:
        return np.empty(0)
    return np.concatenate(parts)


def _batch(args):
    """Simulate a block of replicates; one statistic row and one score row each.

    Aborted replicates (degeneracy guard) come back as NaN rows and are
    dropped by the caller.
    """
    (spec, panel, pp, master_seed, phase, lo, hi, extra_effects, extra_dispersion, aux_max_bin) = args
    table = spec_effect_table(spec, panel)
    n_sigma = spec.q_star
    n_extra = len(extra_effects) + len(extra_dispersion)
    n_aux = (aux_max_bin + 1) if aux_max_bin else 0
    width = 1 + spec.p + n_sigma + n_extra + n_aux
    rows = np.full((hi - lo, width), np.nan)
    ls = np.full((hi - lo, 1 + spec.p + n_sigma), np.nan)
    aborted = np.zeros(hi - lo, dtype=bool)
    for t in range(lo, hi):
        seed = replicate_seed(master_seed, phase, t)
        try:
            sim = simulate_period(
                panel.wave1, pp, spec, panel.actor_covariates, seed, table=table
            )
        except DegeneracyError:
            aborted[t - lo] = True
            continue
        parts = [sim.g_hat]
        if extra_effects:
            parts.append(
                actor_statistics(
                    sim.end_network, extra_effects, panel.actor_covariates
                ).sum(axis=0)
            )
        for e in extra_dispersion:
            r = actor_statistics(sim.end_network, (e,), panel.actor_covariates)[:, 0]
            parts.append(np.array([float(np.sum((r - r.mean()) ** 2))]))
        if aux_max_bin:
            parts.append(out_degree_distribution(sim.end_network, aux_max_bin))
        rows[t - lo] = np.concatenate(parts)
        ls[t - lo] = sim.scores.stacked(n_sigma)
    return rows, ls, aborted


def _run_replicates(
    spec: ModelSpec,
    panel: PanelData,
    pp: ParameterPoint,
    n_rep: int,
    master_seed: int,
    phase: int,
    workers: int = 1,
    extra_effects: tuple[EffectDef, ...] = (),
    extra_dispersion: tuple[EffectDef, ...] = (),
    aux_max_bin: int = 0,
):
    """Rows and score rows for n_rep seeded replicates, in index order."""
    n_chunks = 1 if workers <= 1 else workers * 4
    bounds = np.linspace(0, n_rep, n_chunks + 1).astype(int)
    payloads = [
        (spec, panel, pp, master_seed, phase, int(lo), int(hi), extra_effects, extra_dispersion, aux_max_bin)
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    if workers <= 1:
        results = [_batch(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_batch, payloads))
    rows = np.concatenate([r[0] for r in results], axis=0)
    ls = np.concatenate([r[1] for r in results], axis=0)
    aborted = np.concatenate([r[2] for r in results], axis=0)
    keep = ~aborted
    return rows[keep], ls[keep], int(aborted.sum())


# ---------------------------------------------------------------------------
# Phase 1


def phase1_precondition(
    spec: ModelSpec,
    panel: PanelData,
    pp0: ParameterPoint,
    n1: int = 200,
    master_seed: int = 0,
    workers: int = 1,
    ridge_factor: float = 0.05,
) -> np.ndarray:
    """Inverse derivative estimate for the rate and fixed-coefficient block.

    The derivative is the score-product estimator centered at the replicate
    mean; both centerings are unbiased (scores have mean zero), the mean
    keeps the variance down at starting points far from the solution.
    """
    if n1 < 50:
        raise ValidationError("preconditioning needs at least 50 replicates")
    rows, ls, n_aborted = _run_replicates(
        spec, panel, pp0, n1, master_seed, PHASE_PRECONDITION, workers=workers
    )
    if rows.shape[0] < n1 * 0.9:
        raise DegeneracyError(
            f"{n_aborted} of {n1} preconditioning replicates hit the change cap"
        )
    dim = 1 + spec.p
    g = rows[:, :dim]
    l_theta = ls[:, :dim]
    D0 = (g - g.mean(axis=0)).T @ l_theta / rows.shape[0]
    if np.linalg.cond(D0) > COND_LIMIT:
        log.warning("preconditioning matrix ill-conditioned; adding diagonal ridge")
        D0 = D0 + ridge_factor * np.diag(np.diag(D0))
        if np.linalg.cond(D0) > COND_LIMIT:
            raise CollinearityError(
                "preconditioning matrix is singular even after ridging; "
                "the declared effects carry near-identical information"
            )
    return np.linalg.inv(D0)


# ---------------------------------------------------------------------------
# Phase 2


def _sigma_update(
    spec: ModelSpec,
    sigma: np.ndarray,
    dev_w: np.ndarray,
    zeta: float,
    floor: float,
) -> np.ndarray:
    if spec.variance_model in ("scalar", "diagonal"):
        return np.maximum(sigma - zeta * dev_w, floor)
    q = spec.q
    dev = np.zeros((q, q))
    pos = 0
    for h in range(q):
        for g in range(h + 1):
            dev[h, g] = dev[g, h] = dev_w[pos]
            pos += 1
    return project_pd(sigma - zeta * dev, floor)


def phase2(
    spec: ModelSpec,
    panel: PanelData,
    pp0: ParameterPoint,
    schedule: Phase2Schedule,
    D0inv: np.ndarray,
    master_seed: int = 0,
    targets: TargetStatistics | None = None,
    divergence_bound: float = 50.0,
    lambda_min: float = 0.01,
) -> EstimationResult:
    """Stochastic-approximation subphases; the final tail average is the estimate."""
    if targets is None:
        targets = target_statistics(panel, spec)
    table = spec_effect_table(spec, panel)
    g_theta = np.concatenate(([float(targets.rate_target)], targets.s))
    w_obs = (
        dispersion_from_matrix(targets.W, spec.variance_model)
        if spec.q
        else np.empty(0)
    )
    n_params = 1 + spec.p + spec.q_star
    chain = np.empty((schedule.total_iterations, n_params))
    pp = pp0
    eps = schedule.initial_gain_theta
    zeta = schedule.initial_gain_sigma
    it = 0

    def diverged(vec) -> bool:
        return (not np.isfinite(vec).all()) or (np.abs(vec) > divergence_bound).any()

    for k, (length, tail) in enumerate(
        zip(schedule.subphase_lengths, schedule.tail_lengths)
    ):
        for _ in range(length):
            seed = replicate_seed(master_seed, PHASE_ESTIMATE, it)
            try:
                sim = simulate_period(
                    panel.wave1, pp, spec, panel.actor_covariates, seed, table=table
                )
            except (DegeneracyError, DivergenceError) as exc:
                exc.chain = chain[:it]
                raise
            dev_theta = sim.g_hat[: 1 + spec.p] - g_theta
            step_theta = eps * (D0inv @ dev_theta)
            theta = pp.theta - step_theta
            theta[0] = max(theta[0], lambda_min)
            sigma = pp.sigma
            if spec.q:
                dev_w = sim.g_hat[1 + spec.p :] - w_obs
                if zeta is None:
                    # match the first variance step to the typical theta step
                    med_theta = float(np.median(np.abs(step_theta)))
                    med_w = float(np.median(np.abs(dev_w)))
                    zeta = med_theta / med_w if med_theta > 0 and med_w > 0 else 0.01
                    log.debug("variance gain set to %.3e", zeta)
                sigma = _sigma_update(spec, pp.sigma, dev_w, zeta, schedule.sigma_min)
            if diverged(theta) or (spec.q and diverged(sigma.ravel())):
                raise DivergenceError(
                    f"parameters left the admissible region at iteration {it}",
                    chain=chain[:it],
                )
            pp = ParameterPoint(lam=theta[0], beta=theta[1:], sigma=sigma)
            chain[it] = pp.as_vector(spec.variance_model)
            it += 1
        avg = chain[it - tail : it].mean(axis=0)
        avg[0] = max(avg[0], lambda_min)
        pp = point_from_vector(avg, spec)
        if spec.variance_model == "unrestricted":
            pp = replace(pp, sigma=project_pd(pp.sigma, schedule.sigma_min))
        eps *= schedule.gain_reduction
        if zeta is not None:
            zeta *= schedule.gain_reduction
    return EstimationResult(
        theta_hat=pp, chain=chain, param_names=spec.parameter_names()
    )


# ---------------------------------------------------------------------------
# Phase 3


def phase3(
    spec: ModelSpec,
    panel: PanelData,
    theta_hat: ParameterPoint,
    T: int = 5000,
    master_seed: int = 0,
    workers: int = 1,
    monitor: MonitorPlan | None = None,
    targets: TargetStatistics | None = None,
    max_abort_fraction: float = 0.01,
    phase: int = PHASE_COVARIANCE,
) -> MonteCarloSummaries:
    """Monte-Carlo summaries at the fitted point, with a per-replicate archive."""
    if T < 100:
        raise ValidationError("the summary phase needs at least 100 replicates")
    if targets is None:
        targets = target_statistics(panel, spec)
    monitor = monitor or MonitorPlan()
    extra_disp = monitor.resolved_dispersion(spec)
    for e in monitor.extra_effects:
        if e.key() in {f.key() for f in spec.fixed_effects}:
            raise ValidationError(
                f"monitored effect {e.label} is already estimated by the model"
            )
    rows, ls, n_aborted = _run_replicates(
        spec,
        panel,
        theta_hat,
        T,
        master_seed,
        phase,
        workers=workers,
        extra_effects=monitor.extra_effects,
        extra_dispersion=extra_disp,
        aux_max_bin=monitor.aux_max_bin,
    )
    if n_aborted > max(max_abort_fraction * T, 0):
        raise DegeneracyError(
            f"{n_aborted} of {T} replicates hit the change cap; "
            "the fitted parameters degenerate"
        )
    kept = rows.shape[0]
    est_dim = 1 + spec.p + spec.q_star
    extra_dim = len(monitor.extra_effects) + len(extra_disp)
    aux_dim = (monitor.aux_max_bin + 1) if monitor.aux_max_bin else 0
    names = spec.statistic_names()
    names += [e.label for e in monitor.extra_effects]
    names += [f"dispersion({e.label})" for e in extra_disp]
    names += [f"outdeg_prop_{k}" for k in range(aux_dim)]
    g_obs = np.concatenate(
        [
            targets.estimation_vector(spec),
            _observed_monitor_rows(panel, monitor.extra_effects, extra_disp, monitor.aux_max_bin),
        ]
    )
    m_bar = rows.mean(axis=0)
    dev = rows - m_bar
    V_hat = dev.T @ dev / kept
    D_hat = (rows - g_obs).T @ ls / kept
    return MonteCarloSummaries(
        m_bar=m_bar,
        V_hat=V_hat,
        D_hat=D_hat,
        rows=rows,
        T=kept,
        names=names,
        param_names=spec.parameter_names(),
        g_obs=g_obs,
        est_dim=est_dim,
        extra_dim=extra_dim,
        aux_dim=aux_dim,
        n_aborted=n_aborted,
        theta=theta_hat,
        spec=spec,
    )


def _mahalanobis_sq(dev: np.ndarray, V: np.ndarray) -> float:
    """Quadratic form through the eigensystem; infinite along null directions."""
    w, Q = np.linalg.eigh((V + V.T) / 2.0)
    proj = Q.T @ dev
    tol = V.shape[0] * np.finfo(np.float64).eps * max(float(w.max()), 0.0)
    total = 0.0
    scale = max(float(np.linalg.norm(dev)), 1.0)
    for wi, ci in zip(w, proj):
        if wi <= tol:
            if abs(ci) > 1e-10 * scale:
                return float("inf")
        else:
            total += ci * ci / wi
    return total


def convergence_check(
    summaries: MonteCarloSummaries,
    targets: TargetStatistics | None = None,
    per_stat_limit: float = 0.1,
    overall_limit: float = 0.25,
) -> ConvergenceReport:
    """Moment-match diagnostics over the estimation statistics.

    Converged means every per-statistic ratio (mean deviation over simulated
    standard deviation) is below 0.1 and the overall standardized deviation,
    which whitens by the full simulated covariance, is below 0.25. The
    whitened form is what blows up when statistics are nearly collinear.
    """
    est = summaries.est_slice
    g = (
        targets.estimation_vector(summaries.spec)
        if targets is not None
        else summaries.g_obs[est]
    )
    dev = summaries.m_bar[est] - g
    var = np.diagonal(summaries.V_hat[est, est])
    degenerate = [
        summaries.names[k] for k in range(summaries.est_dim) if var[k] <= 0
    ]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ratios = np.where(var > 0, dev / np.sqrt(var), np.where(dev == 0, 0.0, np.inf))
    tmax = float(np.sqrt(_mahalanobis_sq(dev, summaries.V_hat[est, est])))
    converged = (
        not degenerate
        and bool(np.all(np.abs(t_ratios) < per_stat_limit))
        and tmax < overall_limit
    )
    return ConvergenceReport(
        t_ratios=t_ratios, tmax=tmax, converged=converged, degenerate=degenerate
    )


# ---------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class EstimationSettings:
    schedule: Phase2Schedule = Phase2Schedule()
    phase1_replicates: int = 200
    phase3_replicates: int = 5000
    warm_start: bool = True
    workers: int = 1
    monitor: MonitorPlan | None = None
    collinearity_tmax: float = 2.0


def default_starting_point(panel: PanelData, spec: ModelSpec, sigma_min: float) -> ParameterPoint:
    """Rate from the observed change count, density coefficient from wave 2."""
    n = panel.n_actors
    ham = hamming_distance(panel.wave1, panel.wave2)
    lam0 = max(2.0 * ham / n, 0.5)
    beta = np.zeros(spec.p)
    density = panel.wave2.ties.sum() / (n * (n - 1))
    density = min(max(density, 1e-6), 1 - 1e-6)
    logit = float(np.log(density / (1 - density)))
    for k, e in enumerate(spec.fixed_effects):
        if e.kind == "out_degree":
            beta[k] = min(max(logit, -4.0), -0.1)
    sigma = None
    if spec.q:
        if spec.variance_model == "scalar":
            sigma = np.array([sigma_min])
        elif spec.variance_model == "diagonal":
            sigma = np.full(spec.q, sigma_min)
        else:
            sigma = sigma_min * np.eye(spec.q)
    return ParameterPoint(lam=lam0, beta=beta, sigma=sigma)


def _derived_seed(master_seed: int, tag: int) -> int:
    return int(
        np.random.SeedSequence(master_seed, spawn_key=(99, tag)).generate_state(
            1, np.uint64
        )[0]
    )


def estimate(
    spec: ModelSpec,
    panel: PanelData,
    settings: EstimationSettings | None = None,
    master_seed: int = 0,
    pp0: ParameterPoint | None = None,
) -> tuple[EstimationResult, MonteCarloSummaries]:
    """Run the full pipeline and attach convergence diagnostics.

    Models with random effects are warm-started from the corresponding
    fixed-effects fit with the variance at its floor, unless a starting
    point is supplied. A finished but badly non-converged run whose
    whitened deviation explodes is reported as a collinearity failure,
    with the parameter chain attached for inspection.
    """
    settings = settings or EstimationSettings()
    spec.validate_against(panel)
    targets = target_statistics(panel, spec)
    sched = settings.schedule
    if pp0 is None:
        pp0 = default_starting_point(panel, spec, sched.sigma_min)
        if spec.q and settings.warm_start:
            reduced = ModelSpec(fixed_effects=spec.fixed_effects)
            pre_seed = _derived_seed(master_seed, 1)
            d0 = phase1_precondition(
                reduced, panel, ParameterPoint(pp0.lam, pp0.beta),
                settings.phase1_replicates, pre_seed, workers=settings.workers,
            )
            warm = phase2(reduced, panel, ParameterPoint(pp0.lam, pp0.beta), sched, d0, pre_seed)
            pp0 = replace(pp0, lam=warm.theta_hat.lam, beta=warm.theta_hat.beta)
    D0inv = phase1_precondition(
        spec, panel, pp0, settings.phase1_replicates, master_seed,
        workers=settings.workers,
    )
    result = phase2(spec, panel, pp0, sched, D0inv, master_seed, targets=targets)
    summaries = phase3(
        spec,
        panel,
        result.theta_hat,
        settings.phase3_replicates,
        master_seed,
        workers=settings.workers,
        monitor=settings.monitor,
        targets=targets,
    )
    conv = convergence_check(summaries, targets)
    result.converged = conv.converged
    result.t_ratios = conv.t_ratios
    result.tmax = conv.tmax
    if not conv.converged:
        est = summaries.est_slice
        v_cond = float(np.linalg.cond(summaries.V_hat[est, est]))
        if not np.isfinite(conv.tmax) or conv.tmax > settings.collinearity_tmax or v_cond > COND_LIMIT:
            err = CollinearityError(
                "estimation did not converge: the simulated statistics are "
                f"nearly collinear (overall deviation {conv.tmax:.3g}, "
                f"covariance condition {v_cond:.3g})",
                chain=result.chain,
            )
            err.result = result
            err.summaries = summaries
            raise err
        log.warning(
            "estimation finished without reaching the convergence thresholds "
            "(max |t| %.3f, overall %.3f)",
            float(np.nanmax(np.abs(conv.t_ratios))),
            conv.tmax,
        )
    return result, summaries
