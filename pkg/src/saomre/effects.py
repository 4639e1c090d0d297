"""Effect statistics, model specification, and observed targets.

An effect maps (network, actor) to a count s_ik(x). Fixed effects carry a
shared coefficient beta_k, random effects an actor-specific coefficient
b_ih ~ N(0, Sigma). The same effect may appear in both lists, which is how
an actor-varying out-degree preference sits on top of the shared density
term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .networks import Network, PanelData, hamming_distance

EFFECT_KINDS = (
    "out_degree",
    "reciprocity",
    "transitive_triplets",
    "out_degree_activity",
    "covariate_alter",
    "covariate_ego",
    "covariate_similarity",
)
# integer codes for the compiled simulation kernel
KIND_CODE = {name: k for k, name in enumerate(EFFECT_KINDS)}
_COVARIATE_KINDS = frozenset(
    ("covariate_alter", "covariate_ego", "covariate_similarity")
)

VARIANCE_MODELS = ("scalar", "diagonal", "unrestricted")


@dataclass(frozen=True)
class EffectDef:
    kind: str
    covariate: str | None = None
    role: str = "fixed"

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise ValidationError(f"unknown effect kind {self.kind!r}")
        if self.kind in _COVARIATE_KINDS and not self.covariate:
            raise ValidationError(f"effect {self.kind!r} needs a covariate name")
        if self.kind not in _COVARIATE_KINDS and self.covariate:
            raise ValidationError(f"effect {self.kind!r} takes no covariate")
        if self.role not in ("fixed", "random", "both"):
            raise ValidationError(f"unknown effect role {self.role!r}")

    @property
    def label(self) -> str:
        if self.covariate:
            return f"{self.kind}({self.covariate})"
        return self.kind

    def key(self) -> tuple:
        return (self.kind, self.covariate)


@dataclass(frozen=True)
class ModelSpec:
    """Declared effects and the variance structure of the random part."""

    fixed_effects: tuple[EffectDef, ...]
    random_effects: tuple[EffectDef, ...] = ()
    variance_model: str | None = None
    rate: str = "basic"

    def __post_init__(self):
        object.__setattr__(self, "fixed_effects", tuple(self.fixed_effects))
        object.__setattr__(self, "random_effects", tuple(self.random_effects))
        if self.rate != "basic":
            raise ValidationError("only the basic single-rate model is supported")
        if len(self.fixed_effects) < 1:
            raise ValidationError("at least one fixed effect is required")
        if not any(e.kind == "out_degree" for e in self.fixed_effects):
            raise ValidationError("fixed effects must include out_degree (density)")
        for effs in (self.fixed_effects, self.random_effects):
            keys = [e.key() for e in effs]
            if len(set(keys)) != len(keys):
                raise ValidationError("duplicate effect in the same role list")
        q = len(self.random_effects)
        if q == 0:
            if self.variance_model is not None:
                raise ValidationError("variance_model requires at least one random effect")
        else:
            if self.variance_model not in VARIANCE_MODELS:
                raise ValidationError(
                    f"variance_model must be one of {VARIANCE_MODELS} when q >= 1"
                )
            if self.variance_model == "unrestricted" and q < 2:
                raise ValidationError("unrestricted variance requires q >= 2")

    @property
    def p(self) -> int:
        return len(self.fixed_effects)

    @property
    def q(self) -> int:
        return len(self.random_effects)

    @property
    def q_star(self) -> int:
        """Number of dispersion statistics carried by the variance model."""
        if self.q == 0:
            return 0
        if self.variance_model == "scalar":
            return 1
        if self.variance_model == "diagonal":
            return self.q
        return self.q * (self.q + 1) // 2

    @property
    def all_effects(self) -> tuple[EffectDef, ...]:
        return self.fixed_effects + self.random_effects

    def covariate_names(self) -> set[str]:
        return {e.covariate for e in self.all_effects if e.covariate}

    def validate_against(self, panel: PanelData) -> None:
        missing = self.covariate_names() - set(panel.actor_covariates)
        if missing:
            raise ValidationError(f"covariates not in panel: {sorted(missing)}")

    def statistic_names(self) -> list[str]:
        """Row labels of the estimation statistic vector (rate first)."""
        names = ["rate"] + [e.label for e in self.fixed_effects]
        if self.q == 0:
            return names
        if self.variance_model == "scalar":
            names.append("dispersion")
        elif self.variance_model == "diagonal":
            names += [f"dispersion({e.label})" for e in self.random_effects]
        else:
            labels = [e.label for e in self.random_effects]
            for h in range(self.q):
                for g in range(h + 1):
                    names.append(f"dispersion({labels[h]},{labels[g]})")
        return names

    def parameter_names(self) -> list[str]:
        names = ["rate"] + [e.label for e in self.fixed_effects]
        if self.q == 0:
            return names
        if self.variance_model == "scalar":
            names.append("variance")
        elif self.variance_model == "diagonal":
            names += [f"variance({e.label})" for e in self.random_effects]
        else:
            labels = [e.label for e in self.random_effects]
            for h in range(self.q):
                for g in range(h + 1):
                    names.append(f"covariance({labels[h]},{labels[g]})")
        return names


def similarity_mean(v: np.ndarray) -> float:
    """Mean of 1 - |v_i - v_j| over all ordered pairs i != j."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    if n < 2:
        raise ValidationError("similarity needs at least two actors")
    diffs = np.abs(v[:, None] - v[None, :])
    total = (1.0 - diffs).sum() - n  # drop the n diagonal terms, each 1 - 0
    return float(total / (n * (n - 1)))


def actor_statistics(
    x: Network, effects: tuple[EffectDef, ...], cov: dict[str, np.ndarray]
) -> np.ndarray:
    """All per-actor effect statistics at once; column k is effect k, row i actor i."""
    t = x.ties.astype(np.float64)
    n = x.n_actors
    out = t.sum(axis=1)
    cols = np.empty((n, len(effects)), dtype=np.float64)
    tt_row = None
    for k, e in enumerate(effects):
        if e.kind == "out_degree":
            cols[:, k] = out
        elif e.kind == "reciprocity":
            cols[:, k] = (t * t.T).sum(axis=1)
        elif e.kind == "transitive_triplets":
            if tt_row is None:
                tt_row = (t * (t @ t)).sum(axis=1)
            cols[:, k] = tt_row
        elif e.kind == "out_degree_activity":
            cols[:, k] = out**2
        elif e.kind == "covariate_alter":
            cols[:, k] = t @ cov[e.covariate]
        elif e.kind == "covariate_ego":
            cols[:, k] = cov[e.covariate] * out
        elif e.kind == "covariate_similarity":
            v = cov[e.covariate]
            sim = 1.0 - np.abs(v[:, None] - v[None, :])
            cols[:, k] = (t * (sim - similarity_mean(v))).sum(axis=1)
        else:  # pragma: no cover - kinds validated at construction
            raise ValidationError(f"unknown effect kind {e.kind!r}")
    return cols


def effect_value(e: EffectDef, x: Network, i: int, cov: dict[str, np.ndarray] | None = None) -> float:
    """Statistic s_ik(x) of one effect for one actor."""
    if not 0 <= i < x.n_actors:
        raise ValidationError(f"actor index {i} out of range")
    if e.covariate and (cov is None or e.covariate not in cov):
        raise ValidationError(f"missing covariate {e.covariate!r}")
    return float(actor_statistics(x, (e,), cov or {})[i, 0])


def evaluation_function(
    x: Network,
    i: int,
    beta: np.ndarray,
    b_i: np.ndarray,
    spec: ModelSpec,
    cov: dict[str, np.ndarray],
) -> float:
    """f_i(x) = sum_k beta_k s_ik(x) + sum_h b_ih r_ih(x)."""
    beta = np.asarray(beta, dtype=np.float64)
    b_i = np.asarray(b_i, dtype=np.float64)
    if beta.shape != (spec.p,):
        raise ValidationError(f"beta must have length {spec.p}")
    if b_i.shape != (spec.q,):
        raise ValidationError(f"b_i must have length {spec.q}")
    stats = actor_statistics(x, spec.all_effects, cov)[i]
    return float(stats[: spec.p] @ beta + stats[spec.p :] @ b_i)


def dispersion_matrix(r: np.ndarray) -> np.ndarray:
    """W = sum_i (r_i - rbar)(r_i - rbar)^T over actor rows of r."""
    dev = r - r.mean(axis=0, keepdims=True)
    return dev.T @ dev


def dispersion_from_matrix(W: np.ndarray, variance_model: str) -> np.ndarray:
    """Reduce the dispersion matrix to the statistic vector of the variance model."""
    if variance_model == "scalar":
        return np.array([np.trace(W)])
    if variance_model == "diagonal":
        return np.diagonal(W).copy()
    q = W.shape[0]
    return np.array([W[h, g] for h in range(q) for g in range(h + 1)])


@dataclass(frozen=True)
class TargetStatistics:
    """Observed moment targets: fixed-effect totals, dispersion matrix, tie changes."""

    s: np.ndarray
    W: np.ndarray | None
    rate_target: int

    def estimation_vector(self, spec: ModelSpec) -> np.ndarray:
        """Targets ordered like the simulated statistics: rate, fixed, dispersion."""
        parts = [np.array([float(self.rate_target)]), self.s]
        if spec.q > 0:
            parts.append(dispersion_from_matrix(self.W, spec.variance_model))
        return np.concatenate(parts)


def target_statistics(panel: PanelData, spec: ModelSpec) -> TargetStatistics:
    """Observed targets from wave 2, with the tie-change count as rate target."""
    spec.validate_against(panel)
    stats2 = actor_statistics(panel.wave2, spec.all_effects, panel.actor_covariates)
    s = stats2[:, : spec.p].sum(axis=0)
    W = dispersion_matrix(stats2[:, spec.p :]) if spec.q > 0 else None
    return TargetStatistics(
        s=s, W=W, rate_target=hamming_distance(panel.wave1, panel.wave2)
    )


@dataclass(frozen=True)
class EffectTable:
    """Effects compiled to flat arrays for the simulation kernel.

    kinds[k] is the integer code, covs[k] the covariate vector (zeros when
    the effect takes none), simbar[k] the similarity centering constant.
    """

    kinds: np.ndarray
    covs: np.ndarray
    simbar: np.ndarray
    n_fixed: int
    n_random: int

    @property
    def n_effects(self) -> int:
        return self.kinds.shape[0]


def build_effect_table(
    effects: tuple[EffectDef, ...],
    cov: dict[str, np.ndarray],
    n: int,
    n_fixed: int,
) -> EffectTable:
    m = len(effects)
    kinds = np.zeros(m, dtype=np.int64)
    covs = np.zeros((m, n), dtype=np.float64)
    simbar = np.zeros(m, dtype=np.float64)
    for k, e in enumerate(effects):
        kinds[k] = KIND_CODE[e.kind]
        if e.covariate:
            v = np.asarray(cov[e.covariate], dtype=np.float64)
            if v.shape != (n,):
                raise ValidationError(f"covariate {e.covariate!r} has wrong length")
            covs[k] = v
            if e.kind == "covariate_similarity":
                simbar[k] = similarity_mean(v)
    return EffectTable(
        kinds=kinds, covs=covs, simbar=simbar, n_fixed=n_fixed, n_random=m - n_fixed
    )


def spec_effect_table(spec: ModelSpec, panel: PanelData) -> EffectTable:
    spec.validate_against(panel)
    return build_effect_table(
        spec.all_effects, panel.actor_covariates, panel.n_actors, spec.p
    )
