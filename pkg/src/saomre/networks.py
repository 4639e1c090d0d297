"""Panel-network data structures and elementary queries.

Networks are directed binary adjacency matrices with a zero diagonal,
treated as immutable values: every mutation goes through apply_candidate,
which returns a fresh object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Network:
    """Directed binary network; ties[i, j] = 1 means i sends a tie to j."""

    ties: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.ties)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValidationError(f"adjacency matrix must be square, got shape {t.shape}")
        if not ((t == 0) | (t == 1)).all():
            raise ValidationError("adjacency entries must be 0 or 1")
        if np.any(np.diagonal(t) != 0):
            raise ValidationError("adjacency diagonal must be zero")
        object.__setattr__(self, "ties", np.ascontiguousarray(t, dtype=np.int8))

    @property
    def n_actors(self) -> int:
        return self.ties.shape[0]

    def out_degrees(self) -> np.ndarray:
        return self.ties.sum(axis=1, dtype=np.int64)

    def copy_ties(self) -> np.ndarray:
        return self.ties.copy()

    def __eq__(self, other) -> bool:
        return isinstance(other, Network) and np.array_equal(self.ties, other.ties)


@dataclass(frozen=True)
class Candidate:
    """One move available to a focal actor: toggle tie to `target`, or None for no change."""

    target: int | None

    @property
    def is_toggle(self) -> bool:
        return self.target is not None


NO_CHANGE = Candidate(None)


@dataclass(frozen=True)
class PanelData:
    """Two observed waves plus named actor covariates."""

    wave1: Network
    wave2: Network
    actor_covariates: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.wave1.n_actors
        if self.wave2.n_actors != n:
            raise ValidationError(
                f"wave sizes differ: {n} vs {self.wave2.n_actors}"
            )
        covs = {}
        for name, v in self.actor_covariates.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != n:
                raise ValidationError(
                    f"covariate {name!r} must be a length-{n} vector, got shape {arr.shape}"
                )
            if not np.isfinite(arr).all():
                raise ValidationError(f"covariate {name!r} contains non-finite values")
            covs[name] = arr
        object.__setattr__(self, "actor_covariates", covs)

    @property
    def n_actors(self) -> int:
        return self.wave1.n_actors


def _read_matrix(path) -> np.ndarray:
    try:
        m = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"cannot parse matrix in {path}: {exc}") from exc
    return m


def load_panel(wave1_path, wave2_path, covariate_paths: dict | None = None) -> PanelData:
    """Load two adjacency matrices and optional covariate vectors from text files.

    Matrices are whitespace-separated 0/1 values, one row per line; covariates
    one value per line. A nonzero diagonal is zeroed with a warning instead of
    rejected, since exported data sometimes carries stray self-loops.
    """
    waves = []
    for path in (wave1_path, wave2_path):
        m = _read_matrix(path)
        if m.shape[0] != m.shape[1]:
            raise ValidationError(f"{path}: matrix is {m.shape[0]}x{m.shape[1]}, not square")
        if not np.isin(m, (0.0, 1.0)).all():
            bad = m[~np.isin(m, (0.0, 1.0))][0]
            raise ValidationError(f"{path}: non-binary entry {bad!r}")
        if np.any(np.diagonal(m) != 0):
            log.warning("%s: nonzero diagonal entries zeroed", path)
            np.fill_diagonal(m, 0.0)
        waves.append(Network(m.astype(np.int8)))
    if waves[0].n_actors != waves[1].n_actors:
        raise ValidationError(
            f"wave sizes differ: {waves[0].n_actors} vs {waves[1].n_actors}"
        )
    covs = {}
    for name, path in (covariate_paths or {}).items():
        v = np.loadtxt(path, dtype=np.float64, ndmin=1)
        if v.ndim != 1:
            raise ValidationError(f"{path}: covariate must be one value per line")
        covs[name] = v
    return PanelData(wave1=waves[0], wave2=waves[1], actor_covariates=covs)


def save_network(network: Network, path) -> None:
    np.savetxt(path, network.ties, fmt="%d")


def adjacency_candidates(x: Network, i: int) -> list[Candidate]:
    """The n moves open to actor i: toggle each j != i, then no change, last."""
    n = x.n_actors
    if not 0 <= i < n:
        raise ValidationError(f"actor index {i} out of range for n={n}")
    out = [Candidate(j) for j in range(n) if j != i]
    out.append(NO_CHANGE)
    return out


def apply_candidate(x: Network, i: int, c: Candidate) -> Network:
    """Network after actor i plays candidate c. No-change returns x itself."""
    if not c.is_toggle:
        return x
    j = c.target
    if j == i or not 0 <= j < x.n_actors:
        raise ValidationError(f"invalid toggle target {j} for actor {i}")
    ties = x.copy_ties()
    ties[i, j] = 1 - ties[i, j]
    return Network(ties)


def hamming_distance(a: Network, b: Network) -> int:
    """Number of tie variables on which two networks differ."""
    if a.n_actors != b.n_actors:
        raise ValidationError("networks differ in size")
    return int(np.sum(a.ties != b.ties))


def out_degree_dispersion(x: Network) -> float:
    """Sum of squared deviations of the out-degrees from their mean."""
    d = x.out_degrees().astype(np.float64)
    return float(np.sum((d - d.mean()) ** 2))
