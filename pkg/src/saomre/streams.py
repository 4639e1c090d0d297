"""Reproducible random streams.

Every replicate of every phase gets its own PCG64 generator derived from
the master seed through a fixed spawn key, so results never depend on
scheduling order or worker count. Phase ids keep the streams disjoint:

    1  preconditioning replicates
    2  estimation iterations
    3  covariance / test replicates
    4  goodness-of-fit replicates
    5  ad hoc simulation runs
    6  model-comparison replicates (shared across the compared models)

A replicate stream is split once more inside the simulator: one child
drives the random-effect draw and the Poisson step count, the other the
walk itself. Keeping those separate lets two parameter points share the
walk stream exactly, which is what the coupled finite-difference checks
rely on.
"""

from __future__ import annotations

import numpy as np

PHASE_PRECONDITION = 1
PHASE_ESTIMATE = 2
PHASE_COVARIANCE = 3
PHASE_GOF = 4
PHASE_ADHOC = 5
PHASE_PSC = 6


def replicate_seed(master_seed: int, phase: int, index: int) -> np.random.SeedSequence:
    """Seed sequence for one replicate of one phase."""
    return np.random.SeedSequence(master_seed, spawn_key=(phase, index))


def replicate_generator(master_seed: int, phase: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replicate_seed(master_seed, phase, index)))


def split_generators(seq: np.random.SeedSequence, n: int) -> list[np.random.Generator]:
    """n independent generators derived from one seed sequence.

    Children are constructed by extending the spawn key directly rather than
    through the stateful spawn(), so splitting the same sequence twice gives
    the same generators.
    """
    children = [
        np.random.SeedSequence(entropy=seq.entropy, spawn_key=(*seq.spawn_key, j))
        for j in range(n)
    ]
    return [np.random.Generator(np.random.PCG64(child)) for child in children]
