import numpy as np
import pytest

from saomre import (
    EffectDef,
    ModelSpec,
    Network,
    PanelData,
    ParameterPoint,
    simulate_period,
)

# one line per acceptance criterion, echoed after the run so the verdicts
# survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_network(n: int, density: float, seed: int) -> Network:
    rng = np.random.default_rng(seed)
    ties = (rng.random((n, n)) < density).astype(np.int8)
    np.fill_diagonal(ties, 0)
    return Network(ties)


def synthetic_panel(
    spec: ModelSpec,
    true_pp: ParameterPoint,
    n: int,
    seed: int,
    density: float = 0.12,
    covariates: dict | None = None,
) -> PanelData:
    """Wave 2 generated by simulating the model forward from a random wave 1."""
    cov = covariates or {}
    w1 = random_network(n, density, seed)
    sim = simulate_period(w1, true_pp, spec, cov, np.random.SeedSequence(seed, spawn_key=(97,)))
    return PanelData(w1, sim.end_network, cov)


@pytest.fixture
def basic_spec() -> ModelSpec:
    return ModelSpec(fixed_effects=(EffectDef("out_degree"), EffectDef("reciprocity")))


@pytest.fixture
def basic_panel(basic_spec) -> PanelData:
    true = ParameterPoint(1.4, np.array([-1.3, 1.0]))
    return synthetic_panel(basic_spec, true, n=16, seed=5)
