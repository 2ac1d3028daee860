import numpy as np
import pytest

from cpbpolicy import (
    LearnerSpec,
    ScenarioSpec,
    crossfit_nuisances,
    dr_learn_cpb,
    generate,
    make_folds,
    pseudo_outcomes,
)


class Pipeline:
    """Fitted nuisances, pseudo-outcomes and DR-learner scores for one draw."""

    def __init__(self, scenario, n, seed=0, spec=LearnerSpec()):
        self.sim = generate(ScenarioSpec(scenario, n, seed))
        self.cohort = self.sim.cohort
        self.folds = make_folds(n, 2, seed)
        self.fits = crossfit_nuisances(self.cohort, self.folds, spec, spec)
        self.phi = pseudo_outcomes(self.cohort, self.fits)
        self.model = dr_learn_cpb(self.cohort, self.fits, spec=spec, pseudo=self.phi)
        self.scores = self.model.scores()


@pytest.fixture(scope="session")
def s1_small():
    return Pipeline("S1", 4000, seed=3)


@pytest.fixture(scope="session")
def s1_large():
    return Pipeline("S1", 20000, seed=11)


@pytest.fixture(scope="session")
def s2star_mid():
    return Pipeline("S2star", 8000, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Keep one PASS/FAIL line per acceptance criterion for the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
