import numpy as np
import pytest

from tunearena.objective import ObjectiveSpec
from tunearena.space import SearchSpace
from tunearena.tournament import StrategySpec, TournamentPlan, run_tournament

TOY_STRATEGIES = ("random-search", "rf-surrogate", "genetic", "bo-gp", "bo-tpe")

_acceptance = {}


def toy_plan(seed=20240611):
    return TournamentPlan(
        benchmarks=(ObjectiveSpec("synthetic-add"), ObjectiveSpec("synthetic-mandelbrot")),
        strategies=tuple(StrategySpec(k) for k in TOY_STRATEGIES),
        sample_sizes=(25, 50),
        experiments_per_size=(40, 20),
        master_seed=seed,
    )


@pytest.fixture(scope="session")
def toy_store(tmp_path_factory):
    """The acceptance toy tournament, run once per session at parallelism 1."""
    store = tmp_path_factory.mktemp("toy") / "store"
    run_tournament(toy_plan(), store, parallelism=1)
    return store


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def reduced_space():
    """512 configurations, all valid."""
    return SearchSpace.box((1, 4), (1, 2))


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        doc = report.nodeid.split("::")[-1]
        _acceptance[doc] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{'PASS' if _acceptance[name] == 'passed' else 'FAIL'}  {name}")
