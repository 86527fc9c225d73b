"""Shared, memoised test cases built from the shipped fixtures."""

import functools
from dataclasses import dataclass

from biharmonic_resonance.config import grid_for, load_fixture, shipped_fixture
from biharmonic_resonance.discretization import Discretization, RadialGrid, RadialProblem
from biharmonic_resonance.ladder import LadderState, build_ladder

ALL_CASES = [
    (5, "Regular"), (5, "FirstKind"), (5, "SecondKind"), (5, "Eigenvalue"),
    (6, "Regular"), (6, "FirstKind"), (6, "SecondKind"), (6, "Eigenvalue"),
    (7, "Regular"), (7, "FirstKind"), (7, "Eigenvalue"),
    (8, "Regular"), (8, "FirstKind"), (8, "Eigenvalue"),
    (9, "Regular"), (9, "Eigenvalue"),
    (10, "Regular"), (10, "Eigenvalue"),
]


@dataclass
class Case:
    problem: RadialProblem
    grid: RadialGrid
    state: LadderState
    disc: Discretization
    declared: str


@functools.lru_cache(maxsize=None)
def case(d: int, cls: str) -> Case:
    fx = load_fixture(shipped_fixture(d, cls))
    problem = fx["problem"]
    grid = grid_for(problem, fx["grid"])
    disc = Discretization(problem, grid)
    return Case(problem, grid, build_ladder(problem, grid, disc=disc), disc, fx["classification"])


def decay_channel(d: int, cls: str) -> int:
    return 1 if cls == "SecondKind" and d in (5, 6) else 0


@functools.lru_cache(maxsize=None)
def decay_engine(d: int, cls: str):
    from biharmonic_resonance.decay import SpectralEngine, TestFunction

    c = case(d, cls)
    return SpectralEngine(c.problem, c.grid, TestFunction(1.0, 0.0, decay_channel(d, cls)))


@functools.lru_cache(maxsize=None)
def decay_run(d: int, cls: str, cutoff: str = "smooth"):
    from biharmonic_resonance.decay import run_decay

    c = case(d, cls)
    eng = decay_engine(d, cls)
    return run_decay(c.problem, c.grid, eng.f, cutoff=cutoff, engine=eng)


@functools.lru_cache(maxsize=None)
def inverse_samples(d: int, cls: str, count: int = 40):
    """M(mu)^{-1} by the structured inversion on the default ray, |mu| in [1e-4, 1e-1]."""
    import numpy as np

    from biharmonic_resonance.expansion import sample_inverse

    c = case(d, cls)
    return sample_inverse(c.state, c.disc, np.geomspace(1e-4, 1e-1, count))
