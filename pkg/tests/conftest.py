from __future__ import annotations

import numpy as np
import pytest

from homlab.env import (
    BoxSpec,
    ConductanceLaw,
    MarkLaw,
    generate_long_range,
    generate_mott,
    generate_nn_conductance,
    generate_percolation,
)


def fixture_environments():
    """Small periodic environments covering every model and weight mode."""
    return {
        "ring_constant": generate_nn_conductance(BoxSpec(1, 16), ConductanceLaw("constant", c=1.5), "UNIT", 0),
        "ring_two_point": generate_nn_conductance(
            BoxSpec(1, 64), ConductanceLaw("two_point", c1=1, c2=4, q=0.5), "UNIT", 3
        ),
        "square_uniform_degree": generate_nn_conductance(
            BoxSpec(2, 12), ConductanceLaw("uniform", a=0.5, b=2.0), "DEGREE", 5
        ),
        "percolation": generate_percolation(BoxSpec(2, 16), 0.7, 1),
        "long_range": generate_long_range(BoxSpec(1, 16), ConductanceLaw("uniform", a=1, b=2), 4.0, 3, 2),
        "mott": generate_mott(BoxSpec(2, 10.0), 1.0, MarkLaw("uniform", -0.5, 0.5), 2.5, 4),
        "cube_two_point": generate_nn_conductance(
            BoxSpec(3, 6), ConductanceLaw("two_point", c1=0.5, c2=3, q=0.3), "UNIT", 9
        ),
    }


@pytest.fixture(scope="session")
def envs():
    return fixture_environments()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
