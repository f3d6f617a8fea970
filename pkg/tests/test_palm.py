from __future__ import annotations

import math

import numpy as np
import pytest

from homlab.effective_field import TestFunctionSpec
from homlab.env import BoxSpec, ConductanceLaw, MarkLaw, generate_mott, generate_nn_conductance, generate_percolation
from homlab.palm import aggregate, ergodic_average, estimate_intensity, estimate_lambda_k, lambda_k_per_atom


def test_full_lattice_intensity_is_one():
    env = generate_percolation(BoxSpec(2, 6), 1.0, 0)
    est = estimate_intensity(env)
    assert est.value == 1.0
    assert est.sample_count == 1


def test_degree_mode_intensity():
    env = generate_nn_conductance(BoxSpec(2, 6), ConductanceLaw("constant", c=2.0), "DEGREE", 0)
    assert math.isclose(estimate_intensity(env).value, 8.0)


def test_poisson_intensity_within_counting_error():
    env = generate_mott(BoxSpec(2, 50.0), 2.0, MarkLaw(), 1.0, 12)
    assert abs(estimate_intensity(env).value - 2.0) <= 3 * math.sqrt(2.0 / 2500)


def test_nn_jump_moments():
    env2 = generate_nn_conductance(BoxSpec(2, 8), ConductanceLaw(), "UNIT", 0)
    assert math.isclose(estimate_lambda_k(env2, 0).value, 4.0)
    assert math.isclose(estimate_lambda_k(env2, 2).value, 4.0)
    env1 = generate_nn_conductance(BoxSpec(1, 8), ConductanceLaw(), "UNIT", 0)
    assert math.isclose(estimate_lambda_k(env1, 1).value, 2.0)


def test_mott_total_rate_matches_campbell_integral():
    expected = 2.0 * (1.0 - math.exp(-5.0))
    envs = [generate_mott(BoxSpec(1, 400.0), 1.0, MarkLaw(), 5.0, s) for s in range(8)]
    est = estimate_lambda_k(envs, 0)
    assert est.sample_count == 8
    assert abs(est.value - expected) <= 3 * est.standard_error


def test_lambda_k_rejects_bad_order():
    env = generate_nn_conductance(BoxSpec(1, 8), ConductanceLaw(), "UNIT", 0)
    with pytest.raises(ValueError):
        lambda_k_per_atom(env, 3)


def test_aggregate_statistics():
    est = aggregate([1.0, 2.0, 3.0, 4.0])
    assert est.value == 2.5
    assert math.isclose(est.standard_error, np.std([1, 2, 3, 4], ddof=1) / 2)
    assert aggregate([5.0]).standard_error == 0.0
    assert est.to_dict() == {"value": 2.5, "std_error": est.standard_error, "samples": 4}


def test_ergodic_average_total_mass():
    env = generate_nn_conductance(BoxSpec(2, 16), ConductanceLaw(), "DEGREE", 0)
    eps = 0.25
    one = TestFunctionSpec("constant", 4.0, 2)
    m = estimate_intensity(env).value
    assert math.isclose(ergodic_average(env, eps, one, 1.0), m * 4.0**2)


def test_ergodic_average_of_mean_zero_mode():
    env = generate_percolation(BoxSpec(2, 32), 1.0, 0)
    phi = TestFunctionSpec.cosine(8.0, 2, (1, 2), 0.3)
    assert abs(ergodic_average(env, 0.25, phi, 1.0)) < 1e-12


def test_ergodic_average_constant_observable():
    c = 1.7
    env = generate_nn_conductance(BoxSpec(2, 16), ConductanceLaw("constant", c=c), "UNIT", 0)
    phi = TestFunctionSpec.gaussian(4.0, 2, (2.0, 2.0), 0.5)
    lam0 = lambda_k_per_atom(env, 0)
    np.testing.assert_allclose(lam0, 4 * c)
    direct = 0.25**2 * float(np.sum(phi(0.25 * env.positions)))
    assert math.isclose(ergodic_average(env, 0.25, phi, lam0), 4 * c * direct, rel_tol=1e-13)


def test_ergodic_average_side_mismatch():
    env = generate_nn_conductance(BoxSpec(1, 16), ConductanceLaw(), "UNIT", 0)
    with pytest.raises(ValueError):
        ergodic_average(env, 0.5, TestFunctionSpec("constant", 4.0, 1), 1.0)
