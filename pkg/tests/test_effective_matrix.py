from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from homlab.env import BoxSpec, ConductanceLaw, generate_nn_conductance, make_environment
from homlab.effective_matrix import (
    DisconnectedWarning,
    EffectiveMatrix,
    eigendecompose,
    estimate_D,
    jacobi_eigh,
    sample_D,
    solve_corrector,
    variational_upper_bound,
)
from homlab.palm import estimate_intensity


def ring_from(c):
    L = len(c)
    return make_environment(
        BoxSpec(1, float(L)),
        np.arange(L, dtype=float)[:, None],
        np.ones(L),
        np.stack([np.arange(L), (np.arange(L) + 1) % L], axis=1),
        c,
        np.ones((L, 1)),
    )


def test_constant_conductance_has_zero_corrector():
    env = generate_nn_conductance(BoxSpec(2, 16), ConductanceLaw("constant", c=2.5), "UNIT", 0)
    for a in np.eye(2):
        cor = solve_corrector(env, a)
        assert np.abs(cor.chi).max() <= 1e-10
    np.testing.assert_allclose(estimate_D(env).D, 2.5 * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(variational_upper_bound(env), 2.5 * np.eye(2), rtol=1e-14)


def test_series_circuit_corrector():
    c = np.array([1.0, 4.0, 1.0, 4.0])
    cor = solve_corrector(ring_from(c), [1.0])
    harmonic = 1.0 / np.mean(1.0 / c)
    increments = np.roll(cor.chi, -1) - cor.chi
    np.testing.assert_allclose(increments, harmonic / c - 1.0, atol=1e-12)


def test_corrector_is_linear_in_direction(envs):
    env = envs["square_uniform_degree"]
    a, b = np.array([1.0, 0.0]), np.array([0.3, -2.0])
    chi_sum = solve_corrector(env, a + b).chi
    chi_parts = solve_corrector(env, a).chi + solve_corrector(env, b).chi
    assert np.abs(chi_sum - chi_parts).max() <= 1e-8 * np.abs(chi_sum).max()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_harmonic_mean_in_one_dimension(seed):
    env = generate_nn_conductance(BoxSpec(1, 256), ConductanceLaw("two_point", c1=1, c2=4, q=0.5), "UNIT", seed)
    D = estimate_D(env).D[0, 0]
    harmonic = 1.0 / np.mean(1.0 / env.conductance)
    assert math.isclose(D, harmonic, rel_tol=1e-8)
    ub = variational_upper_bound(env)[0, 0]
    assert math.isclose(ub, float(np.mean(env.conductance)), rel_tol=1e-14)
    assert ub >= D


def test_reweighting_invariance(envs):
    env = envs["mott"]
    alt = env.degree_weighted()
    lhs = estimate_intensity(env).value * estimate_D(env).D
    rhs = estimate_intensity(alt).value * estimate_D(alt).D
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_upper_bound_dominates_and_flux_agrees(envs):
    for name, env in envs.items():
        s = sample_D(env)
        gap = np.linalg.eigvalsh(s.upper_bound - s.D)
        assert gap.min() >= -1e-9, name
        assert s.flux_discrepancy <= 1e-6, name
        np.testing.assert_array_equal(s.D, s.D.T)


def test_estimate_D_over_replicas():
    envs = [
        generate_nn_conductance(BoxSpec(2, 12), ConductanceLaw("uniform", a=1, b=3), "UNIT", s) for s in range(3)
    ]
    em = estimate_D(envs)
    assert len(em.samples) == 3
    np.testing.assert_allclose(em.D, np.mean(em.samples, axis=0))
    assert np.all(em.stderr >= 0)
    assert em.d_star == 2
    out = em.to_dict()
    assert set(out) == {"D", "stderr", "eigenvalues", "eigenvectors", "d_star", "gamma_tol", "flux_discrepancy", "upper_bound"}


def test_disconnected_environment_warns():
    # two disjoint rings of 3 atoms inside a box of side 8
    pos = np.array([[0.0], [1.0], [2.0], [4.0], [5.0], [6.0]])
    edges = [[0, 1], [1, 2], [3, 4], [4, 5]]
    env = make_environment(BoxSpec(1, 8.0), pos, np.ones(6), edges, [1.0, 2.0, 1.0, 3.0])
    with pytest.warns(DisconnectedWarning):
        s = sample_D(env)
    assert np.all(np.isfinite(s.D))


def test_eigendecompose_identity():
    vecs, vals, d_star, tol = eigendecompose(np.eye(3))
    np.testing.assert_allclose(vals, 1.0)
    assert d_star == 3
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-15)


def test_eigendecompose_degenerate():
    vecs, vals, d_star, _ = eigendecompose(np.diag([1.0, 0.0]), 1e-8)
    assert d_star == 1
    np.testing.assert_allclose(vecs[:, 0], [1.0, 0.0])
    em = EffectiveMatrix.from_matrix(np.diag([1.0, 0.0]))
    np.testing.assert_allclose(em.projector(), np.diag([1.0, 0.0]))
    np.testing.assert_allclose(np.abs(em.kernel_basis[:, 0]), [0.0, 1.0])


def test_eigendecompose_rejects_asymmetric():
    with pytest.raises(ValueError):
        eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_reconstruction(rng):
    A = rng.standard_normal((3, 3))
    D = A @ A.T
    vecs, vals, _, _ = eigendecompose(D)
    np.testing.assert_allclose((vecs * vals) @ vecs.T, D, atol=1e-12 * np.abs(D).max())
    assert np.all(np.diff(vals) <= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10)))
def test_jacobi_matches_lapack(A):
    S = A + A.T
    vals, vecs = jacobi_eigh(S)
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(S), atol=1e-10 * max(1.0, np.abs(S).max()))
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-12)


def test_D_scales_with_conductance(envs):
    env = envs["percolation"]
    base = sample_D(env).D
    np.testing.assert_allclose(sample_D(env.scaled(3.5)).D, 3.5 * base, rtol=1e-12)


def test_stripes_give_degenerate_direction():
    env = generate_nn_conductance(BoxSpec(2, 8), ConductanceLaw("uniform", a=1, b=2), "UNIT", 1)
    horizontal = env.with_edges(env.displacement[:, 1] == 0)
    with pytest.warns(DisconnectedWarning):
        em = estimate_D(horizontal)
    assert abs(em.D[1, 1]) <= 1e-10
    assert em.d_star == 1
    np.testing.assert_allclose(np.abs(em.eigenvectors[:, 0]), [1.0, 0.0], atol=1e-12)
