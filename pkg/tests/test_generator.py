from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homlab.effective_field import TestFunctionSpec
from homlab.env import BoxSpec, ConductanceLaw, generate_nn_conductance, generate_percolation, make_environment
from homlab.generator import assemble


def ring(L=4, c=1.0):
    return generate_nn_conductance(BoxSpec(1, L), ConductanceLaw("constant", c=c), "UNIT", 0)


def two_atoms(nx, ny, c):
    return make_environment(BoxSpec(1, 4.0), [[0.0], [1.0]], [nx, ny], [[0, 1]], [c])


def test_ring_laplacian():
    gen = assemble(ring(), 1.0)
    np.testing.assert_allclose(gen.apply([1.0, 0, 0, 0]), [-2.0, 1.0, 0.0, 1.0])


def test_constants_in_kernel(envs):
    for env in envs.values():
        gen = assemble(env, 0.25)
        assert np.abs(gen.apply(np.full(env.n_atoms, 3.0))).max() < 1e-10
        assert gen.dirichlet_energy(np.full(env.n_atoms, 3.0)) == 0.0


def test_two_atom_chain():
    nx, ny, c = 2.0, 5.0, 3.0
    gen = assemble(two_atoms(nx, ny, c), 1.0)
    a, b = c / nx, c / ny
    np.testing.assert_allclose(gen.apply([1.0, 0.0]), [-a, b], rtol=1e-15)


def test_symmetry_in_mu(envs, rng):
    for env in envs.values():
        gen = assemble(env, 0.5)
        for _ in range(10):
            f, g = rng.standard_normal((2, env.n_atoms))
            lhs = gen.mu_inner(f, gen.apply(g))
            rhs = gen.mu_inner(g, gen.apply(f))
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_linearity(envs, rng):
    gen = assemble(envs["mott"], 0.3)
    u, v = rng.standard_normal((2, gen.n_atoms))
    lhs = gen.apply(2.5 * u - 0.7 * v)
    rhs = 2.5 * gen.apply(u) - 0.7 * gen.apply(v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_ring_energy():
    gen = assemble(ring(), 1.0)
    assert gen.dirichlet_energy([1.0, 0, 0, 0]) == 2.0
    assert gen.nu_norm_sq_of_gradient([1.0, 0, 0, 0]) == 4.0


def test_energy_is_summation_by_parts(envs, rng):
    for env in envs.values():
        gen = assemble(env, 0.2)
        u = rng.standard_normal(env.n_atoms)
        e = gen.dirichlet_energy(u)
        assert math.isclose(e, -gen.mu_inner(u, gen.apply(u)), rel_tol=1e-12)
        assert math.isclose(gen.form(u, u), e, rel_tol=1e-14)


def test_total_mass_and_restrict(envs):
    for env in envs.values():
        eps = 0.5
        gen = assemble(env, eps)
        one = np.ones(env.n_atoms)
        assert math.isclose(gen.mu_inner(one, one), eps**env.dim * env.weights.sum(), rel_tol=1e-14)
        np.testing.assert_array_equal(gen.restrict(2.0), 2.0)
        const = TestFunctionSpec("constant", gen.side, env.dim, {"value": -1.5})
        np.testing.assert_array_equal(gen.restrict(const), -1.5)


def test_restrict_checks_torus():
    gen = assemble(ring(16), 0.5)
    with pytest.raises(ValueError):
        gen.restrict(TestFunctionSpec("constant", 4.0, 1))


@pytest.mark.parametrize("eps", [1 / 4, 1 / 8, 1 / 16])
def test_riemann_sum_of_cosine_mode(eps):
    S = 4.0
    env = generate_percolation(BoxSpec(2, int(S / eps)), 1.0, 0)
    gen = assemble(env, eps)
    phi = TestFunctionSpec.cosine(S, 2, (1, 1), 0.4)
    u = gen.restrict(phi)
    exact = 0.5 * S**2
    assert abs(gen.mu_inner(u, u) - exact) <= 5 * eps * exact


def test_field_shape_checked():
    gen = assemble(ring(), 1.0)
    with pytest.raises(ValueError):
        gen.apply(np.ones(3))
    with pytest.raises(ValueError):
        assemble(ring(), 0.0)


def test_scaling_in_eps(envs, rng):
    env = envs["square_uniform_degree"]
    u = rng.standard_normal(env.n_atoms)
    g1, g2 = assemble(env, 1.0), assemble(env, 0.25)
    np.testing.assert_allclose(g2.apply(u), 16.0 * g1.apply(u), rtol=1e-13)
    assert math.isclose(g2.dirichlet_energy(u), g1.dirichlet_energy(u), rel_tol=1e-13)


@settings(max_examples=30, deadline=None)
@given(
    c=st.lists(st.floats(0.1, 10.0), min_size=3, max_size=12),
    data=st.data(),
)
def test_energy_nonnegative_property(c, data):
    L = len(c)
    env = make_environment(
        BoxSpec(1, float(L)),
        np.arange(L, dtype=float)[:, None],
        np.ones(L),
        np.stack([np.arange(L), (np.arange(L) + 1) % L], axis=1),
        c,
    )
    u = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=L, max_size=L)))
    gen = assemble(env, 1.0)
    e = gen.dirichlet_energy(u)
    assert e >= 0.0
    assert math.isclose(e, float(np.dot(c, (np.roll(u, -1) - u) ** 2)), rel_tol=1e-12, abs_tol=1e-12)


def test_conservation_and_scaled_energy(envs, rng):
    for env in envs.values():
        u = rng.standard_normal(env.n_atoms)
        scaled = []
        for eps in (1.0, 0.5, 0.125):
            gen = assemble(env, eps)
            assert abs(float(np.dot(gen.mu, gen.apply(u)))) <= 1e-10 * gen.mu_norm(gen.apply(u)) * math.sqrt(gen.mu_mass())
            scaled.append(-gen.mu_inner(u, gen.apply(u)) * eps ** (2 - env.dim))
        np.testing.assert_allclose(scaled, scaled[0], rtol=1e-12)
