from __future__ import annotations

import json
import math

import numpy as np
import pytest

from homlab.convergence import (
    EnvironmentSpec,
    ExperimentPlan,
    derive_seed,
    energy_gap,
    flow_gap,
    run_ladder,
    strip_timing,
    strong_solution_gap,
    weak_solution_gap,
)
from homlab.effective_field import GridField, TestFunctionSpec, sample_on_grid
from homlab.env import BoxSpec, ConductanceLaw, generate_nn_conductance, generate_percolation, make_environment
from homlab.generator import assemble
from homlab.solver import SolveOptions

S = 4.0


def full_lattice(eps, d=2):
    return assemble(generate_percolation(BoxSpec(d, int(round(S / eps))), 1.0, 0), eps)


def constant_lattice(eps, c, d=2):
    env = generate_nn_conductance(BoxSpec(d, int(round(S / eps))), ConductanceLaw("constant", c=c), "UNIT", 0)
    return assemble(env, eps)


def plan_1d(eps=(1 / 8, 1 / 16, 1 / 32), **kw):
    side = 8.0
    return ExperimentPlan(
        env=EnvironmentSpec("nn_conductance", 1),
        side=side,
        eps=eps,
        source=TestFunctionSpec.gaussian(side, 1, 4.0, 0.6),
        tests=[TestFunctionSpec.cosine(side, 1, 1), TestFunctionSpec.gaussian(side, 1, 3.0, 1.0)],
        times=[0.1, 0.5],
        **kw,
    )


# -- gap metrics ----------------------------------------------------------------


def test_weak_gap_shrinks_for_restricted_field():
    u_spec = TestFunctionSpec.gaussian(S, 2, (1.5, 2.0), 0.5)
    phi = TestFunctionSpec.cosine(S, 2, (1, 1), 0.3)
    u = sample_on_grid(u_spec, S, 64, 2)
    gaps = []
    for eps in (1 / 4, 1 / 8, 1 / 16):
        gen = full_lattice(eps)
        gaps.append(weak_solution_gap(gen, gen.restrict(u_spec), u, phi, 1.0))
    assert gaps[-1] <= 1e-3
    assert all(b <= a for a, b in zip(gaps, gaps[1:])) or gaps[-1] < 1e-10


def test_gaps_of_zero_fields_vanish():
    gen = full_lattice(1 / 8)
    zero_u = GridField(np.zeros((16, 16)), S)
    zero_eps = np.zeros(gen.n_atoms)
    phi = TestFunctionSpec.cosine(S, 2, (1, 0))
    assert weak_solution_gap(gen, zero_eps, zero_u, phi, 1.0) == 0.0
    assert strong_solution_gap(gen, zero_eps, zero_u, 1.0) == (0.0, 0.0)
    assert flow_gap(gen, zero_eps, zero_u, np.eye(2), phi, 1.0) == 0.0
    assert energy_gap(gen, zero_eps, zero_u, np.eye(2), 1.0) == 0.0
    spec = TestFunctionSpec.gaussian(S, 2, (2, 2), 0.5)
    u = sample_on_grid(spec, S, 16, 2)
    nothing = TestFunctionSpec("constant", S, 2, {"value": 0.0})
    assert weak_solution_gap(gen, gen.restrict(spec), u, nothing, 1.0) == 0.0


def test_constant_fields_mass_gap(envs):
    env = envs["square_uniform_degree"]
    eps = S / env.box.L
    gen = assemble(env, eps)
    a, m = 1.7, 1.0
    u = GridField(np.full((16, 16), a), S)
    mass, l2 = strong_solution_gap(gen, np.full(gen.n_atoms, a), u, m)
    assert math.isclose(mass, a**2 * abs(gen.mu_mass() - m * S**2), rel_tol=1e-12)
    assert l2 < 1e-20


def test_atomwise_distance_is_interpolation_error():
    spec = TestFunctionSpec.gaussian(S, 2, (2.0, 2.0), 0.6)
    gen = full_lattice(1 / 20)
    errs = [strong_solution_gap(gen, gen.restrict(spec), sample_on_grid(spec, S, n, 2), 1.0)[1] for n in (16, 32)]
    # squared distance, second-order interpolation: ratio close to 16
    assert errs[1] < errs[0] / 8


def test_flow_and_energy_gaps_for_cosine_mode():
    c = 1.3
    spec = TestFunctionSpec.cosine(S, 2, (1, 0))
    phi = TestFunctionSpec.cosine(S, 2, (1, 0), 0.0)
    u = sample_on_grid(spec, S, 64, 2)
    D = c * np.eye(2)
    flows, energies = [], []
    for eps in (1 / 4, 1 / 8, 1 / 16):
        gen = constant_lattice(eps, c)
        ue = gen.restrict(spec)
        flows.append(flow_gap(gen, ue, u, D, phi, 1.0))
        energies.append(energy_gap(gen, ue, u, D, 1.0))
        # lattice symbol 2c(1 - cos(eps k)) / eps^2 against c k^2
        k = 2 * math.pi / S
        lattice = 2 * c * (1 - math.cos(eps * k)) / eps**2 * 0.5 * S**2
        assert math.isclose(gen.dirichlet_energy(ue), lattice, rel_tol=1e-10)
    assert flows == sorted(flows, reverse=True)
    assert energies == sorted(energies, reverse=True)
    assert energies[-1] <= energies[0] / 4


def test_gap_invariances():
    spec = TestFunctionSpec.cosine(S, 2, (1, 1))
    phi = TestFunctionSpec.gaussian(S, 2, (1.0, 1.0), 0.5)
    gen = constant_lattice(1 / 8, 1.0)
    ue = np.full(gen.n_atoms, 2.0)
    u_const = GridField(np.full((16, 16), 2.0), S)
    assert flow_gap(gen, ue, u_const, np.eye(2), phi, 1.0) == 0.0
    u = sample_on_grid(spec, S, 32, 2)
    assert abs(flow_gap(gen, gen.restrict(spec), u, np.eye(2), TestFunctionSpec("constant", S, 2), 1.0)) < 1e-12
    ue = gen.restrict(spec) * 0.9
    base = energy_gap(gen, ue, u, np.eye(2), 1.0)
    scaled = energy_gap(gen, 3.0 * ue, GridField(3.0 * u.values, S), np.eye(2), 1.0)
    assert math.isclose(scaled, 9.0 * base, rel_tol=1e-10)


def test_gaps_invariant_under_relabeling(envs, rng):
    env = envs["percolation"]
    eps = S / env.box.L
    perm = rng.permutation(env.n_atoms)
    inv = np.argsort(perm)
    shuffled = make_environment(
        env.box, env.positions[perm], env.weights[perm], inv[env.edges], env.conductance, env.displacement
    )
    spec = TestFunctionSpec.gaussian(S, 2, (2.0, 2.0), 0.6)
    phi = TestFunctionSpec.cosine(S, 2, (0, 1))
    u = sample_on_grid(spec, S, 32, 2)
    D = np.diag([0.4, 0.5])
    g1, g2 = assemble(env, eps), assemble(shuffled, eps)
    v1 = np.sin(g1.positions[:, 0])
    v2 = v1[perm]
    for fn in (
        lambda g, v: weak_solution_gap(g, v, u, phi, 0.9),
        lambda g, v: strong_solution_gap(g, v, u, 0.9),
        lambda g, v: flow_gap(g, v, u, D, phi, 0.9),
        lambda g, v: energy_gap(g, v, u, D, 0.9),
    ):
        np.testing.assert_allclose(fn(g1, v1), fn(g2, v2), rtol=1e-10, atol=1e-14)


# -- plans and ladders --------------------------------------------------------


def test_plan_validation():
    with pytest.raises(ValueError, match="decreasing"):
        plan_1d(eps=(1 / 16, 1 / 8))
    with pytest.raises(ValueError, match="integer"):
        plan_1d(eps=(3 / 16,))
    with pytest.raises(ValueError):
        plan_1d(replicas=0)
    with pytest.raises(ValueError):
        EnvironmentSpec("swiss_cheese")
    p = plan_1d()
    assert p.box_side(1 / 32) == 256.0
    assert p.grid_resolution == 2048


def test_derive_seed_is_deterministic():
    assert derive_seed(5, 1) == derive_seed(5, 1)
    assert derive_seed(5, 1) != derive_seed(5, 2)
    assert 0 <= derive_seed(2**64 - 1, 3) < 2**64


def test_constant_ladder_converges():
    report = run_ladder(plan_1d())
    assert report.warnings == []
    np.testing.assert_allclose(report.effective.D, [[1.0]], rtol=1e-12)
    gap_cols = [c for c in report.columns() if c not in ("eps", "replica", "L", "n_atoms", "cg_iters", "seconds")]
    for col in gap_cols:
        vals = report.column(col)
        assert all(b < a for a, b in zip(vals, vals[1:])), col
        assert all(v >= 0 for v in vals)
    assert report.column("atomwise_l2", 1 / 32) <= 1e-2
    assert [r["eps"] for r in report.rows] == [1 / 8, 1 / 16, 1 / 32]


def test_single_eps_is_reproducible_and_one_csv_row():
    plan = ExperimentPlan(
        env=EnvironmentSpec("nn_conductance", 1, ConductanceLaw("two_point", c1=1, c2=4)),
        side=8.0,
        eps=(1 / 16,),
        source=TestFunctionSpec.gaussian(8.0, 1, 4.0, 0.6),
        tests=[TestFunctionSpec.cosine(8.0, 1, 1)],
        times=[0.2],
        seed=17,
    )
    a, b = run_ladder(plan), run_ladder(plan)
    assert json.dumps(strip_timing(a.to_dict()), sort_keys=True, default=str) == json.dumps(
        strip_timing(b.to_dict()), sort_keys=True, default=str
    )
    assert strip_timing(json.loads(a.to_json())) == strip_timing(json.loads(b.to_json()))
    lines = a.to_csv().strip().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",") == a.columns()


def test_unquenched_protocol_uses_fresh_environments():
    env = EnvironmentSpec("nn_conductance", 1, ConductanceLaw("uniform", a=1, b=2))
    src = TestFunctionSpec.gaussian(8.0, 1, 4.0, 0.6)
    q = run_ladder(ExperimentPlan(env, 8.0, (1 / 4, 1 / 8), src, seed=3))
    f = run_ladder(ExperimentPlan(env, 8.0, (1 / 4, 1 / 8), src, seed=3, quenched=False))
    assert q.rows[0]["atomwise_l2"] != f.rows[0]["atomwise_l2"]


def test_row_failures_are_recorded():
    plan = plan_1d(eps=(1 / 8, 1 / 16), solver=SolveOptions(max_iter=5))
    plan = ExperimentPlan(**{**plan.__dict__, "times": ()})
    # the corrector is trivial for constant conductance, the Poisson solve is not
    report = run_ladder(plan)
    assert all(r["error"] and "SolverError" in r["error"] for r in report.rows)
    assert len(report.warnings) == 2
    assert math.isnan(report.column("atomwise_l2", 1 / 8))
    assert json.loads(report.to_json())["rows"][0]["error"].startswith("SolverError")


def test_parallel_rows_match_serial():
    plan = ExperimentPlan(
        env=EnvironmentSpec("percolation", 2, p=0.8),
        side=4.0,
        eps=(1 / 4, 1 / 8),
        source=TestFunctionSpec.gaussian(4.0, 2, (2.0, 2.0), 0.5),
        tests=[TestFunctionSpec.cosine(4.0, 2, (1, 0))],
        replicas=2,
        grid=32,
        seed=8,
    )
    serial = strip_timing(run_ladder(plan).to_dict())
    parallel = strip_timing(run_ladder(plan, jobs=2).to_dict())
    assert json.dumps(serial, sort_keys=True, default=str) == json.dumps(parallel, sort_keys=True, default=str)


def test_report_json_fields():
    report = run_ladder(plan_1d(eps=(1 / 8,)))
    data = json.loads(report.to_json())
    assert data["schema"] == 1
    assert data["seed"] == 0
    assert set(data["palm"]) == {"m", "lambda0", "lambda1", "lambda2"}
    assert data["notes"]
    assert "runtime_seconds" in data and "runtime_seconds" not in strip_timing(data)
    assert data["rows"][0]["source_certified"] is True
