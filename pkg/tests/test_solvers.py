from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import poly_field, sin_field
from nlbvp.convolutions import Field, p1_matrices
from nlbvp.geometry import Domain, build_mesh
from nlbvp.operators import make_context
from nlbvp.solvers import (
    ProblemSpec,
    SolverError,
    SpecError,
    assemble_stiffness,
    boundary_load,
    boundary_mass,
    fixed_point_residual,
    load,
    minimize_energy,
    operator_matrix,
    pcg,
    semilinear_apply,
    solve,
    solve_dirichlet,
    solve_local,
    solve_neumann,
    solve_robin,
)

INTERVAL = Domain.interval(0, 1)
SQUARE = Domain.rectangle(0, 0, 1, 1)
CTX = make_context(INTERVAL, delta=0.1)
MESH = build_mesh(INTERVAL, 1 / 32)


def const(c: float) -> Field:
    return Field.constant(c)


def test_pcg_solves_spd_system():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((20, 20))
    A = sp.csr_matrix(B @ B.T + 20 * np.eye(20))
    b = rng.standard_normal(20)
    x, it, res = pcg(A, b, tol=1e-12)
    assert np.allclose(A @ x, b, atol=1e-9)
    assert res <= 1e-12 and it > 0


def test_pcg_reports_failure_stage():
    A = sp.csr_matrix(np.diag(np.linspace(1, 1e6, 50)) + 1e-3 * np.ones((50, 50)))
    with pytest.raises(SolverError) as err:
        pcg(A, np.ones(50), tol=1e-14, maxit=2)
    assert err.value.stage == "linear solve"


def test_boundary_mass_and_load():
    m1 = build_mesh(INTERVAL, 0.25)
    assert boundary_mass(m1).sum() == pytest.approx(2.0)
    m2 = build_mesh(SQUARE, 0.25)
    assert boundary_mass(m2).sum() == pytest.approx(4.0)
    g = Field.closed(lambda X: X[:, 0] ** 2, dim=2)
    # int of x^2 over the boundary of the unit square = 0 + 1 + 2/3
    assert boundary_load(g, m2).sum() == pytest.approx(1 + 2 / 3, rel=1e-12)


def test_stiffness_structure():
    A = assemble_stiffness(CTX, MESH)
    x = MESH.nodes[:, 0]
    assert np.allclose(A @ np.ones(MESH.n_nodes), 0.0, atol=1e-10)
    assert abs(A - A.T).max() < 1e-13
    # calibration: [ax]^2 = a^2 |Omega|
    assert (3 * x) @ A @ (3 * x) == pytest.approx(9.0, rel=1e-8)
    v = np.sin(7 * x)
    assert v @ A @ v > 0


def test_stiffness_2d_linear_field():
    ctx = make_context(SQUARE, delta=0.1)
    mesh = build_mesh(SQUARE, 1 / 8)
    A = assemble_stiffness(ctx, mesh)
    u = mesh.nodes[:, 0] + mesh.nodes[:, 1]
    assert u @ A @ u == pytest.approx(2.0, rel=1e-3)
    assert np.allclose(A @ np.ones(mesh.n_nodes), 0.0, atol=1e-10)


def test_zero_data_gives_zero():
    rep = solve_dirichlet(ProblemSpec(CTX, MESH, f=const(0.0), g=const(0.0)))
    assert np.all(rep.solution.nodal == 0.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_solution_is_linear_in_data(a, b):
    spec = ProblemSpec(CTX, MESH, f=const(1.0), g=const(0.0))
    u1 = solve(spec).solution.nodal
    u2 = solve(replace(spec, f=sin_field(3.0), cache={})).solution.nodal
    u3 = solve(replace(spec, f=Field.closed(lambda X: a + b * np.sin(3 * X[:, 0]), dim=1), cache={})).solution.nodal
    assert np.allclose(u3, a * u1 + b * u2, atol=1e-8)


def test_local_solve_second_order():
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        mesh = build_mesh(INTERVAL, h)
        f = Field.closed(lambda X: CTX.a_factor * np.pi**2 * np.sin(np.pi * X[:, 0]), dim=1)
        u = solve_local(ProblemSpec(CTX, mesh, f=f, g=const(0.0))).solution
        xs = np.linspace(0.01, 0.99, 97)[:, None]
        errs.append(np.max(np.abs(u.value(xs) - np.sin(np.pi * xs[:, 0]))))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_dirichlet_close_to_local_limit():
    f = Field.closed(lambda X: CTX.a_factor * np.pi**2 * np.sin(np.pi * X[:, 0]), dim=1)
    spec = ProblemSpec(make_context(INTERVAL, delta=0.05), build_mesh(INTERVAL, 1 / 64), f=f, g=const(0.0))
    u = solve(spec).solution.nodal
    ref = np.sin(np.pi * spec.mesh.nodes[:, 0])
    assert np.max(np.abs(u - ref)) < 0.02


def test_neumann_mean_zero_and_compatibility():
    mesh = build_mesh(INTERVAL, 1 / 32)
    f = Field.closed(lambda X: np.cos(np.pi * X[:, 0]), dim=1)
    rep = solve_neumann(ProblemSpec(CTX, mesh, bc="neumann", f=f))
    M = p1_matrices(mesh)[0]
    assert np.ones(mesh.n_nodes) @ M @ rep.solution.nodal == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(SpecError, match="compatibility"):
        solve_neumann(ProblemSpec(CTX, mesh, bc="neumann", f=const(1.0)))


def test_robin_solution_satisfies_system():
    spec = ProblemSpec(CTX, MESH, bc="robin", f=const(1.0), b=1.0, g=const(0.5))
    u = solve_robin(spec).solution.nodal
    A = operator_matrix(spec)
    assert np.allclose(A @ u, load(spec), atol=1e-8)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(bc="robin", b=0.0),
        dict(bc="weird"),
        dict(mu=-1.0),
        dict(mu=1.0, m=1.0),
        dict(dirichlet_facets=np.array([], dtype=int)),
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(SpecError):
        ProblemSpec(CTX, MESH, **kwargs)


@pytest.mark.parametrize("bc", ["dirichlet", "robin"])
def test_solver_entry_points_check_bc(bc):
    spec = ProblemSpec(CTX, MESH, bc=bc, b=1.0, f=const(1.0))
    other = solve_robin if bc == "dirichlet" else solve_dirichlet
    with pytest.raises(SpecError):
        other(spec)


def test_picard_linear_lower_order_term_one_step():
    spec = ProblemSpec(CTX, MESH, f=const(1.0), g=const(0.0), mu=2.0, m=2.0)
    rep = solve(spec)
    assert rep.picard_iterations == 1
    u = rep.solution.nodal
    vec, _ = semilinear_apply(u, spec)
    r = operator_matrix(spec) @ u + vec - load(spec)
    assert np.max(np.abs(r[1:-1])) < 1e-8


def test_picard_nonlinear_converges():
    spec = ProblemSpec(CTX, MESH, bc="robin", b=1.0, f=const(5.0), mu=1.0, m=3.0)
    rep = solve(spec)
    assert rep.picard_iterations > 1
    u = rep.solution.nodal
    vec, _ = semilinear_apply(u, spec)
    r = operator_matrix(spec) @ u + vec - load(spec)
    assert np.max(np.abs(r)) < 1e-6


def test_semilinear_derivative_lipschitz():
    spec = ProblemSpec(CTX, MESH, bc="robin", b=1.0, mu=1.0, m=2.0)
    rng = np.random.default_rng(3)
    u, v = rng.standard_normal(MESH.n_nodes), rng.standard_normal(MESH.n_nodes)
    du = semilinear_apply(u, spec)[0] - semilinear_apply(v, spec)[0]
    M = semilinear_apply(u, spec)[1]
    assert np.allclose(du, M @ (u - v), atol=1e-12)


def test_descent_matches_linear_solve_for_p2():
    spec = ProblemSpec(CTX, MESH, f=sin_field(2.0), g=poly_field(1.0, 1.0, 0.0))
    lin = solve(spec).solution.nodal
    spec.tol = 1e-12
    des = minimize_energy(replace(spec, cache={})).solution.nodal
    assert np.allclose(lin, des, atol=1e-9)


def test_descent_p4_monotone_energy():
    ctx = make_context(INTERVAL, p=4.0, delta=0.1)
    spec = ProblemSpec(ctx, build_mesh(INTERVAL, 1 / 32), f=const(1.0), g=poly_field(1.0, 2.0, 0.0), tol=1e-9)
    rep = solve(spec)
    E = rep.energies
    assert all(b < a for a, b in zip(E, E[1:]))
    assert rep.residual <= 1e-9


def test_descent_rejects_neumann():
    ctx = make_context(INTERVAL, p=4.0, delta=0.1)
    with pytest.raises(SpecError):
        minimize_energy(ProblemSpec(ctx, MESH, bc="neumann", f=const(0.0)))


def test_fixed_point_residual_small():
    mesh = build_mesh(INTERVAL, 1 / 256)
    spec = ProblemSpec(CTX, mesh, f=const(1.0), g=const(0.0))
    u = solve(spec).solution
    r = fixed_point_residual(u, spec, np.linspace(0.05, 0.95, 9))
    assert np.max(np.abs(r)) < 1e-4


def test_fixed_point_requires_p2():
    ctx = make_context(INTERVAL, p=4.0, delta=0.1)
    with pytest.raises(SpecError):
        fixed_point_residual(Field.constant(0.0), ProblemSpec(ctx, MESH), [0.5])
