from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import poly_field, sin_field
from nlbvp.convolutions import Field
from nlbvp.geometry import Domain, build_mesh
from nlbvp.operators import make_context
from nlbvp.solvers import ProblemSpec, solve
from nlbvp.verification import (
    StudyTable,
    SupportError,
    bounded,
    bump_field,
    check_normalization,
    collar_width,
    decreasing,
    green_second,
    green_strong,
    localization_study,
    normal_flux,
    p1_bank,
    richardson,
    smooth_bank,
    w1p_seminorm,
)

INTERVAL = Domain.interval(0, 1)
CTX = make_context(INTERVAL, delta=0.1)


def test_study_table_csv(tmp_path):
    t = StudyTable("demo", ["a", "b"])
    t.add(1, 0.5)
    t.add(2, 0.25)
    t.verdict("ok", True)
    path = t.to_csv(tmp_path / "t.csv")
    assert path.read_text() == "a,b\n1.000000000000e+00,5.000000000000e-01\n2.000000000000e+00,2.500000000000e-01\n"
    assert t.passed and t.summary() == "demo: ok=pass"
    t.verdict("bad", False, 1)
    assert not t.passed and "bad=fail@row1" in t.summary()
    with pytest.raises(ValueError):
        t.add(1.0)


@pytest.mark.parametrize(
    "values, ratio, expected",
    [([4, 2, 1], None, (True, None)), ([4, 2, 2], None, (False, 2)), ([4, 2, 1.5], 0.7, (False, 2)), ([4, 2.5, 1.5], 0.7, (True, None))],
)
def test_decreasing(values, ratio, expected):
    assert decreasing(values, ratio) == expected


def test_bounded():
    assert bounded([1.0, 1.2, 1.4], 1.5) == (True, None)
    assert bounded([1.0, 1.6], 1.5) == (False, 1)
    assert bounded([1.0, np.nan], 1.5) == (False, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_richardson_exact_on_quadratic_error(L, a, b):
    h = np.array([0.4, 0.2, 0.1])
    assert richardson(L + a * h + b * h**2, order=1.0) == pytest.approx(L, abs=1e-9)


@pytest.mark.parametrize("dim", [1, 2])
def test_bump_field_derivatives(dim):
    f = bump_field([0.5] * dim, 0.3, dim)
    X = np.full((1, dim), 0.5) + 0.1 * np.arange(1, dim + 1) / dim
    h = 1e-6
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        assert f.grad(X)[0, k] == pytest.approx((f.value(X + e)[0] - f.value(X - e)[0]) / (2 * h), rel=1e-6)
        assert np.allclose(f.hess(X)[0, :, k], (f.grad(X + e)[0] - f.grad(X - e)[0]) / (2 * h), rtol=1e-5)
    assert f.value(np.full((1, dim), 0.95))[0] == 0.0


def test_banks():
    mesh = build_mesh(INTERVAL, 0.25)
    bank = p1_bank(mesh, 3, seed=1)
    assert len(bank) == 3 and np.allclose(bank[0].nodal, mesh.nodes[:, 0])
    assert w1p_seminorm(bank[0], 3.0) == pytest.approx(1.0)
    s = smooth_bank(2, dim=2, seed=0)
    X = np.array([[0.2, 0.4]])
    h = 1e-6
    fd = (s[0].value(X + [h, 0]) - s[0].value(X - [h, 0])) / (2 * h)
    assert s[0].grad(X)[0, 0] == pytest.approx(fd[0], rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("p, beta", [(2.0, 0.0), (4.0, 0.5), (2.0, 2.5)])
def test_check_normalization_1d(p, beta):
    ctx = make_context(INTERVAL, p=p, beta=beta, delta=0.1)
    t = check_normalization(ctx)
    assert t.passed and t.column("defect").max() < 1e-10


def test_collar_width_inverts_q():
    ctx = make_context(INTERVAL, q="arctan", delta=0.1)
    w = collar_width(ctx, 0.05)
    assert 2 / np.pi * np.arctan(w) == pytest.approx(0.05, rel=1e-12)


def test_green_strong_small_residual():
    out = green_strong(sin_field(2.0), bump_field([0.5], 0.3), CTX, support=(0.2, 0.8))
    assert out["residual"] < 1e-5


def test_green_strong_support_checked():
    with pytest.raises(SupportError):
        green_strong(sin_field(2.0), bump_field([0.5], 0.3), CTX, support=(0.0, 0.8))


def test_green_second_identity():
    out = green_second(poly_field(0, 0, 1), Field.constant(1.0), make_context(INTERVAL, delta=0.12, lam="smoothed:0.1"))
    assert out["residual"] < 0.01


def test_localization_study_smoothed_distance():
    ctx = make_context(INTERVAL, delta=0.1, lam="smoothed:0.1")
    t = localization_study(sin_field(2.0), ctx, [0.1, 0.05])
    assert t.passed and t.rows[1][2] <= 0.7


def test_localization_schedule_must_decrease():
    with pytest.raises(ValueError):
        localization_study(sin_field(), CTX, [0.05, 0.1])


def test_normal_flux_of_sine_problem():
    # -u'' = pi^2 sin(pi x), u = sin(pi x): du/dnu = -pi at both ends
    mesh = build_mesh(INTERVAL, 1 / 64)
    f = Field.closed(lambda X: CTX.a_factor * np.pi**2 * np.sin(np.pi * X[:, 0]), dim=1)
    spec = ProblemSpec(make_context(INTERVAL, delta=0.05), mesh, f=f, g=Field.constant(0.0))
    dist = normal_flux(solve(spec), spec)
    assert np.allclose(dist.facet_values, -np.pi * spec.ctx.a_delta(), rtol=0.02)
    assert dist.extension_gap < 1e-8
