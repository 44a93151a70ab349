from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import poly_field, sin_field
from nlbvp.convolutions import Field
from nlbvp.geometry import Domain, build_mesh
from nlbvp.operators import (
    OperatorError,
    apply_pointwise,
    apply_truncated,
    assemble_pairs,
    bilinear,
    energy,
    local_bilinear,
    local_operator,
    make_context,
    seminorm,
    split_D1_D2,
)

INTERVAL = Domain.interval(0, 1)
SQUARE = Domain.rectangle(0, 0, 1, 1)


def linear2d(a: float, b: float) -> Field:
    return Field.closed(
        lambda X: a * X[:, 0] + b * X[:, 1],
        lambda X: np.tile([a, b], (len(X), 1)),
        lambda X: np.zeros((len(X), 2, 2)),
        dim=2,
    )


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_seminorm_of_linear_1d(p, beta):
    ctx = make_context(INTERVAL, p=p, beta=beta, delta=0.1)
    assert seminorm(poly_field(0.3, 2.0, 0.0), ctx) == pytest.approx(2.0, rel=1e-8)


def test_seminorm_of_linear_2d():
    ctx = make_context(SQUARE, delta=0.1)
    assert seminorm(linear2d(1.0, 1.0), ctx) == pytest.approx(np.sqrt(2.0), rel=1e-4)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_energy_matches_seminorm(p):
    # both kernels have the same (p - beta) moment, so they agree on linear
    # fields exactly and on smooth fields up to O(delta^2)
    ctx = make_context(INTERVAL, p=p, delta=0.1)
    lin = poly_field(1.0, -1.5, 0.0)
    assert (p * energy(lin, ctx)) ** (1 / p) == pytest.approx(seminorm(lin, ctx), rel=1e-9)
    u = sin_field(2.0)
    assert (p * energy(u, ctx)) ** (1 / p) == pytest.approx(seminorm(u, ctx), rel=1e-3)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_bilinear_diagonal_and_homogeneity(p):
    ctx = make_context(INTERVAL, p=p, delta=0.1)
    u = poly_field(0.0, 1.0, -0.7, 0.2)
    E = energy(u, ctx)
    assert bilinear(u, u, ctx) == pytest.approx(p * E, rel=1e-10)
    assert energy(poly_field(0.0, 2.0, -1.4, 0.4), ctx) == pytest.approx(2**p * E, rel=1e-10)


def test_bilinear_symmetric_for_p2():
    ctx = make_context(INTERVAL, delta=0.1)
    u, v = sin_field(2.0), poly_field(0.1, 1.0, 1.0)
    assert bilinear(u, v, ctx) == pytest.approx(bilinear(v, u, ctx), rel=1e-10)


def test_bilinear_close_to_local():
    ctx = make_context(INTERVAL, delta=0.02)
    u, v = sin_field(2.0), poly_field(0.1, 1.0, 1.0)
    assert bilinear(u, v, ctx) == pytest.approx(local_bilinear(u, v, ctx), rel=5e-3)


@pytest.mark.parametrize("u", [poly_field(0, 1, 2, -1), sin_field(3.0)], ids=["cubic", "sin"])
@pytest.mark.parametrize("p", [2.0, 4.0])
def test_split_sums_to_operator(u, p):
    ctx = make_context(INTERVAL, p=p, delta=0.1)
    xs = np.array([0.1, 0.27, 0.6, 0.85])
    s = split_D1_D2(u, xs, ctx)
    full = apply_pointwise(u, xs, ctx)
    assert np.allclose(s.D1 + s.D2, full.value, rtol=1e-10, atol=1e-10)


def test_remainder_vanishes_for_linear():
    ctx = make_context(INTERVAL, p=3.0, delta=0.1)
    s = split_D1_D2(poly_field(0.5, -2.0, 0.0), np.array([0.2, 0.7]), ctx)
    assert np.allclose(s.D2, 0.0, atol=1e-10)


def test_pointwise_approaches_local_operator():
    ctx = make_context(INTERVAL, delta=0.05)
    u = sin_field(2.0)
    x = np.array([0.3, 0.6])
    got = apply_pointwise(u, x, ctx).value
    ref = local_operator(u, x, ctx)
    assert np.allclose(got, ref, rtol=0.02)


def test_truncated_vanishes_near_boundary():
    ctx = make_context(INTERVAL, delta=0.1)
    s = apply_truncated(sin_field(2.0), np.array([0.02, 0.5, 0.98]), 0.05, ctx)
    assert s.value[0] == 0.0 and s.value[2] == 0.0
    assert s.value[1] != 0.0


def test_truncated_rejects_bad_eps():
    ctx = make_context(INTERVAL, delta=0.1)
    with pytest.raises(OperatorError):
        apply_truncated(sin_field(), [0.5], 1.5, ctx)


def test_pointwise_rejects_large_beta():
    ctx = make_context(INTERVAL, delta=0.1, beta=1.5)
    with pytest.raises(OperatorError):
        apply_pointwise(sin_field(), [0.5], ctx)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_local_operator_examples(p):
    ctx = make_context(INTERVAL, p=p, delta=0.1)
    # u = x^2: u' = 2x, u'' = 2, -(|u'|^(p-2) u')' = -(p-1)|2x|^(p-2) 2
    x = np.array([0.25, 0.5])
    ref = -ctx.a_factor * (p - 1) * np.abs(2 * x) ** (p - 2) * 2
    assert np.allclose(local_operator(poly_field(0, 0, 1), x, ctx), ref)


def test_pair_form_matches_continuous_energy():
    ctx = make_context(INTERVAL, delta=0.1)
    mesh = build_mesh(INTERVAL, 1 / 32)
    form = assemble_pairs(ctx, mesh)
    x = mesh.nodes[:, 0]
    assert form.energy(2 * x) == pytest.approx(energy(poly_field(0, 2, 0), ctx), rel=1e-8)
    A = form.stiffness()
    assert np.allclose(A @ np.ones(mesh.n_nodes), 0.0, atol=1e-10)
    assert abs(A - A.T).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=17, max_size=17), st.sampled_from([2.0, 3.0, 4.0]))
def test_pair_form_gradient_and_convexity(vals, p):
    ctx = make_context(INTERVAL, p=p, delta=0.1)
    mesh = build_mesh(INTERVAL, 1 / 16)
    form = _pair_cache(ctx, mesh, p)
    u = np.asarray(vals)
    g = form.gradient(u)
    assert g @ u == pytest.approx(p * form.energy(u), rel=1e-9, abs=1e-12)
    w = np.roll(u, 3)
    mid = form.energy(0.5 * (u + w))
    assert mid <= 0.5 * (form.energy(u) + form.energy(w)) + 1e-12


_FORMS: dict = {}


def _pair_cache(ctx, mesh, p):
    if p not in _FORMS:
        _FORMS[p] = assemble_pairs(ctx, mesh)
    return _FORMS[p]
