from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlbvp.geometry import Domain, build_mesh, exact_distance
from nlbvp.kernels import bump, mollified_indicator, rho_moment
from nlbvp.localization import make_horizon, make_rule, q_eval
from nlbvp.quadrature import (
    DivergenceError,
    MapError,
    ball_rule,
    gauss_jacobi,
    gauss_legendre,
    interval_rule,
    omega_rule,
    psi_mass,
    rule_1d,
    solve_upsilon,
    upsilon_map,
    zeta_map,
)

INTERVAL = Domain.interval(0, 1)


def rule(spec="identity", domain=INTERVAL):
    return make_rule(spec, exact_distance(domain))


@pytest.mark.parametrize("n", [1, 4, 9])
def test_gauss_legendre_exactness(n):
    x, w = gauss_legendre(n)
    for k in range(2 * n):
        assert np.sum(w * x**k) == pytest.approx(1 / (k + 1), rel=1e-13)


@pytest.mark.parametrize("wt", [-0.5, 0.0, 1.0, 2.5])
def test_gauss_jacobi_exactness(wt):
    x, w = gauss_jacobi(8, wt)
    for k in range(16):
        assert np.sum(w * x**k) == pytest.approx(1 / (k + wt + 1), rel=1e-12)


def test_gauss_jacobi_rejects_nonintegrable_weight():
    with pytest.raises(DivergenceError):
        gauss_jacobi(4, -1.0)


@pytest.mark.parametrize(
    "d, w, expected",
    [(2, 0.0, math.pi), (1, 2.0, 2 / 3), (1, -0.5, 4.0), (2, 1.0, 2 * math.pi / 3), (2, -1.0, 2 * math.pi), (1, 0.0, 2.0)],
)
def test_ball_rule_measures(d, w, expected):
    assert np.sum(ball_rule(d, w).weights) == pytest.approx(expected, rel=1e-12)


def test_ball_rule_rejects_divergent_weight():
    with pytest.raises(DivergenceError):
        ball_rule(2, -2.0)


def test_ball_rule_polynomial_moment():
    # int_{B} x^2 y^2 dz = pi / 24
    br = ball_rule(2, 0.0, n_radial=8, n_angular=16)
    assert np.sum(br.weights * br.points[:, 0] ** 2 * br.points[:, 1] ** 2) == pytest.approx(math.pi / 24, rel=1e-12)


def test_rule_1d_with_breaks_and_singular_weight():
    s, w = rule_1d([-1.0, -0.3, 0.5, 1.0], -0.5, 12)
    # int_{-1}^{1} |s|^-1/2 s^2 ds = 4/5
    assert np.sum(w * s**2) == pytest.approx(0.8, rel=1e-12)


def test_interval_rule_polynomial():
    X, W = interval_rule(0.0, 2.0, breaks=(0.7,), n_panels=4, order=5, grade=3)
    assert np.sum(W * X[:, 0] ** 9) == pytest.approx(2.0**10 / 10, rel=1e-13)


@pytest.mark.parametrize("dom", ["interval", "square"])
def test_omega_rule_exact_on_quadratics(dom):
    if dom == "interval":
        mesh = build_mesh(INTERVAL, 0.1)
        qr = omega_rule(mesh, 3)
        assert np.sum(qr.weights * qr.points[:, 0] ** 2) == pytest.approx(1 / 3, rel=1e-13)
    else:
        mesh = build_mesh(Domain.rectangle(0, 0, 1, 1), 0.25)
        qr = omega_rule(mesh, 4)
        val = np.sum(qr.weights * qr.points[:, 0] ** 2 * qr.points[:, 1])
        assert val == pytest.approx(1 / 6, rel=1e-12)


def test_zeta_map_example():
    point, det = zeta_map([0.3], [1.0], 0.1, rule())
    assert point[0] == pytest.approx(0.33, rel=1e-14)
    assert det == pytest.approx(1.1, rel=1e-14)


@pytest.mark.parametrize("z, eps", [([1.5], 0.1), ([1.0], 0.5)])
def test_zeta_map_rejections(z, eps):
    with pytest.raises(Exception):
        zeta_map([0.3], z, eps, rule())


def test_upsilon_map_example():
    v, det = upsilon_map([0.3], [0.33], 0.1, rule())
    assert v[0] == pytest.approx(0.03 / 0.033, rel=1e-13)
    assert det == pytest.approx(0.03 / 0.033**2, rel=1e-12)


def test_upsilon_rejects_far_point():
    with pytest.raises(MapError):
        upsilon_map([0.3], [0.5], 0.1, rule())


@settings(max_examples=100, deadline=None)
@given(st.floats(0.02, 0.98), st.floats(-1, 1), st.sampled_from(["identity", "arctan", "power:2"]))
def test_solve_upsilon_fixed_point(x, v, spec):
    R = rule(spec)
    delta = 0.05

    def ef(P):
        return delta * q_eval(R, R.distance.value(P), 0)

    def gf(P):
        return (delta * q_eval(R, R.distance.value(P), 1))[:, None] * R.distance.grad(P)

    Y = solve_upsilon(np.array([x]), np.array([[v]]), ef, gf)
    assert Y[0, 0] == pytest.approx(x + ef(Y)[0] * v, abs=1e-14)


@pytest.mark.parametrize("x", [0.5, 0.2, 0.03, 0.9])
@pytest.mark.parametrize("alpha", [0.0, 0.5])
def test_psi_mass_sandwich(x, alpha):
    psi = mollified_indicator()
    R = rule()
    val = psi_mass(psi, 0.1, alpha, [x], R)
    M = rho_moment(psi, -alpha, 1)
    k1d = 0.1
    assert M / (1 + k1d) <= val <= M / (1 - k1d)


def test_psi_mass_2d_bump():
    psi = bump(0.9, 2)
    R = rule(domain=Domain.rectangle(0, 0, 1, 1))
    val = psi_mass(psi, 0.05, 0.0, [0.5, 0.3], R)
    assert 1 / 1.05 <= val <= 1 / 0.95


def test_psi_mass_rejects_alpha_at_dimension():
    with pytest.raises(DivergenceError):
        psi_mass(mollified_indicator(), 0.1, 1.0, [0.5], rule())


def test_horizon_used_by_maps_is_checked():
    with pytest.raises(Exception, match="1/6"):
        make_horizon(rule(), 0.2)
