from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlbvp.geometry import (
    CornerError,
    Domain,
    DomainError,
    build_mesh,
    distance_to_boundary,
    exact_distance,
    outward_normal,
    smoothed_distance,
)
from nlbvp.kernels import bump
from nlbvp.localization import make_rule


@pytest.mark.parametrize(
    "domain, x, expected",
    [
        (Domain.interval(0, 1), [0.3], 0.3),
        (Domain.disk((0, 0), 1.0), [0.5, 0.0], 0.5),
        (Domain.rectangle(0, 0, 1, 1), [0.2, 0.9], 0.1),
    ],
)
def test_distance_examples(domain, x, expected):
    assert distance_to_boundary(domain, np.array([x])) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize(
    "domain, s, expected",
    [
        (Domain.interval(0, 1), [1.0], [1.0]),
        (Domain.disk((0, 0), 1.0), [0.0, 1.0], [0.0, 1.0]),
        (Domain.rectangle(0, 0, 1, 1), [0.5, 0.0], [0.0, -1.0]),
    ],
)
def test_outward_normal_examples(domain, s, expected):
    assert np.allclose(outward_normal(domain, np.array(s)), expected, atol=1e-12)


def test_corner_normal_is_rejected():
    with pytest.raises(CornerError):
        outward_normal(Domain.rectangle(0, 0, 1, 1), np.array([0.0, 0.0]))


def test_degenerate_domains_rejected():
    with pytest.raises(DomainError):
        Domain.interval(1.0, 0.0)
    with pytest.raises(DomainError):
        Domain.polygon([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_interval_mesh():
    mesh = build_mesh(Domain.interval(0, 1), 0.25)
    assert np.allclose(np.sort(mesh.nodes[:, 0]), [0, 0.25, 0.5, 0.75, 1.0])
    assert len(mesh.cells) == 4


def test_square_mesh_counts():
    mesh = build_mesh(Domain.rectangle(0, 0, 1, 1), 0.5)
    assert len(mesh.cells) == 8
    assert mesh.cell_measures.sum() == pytest.approx(1.0, abs=1e-14)


def test_disk_boundary_nodes_on_circle():
    mesh = build_mesh(Domain.disk((0, 0), 1.0), 0.3)
    r = np.linalg.norm(mesh.nodes[mesh.boundary_nodes], axis=1)
    assert np.max(np.abs(r - 1.0)) <= 1e-12


def test_mesh_locate_and_barycentric(unit_square):
    mesh = build_mesh(unit_square, 0.2)
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, size=(200, 2))
    cells = mesh.locate(X)
    assert np.all(cells >= 0)
    lam = mesh.barycentric(X, cells)
    assert np.allclose(lam.sum(axis=1), 1.0)
    assert np.all(lam >= -1e-12)
    assert np.allclose(np.einsum("nk,nkd->nd", lam, mesh.nodes[mesh.cells[cells]]), X)


def test_smoothed_distance_midpoint(unit_interval):
    lam = smoothed_distance(unit_interval, 0.1, bump(0.9, 1), make_rule("identity", exact_distance(unit_interval)))
    v = float(lam.value(np.array([[0.5]]))[0])
    assert 0.45 < v < 0.55
    assert float(lam.value(np.array([[0.0]]))[0]) == pytest.approx(0.0, abs=1e-14)
    assert lam.kappa0 >= 1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0))
def test_smoothed_distance_comparable_to_exact(x):
    dom = Domain.interval(0, 1)
    lam = smoothed_distance(dom, 0.1, bump(0.9, 1), make_rule("identity", exact_distance(dom)))
    dist = min(x, 1 - x)
    v = float(lam.value(np.array([[x]]))[0])
    assert v <= lam.kappa0 * dist + 1e-12
    assert v >= dist / lam.kappa0 - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_distance_is_one_lipschitz(a, b):
    dom = Domain.rectangle(0, 0, 1, 1)
    X = np.array([[a, b], [b, a]])
    d = distance_to_boundary(dom, X)
    assert abs(d[0] - d[1]) <= np.linalg.norm(X[0] - X[1]) + 1e-14
