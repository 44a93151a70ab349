"""Fields, boundary-localized convolutions, their adjoints and data mollification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import Mesh, as_points
from .kernels import RadialProfile
from .localization import Horizon, LocalizationRule
from .quadrature import (
    DivergenceError,
    _eta_parts,
    jitter_off_medial,
    omega_rule,
    x_side_rule,
    y_side_rule,
)

FD_STEP = 1e-6
P1_ORDER = 6


class FieldError(ValueError):
    """Raised when a field lacks a requested capability."""


# ---------------------------------------------------------------- fields


class Field:
    """Scalar or vector function on a domain.

    Either closed-form (callables taking points of shape ``(n, d)``) or
    piecewise linear on a mesh with one value (row) per node.

    Parameters
    ----------
    dim : int
        Spatial dimension.
    value, grad, hess : callable or None
        Closed-form evaluators returning ``(n,)`` (or ``(n, k)`` for
        vector fields), ``(n, d)`` and ``(n, d, d)``.
    mesh, nodal : Mesh, ndarray
        Data of a P1 field.
    kinks : sequence of float
        1D points where a closed-form field is not smooth.
    """

    def __init__(self, dim, value=None, grad=None, hess=None, mesh=None, nodal=None, kinks=(), vector=False):
        self.dim = int(dim)
        self._value = value
        self._grad = grad
        self._hess = hess
        self.mesh = mesh
        self.nodal = None if nodal is None else np.asarray(nodal, dtype=float)
        self._kinks = tuple(float(k) for k in kinks)
        self.vector = bool(vector) or (self.nodal is not None and self.nodal.ndim == 2)

    @classmethod
    def closed(cls, value, grad=None, hess=None, dim: int = 1, kinks=(), vector: bool = False) -> "Field":
        return cls(dim, value, grad, hess, kinks=kinks, vector=vector)

    @classmethod
    def p1(cls, mesh: Mesh, values) -> "Field":
        values = np.asarray(values, dtype=float)
        if len(values) != mesh.n_nodes:
            raise FieldError("a P1 field needs one value per node")
        return cls(mesh.dim, mesh=mesh, nodal=values)

    @classmethod
    def constant(cls, c, dim: int = 1) -> "Field":
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            return cls.closed(
                lambda X: np.full(len(X), float(c)),
                lambda X: np.zeros((len(X), dim)),
                lambda X: np.zeros((len(X), dim, dim)),
                dim,
            )
        return cls.closed(lambda X: np.tile(c, (len(X), 1)), dim=dim, vector=True)

    @property
    def is_p1(self) -> bool:
        return self.nodal is not None

    @property
    def kinks(self) -> tuple:
        if self.is_p1 and self.dim == 1:
            return tuple(self.mesh.nodes[:, 0])
        return self._kinks

    def value(self, x) -> np.ndarray:
        X = as_points(x, self.dim)
        if self.is_p1:
            cells = self.mesh.locate(X)
            if np.any(cells < 0):
                raise FieldError("evaluation point outside the mesh")
            lam = self.mesh.barycentric(X, cells)
            vals = self.nodal[self.mesh.cells[cells]]
            if vals.ndim == 3:
                return np.einsum("nk,nkc->nc", lam, vals)
            return np.sum(lam * vals, axis=1)
        return np.asarray(self._value(X), dtype=float)

    def grad(self, x) -> np.ndarray:
        X = as_points(x, self.dim)
        if self.is_p1:
            if self.vector:
                raise FieldError("gradients of vector P1 fields are not provided")
            cells = self.mesh.locate(X)
            G = self.mesh.cell_gradients()[cells]
            return np.einsum("nk,nkd->nd", self.nodal[self.mesh.cells[cells]], G)
        if self._grad is None:
            raise FieldError("this field has no gradient")
        return np.asarray(self._grad(X), dtype=float).reshape(len(X), self.dim)

    def hess(self, x) -> np.ndarray:
        X = as_points(x, self.dim)
        if self.is_p1:
            return np.zeros((len(X), self.dim, self.dim))
        if self._hess is None:
            raise FieldError("this field has no Hessian")
        return np.asarray(self._hess(X), dtype=float).reshape(len(X), self.dim, self.dim)

    @property
    def has_grad(self) -> bool:
        return (self.is_p1 and not self.vector) or self._grad is not None

    @property
    def has_hess(self) -> bool:
        return self.is_p1 or self._hess is not None

    def __add__(self, other: "Field") -> "Field":
        return combine(self, other, 1.0, 1.0)

    def __sub__(self, other: "Field") -> "Field":
        return combine(self, other, 1.0, -1.0)

    def scaled(self, c: float) -> "Field":
        return combine(self, self, float(c), 0.0)


def combine(u: Field, v: Field, a: float, b: float) -> Field:
    """The field ``a*u + b*v``."""
    if u.is_p1 and v.is_p1 and u.mesh is v.mesh:
        return Field.p1(u.mesh, a * u.nodal + b * v.nodal)
    g = (lambda X: a * u.grad(X) + b * v.grad(X)) if u.has_grad and v.has_grad else None
    h = (lambda X: a * u.hess(X) + b * v.hess(X)) if u.has_hess and v.has_hess else None
    return Field(u.dim, lambda X: a * u.value(X) + b * v.value(X), g, h, kinks=u.kinks + v.kinks, vector=u.vector)


def interpolate(u: Field, mesh: Mesh) -> Field:
    """Nodal P1 interpolant of ``u``."""
    return Field.p1(mesh, u.value(mesh.nodes))


@dataclass
class DualDatum:
    """The functional ``v -> int f0 v + int f1 . grad v``."""

    f0: Field
    f1: Field | None = None

    def pair(self, v: Field, X: np.ndarray, W: np.ndarray) -> float:
        out = float(np.sum(W * self.f0.value(X) * v.value(X)))
        if self.f1 is not None:
            out += float(np.sum(W * np.sum(self.f1.value(X) * v.grad(X), axis=1)))
        return out


# ---------------------------------------------------------------- convolutions


def _points(rule: LocalizationRule, x) -> tuple[np.ndarray, bool]:
    d = rule.distance.domain.dim
    scalar = np.ndim(x) == 0 or (d > 1 and np.ndim(x) == 1)
    return jitter_off_medial(rule, as_points(x, d)), scalar


def _order(u: Field, n: int) -> int:
    # P1 kinks split the ball into short smooth pieces; a low order suffices
    return min(n, P1_ORDER) if u.is_p1 else n


def _out(vals, scalar):
    vals = np.asarray(vals)
    return vals[0] if scalar else vals


def k_delta(u: Field, x, psi: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32):
    """``K_delta u(x) = int eta(x)^-d psi(|y-x|/eta(x)) u(y) dy``.

    On the boundary the continuous extension ``u(x)`` is returned.
    """
    X, scalar = _points(rule, x)
    out = []
    for xi in X:
        Z, W, Y, ex = x_side_rule(rule, horizon, xi, psi, 0.0, u.kinks, _order(u, n_radial), n_angular)
        if ex <= 0:
            out.append(u.value(xi[None, :])[0])
            continue
        out.append(np.tensordot(W * psi(np.linalg.norm(Z, axis=1)), u.value(Y), axes=1))
    return _out(out, scalar)


def k_delta_star(u: Field, x, psi: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32):
    """``K*_delta u(x) = int eta(y)^-d psi(|y-x|/eta(y)) u(y) dy`` (zero on the boundary)."""
    X, scalar = _points(rule, x)
    out = []
    for xi in X:
        if _eta_parts(rule, horizon.delta, xi[None, :])[0][0] <= 0:
            out.append(np.zeros(u.nodal.shape[1:]) if u.is_p1 and u.vector else 0.0)
            continue
        V, W, Y, e, g = y_side_rule(rule, horizon, xi, psi, 0.0, u.kinks, _order(u, n_radial), n_angular)
        wt = W * psi(np.linalg.norm(V, axis=1)) / (1.0 - np.sum(g * V, axis=1))
        out.append(np.tensordot(wt, u.value(Y), axes=1))
    return _out(out, scalar)


def k_tilde(v: Field, x, psi: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32):
    """``int psi_delta(x,y) [v(y) - grad eta(x) ((x-y).v(y)) / eta(x)] dy``.

    Satisfies ``grad K_delta u = K~_delta grad u``.
    """
    X, scalar = _points(rule, x)
    out = []
    for xi in X:
        Z, W, Y, ex = x_side_rule(rule, horizon, xi, psi, 0.0, v.kinks, _order(v, n_radial), n_angular)
        if ex <= 0:
            out.append(v.value(xi[None, :])[0])
            continue
        gx = _eta_parts(rule, horizon.delta, xi[None, :])[1][0]
        vy = v.value(Y)
        wt = W * psi(np.linalg.norm(Z, axis=1))
        out.append(wt @ vy + gx * float(wt @ np.sum(Z * vy, axis=1)))
    return _out(np.asarray(out), scalar)


def k_tilde_star(w: Field, x, psi: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32):
    """The L2 adjoint of :func:`k_tilde`.

    ``int psi_delta(y,x) [w(y) + (x-y) grad eta(y).w(y) / eta(y)] dy``.
    """
    X, scalar = _points(rule, x)
    d = X.shape[1]
    out = []
    for xi in X:
        if _eta_parts(rule, horizon.delta, xi[None, :])[0][0] <= 0:
            out.append(np.zeros(d))
            continue
        V, W, Y, e, g = y_side_rule(rule, horizon, xi, psi, 0.0, w.kinks, _order(w, n_radial), n_angular)
        wy = w.value(Y)
        wt = W * psi(np.linalg.norm(V, axis=1)) / (1.0 - np.sum(g * V, axis=1))
        gw = np.sum(g * wy, axis=1)
        out.append(wt @ wy - (wt * gw) @ V)
    return _out(np.asarray(out), scalar)


def div_k_tilde_star(w: Field, x, psi: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32):
    """Divergence of :func:`k_tilde_star` by analytic differentiation of the kernel."""
    X, scalar = _points(rule, x)
    d = X.shape[1]
    out = []
    for xi in X:
        if _eta_parts(rule, horizon.delta, xi[None, :])[0][0] <= 0:
            out.append(0.0)
            continue
        V, W, Y, e, g = y_side_rule(rule, horizon, xi, psi, 0.0, w.kinks, _order(w, n_radial), n_angular)
        r = np.linalg.norm(V, axis=1)
        wy = w.value(Y)
        s = np.sum(g * wy, axis=1) / e
        vhat = V / np.where(r > 0, r, 1.0)[:, None]
        dpsi = psi.deriv(r, 1)
        integrand = -dpsi * np.sum(vhat * wy, axis=1) / e + dpsi * r * s + d * psi(r) * s
        out.append(float(np.sum(W * integrand / (1.0 - np.sum(g * V, axis=1)))))
    return _out(out, scalar)


def j_p_operators(u: Field, x, alpha: float, rho: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32):
    """``(J_{delta,alpha} u(x), P_{delta,alpha}(x))``.

    ``P = int [rho_{d,a}(x,y)/eta(x)^2 + rho_{d,a}(y,x)/eta(y)^2] dy`` and
    ``J u`` is the same average of ``u(y)`` divided by ``P``. Only
    ``alpha < d`` is required for the integrals to converge.
    """
    d = rule.distance.domain.dim
    if not 0 <= alpha < d:
        raise DivergenceError(f"alpha={alpha} must lie in [0, {d})")
    X, scalar = _points(rule, x)
    J, P = [], []
    for xi in X:
        Z, Wz, Yz, ex = x_side_rule(rule, horizon, xi, rho, -alpha, u.kinks, _order(u, n_radial), n_angular)
        if ex <= 0:
            J.append(u.value(xi[None, :])[0])
            P.append(np.inf)
            continue
        V, Wv, Yv, e, g = y_side_rule(rule, horizon, xi, rho, -alpha, u.kinks, _order(u, n_radial), n_angular)
        wz = Wz * rho(np.linalg.norm(Z, axis=1)) / ex**2
        wv = Wv * rho(np.linalg.norm(V, axis=1)) / (e**2 * (1.0 - np.sum(g * V, axis=1)))
        Pi = wz.sum() + wv.sum()
        J.append((wz @ u.value(Yz) + wv @ u.value(Yv)) / Pi)
        P.append(Pi)
    return _out(J, scalar), _out(P, scalar)


def _fd_grad(fn, X: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    d = X.shape[1]
    G = np.zeros((len(X), d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        G[:, k] = (np.asarray(fn(X + e)) - np.asarray(fn(X - e))) / (2 * h)
    return G


def mollify_data(f, psi: RadialProfile, rule: LocalizationRule, horizon: Horizon, n_radial: int = 32, n_angular: int = 32) -> Field:
    """The regularized datum ``f_delta = K*_delta f`` as a closed-form field.

    A :class:`DualDatum` ``(f0, f1)`` gives ``K* f0 - div K~* f1``. The
    gradient of the result is a central difference of step ``FD_STEP``.
    """
    datum = f if isinstance(f, DualDatum) else DualDatum(f)
    d = rule.distance.domain.dim

    def value(X):
        out = np.asarray(k_delta_star(datum.f0, X, psi, rule, horizon, n_radial, n_angular), dtype=float)
        if datum.f1 is not None:
            out = out - np.asarray(div_k_tilde_star(datum.f1, X, psi, rule, horizon, n_radial, n_angular))
        return out

    return Field.closed(value, lambda X: _fd_grad(value, X), dim=d)


# ---------------------------------------------------------------- dual norm


def p1_matrices(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Consistent P1 mass and stiffness matrices."""
    d = mesh.dim
    G = mesh.cell_gradients()
    meas = mesh.cell_measures
    k = d + 1
    K = np.einsum("cid,cjd->cij", G, G) * meas[:, None, None]
    M0 = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    M = meas[:, None, None] * M0[None]
    rows = np.repeat(mesh.cells, k, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, k)).ravel()
    n = mesh.n_nodes
    return (
        sp.csr_matrix((M.ravel(), (rows, cols)), shape=(n, n)),
        sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n)),
    )


def load_vector(f, mesh: Mesh, order: int = 4) -> np.ndarray:
    """``F_i = <f, phi_i>`` for a scalar field or a :class:`DualDatum`."""
    datum = f if isinstance(f, DualDatum) else DualDatum(f)
    qr = omega_rule(mesh, order)
    n = mesh.n_nodes
    conn = mesh.cells[qr.cells]
    F = np.zeros(n)
    np.add.at(F, conn, (qr.weights * datum.f0.value(qr.points))[:, None] * qr.bary)
    if datum.f1 is not None:
        G = mesh.cell_gradients()[qr.cells]
        f1 = datum.f1.value(qr.points)
        np.add.at(F, conn, qr.weights[:, None] * np.einsum("qd,qkd->qk", f1, G))
    return F


def dual_norm(f, mesh: Mesh, order: int = 4) -> float:
    """Norm of ``f`` in the dual of ``W^{1,2}`` via the P1 Riesz representer."""
    M, K = p1_matrices(mesh)
    F = load_vector(f, mesh, order)
    r = spsolve((M + K).tocsc(), F)
    return float(np.sqrt(max(F @ r, 0.0)))
