"""Nonlocal seminorm, energy, form, pointwise and truncated operators, local limits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .convolutions import Field, FieldError
from .geometry import Domain, Mesh, build_mesh, exact_distance, smoothed_distance
from .kernels import (
    KernelConstants,
    KernelError,
    Nonlinearity,
    RadialProfile,
    a_delta_constant,
    bump,
    calibrate_rho,
    cbar,
    normalization_constant,
    parse_profile,
    rho_moment,
)
from .localization import Horizon, LocalizationRule, make_horizon, make_rule, validate_rule
from .quadrature import (
    _eta_parts,
    inner_rule,
    interval_rule,
    jitter_off_medial,
    omega_rule,
    x_side_rule,
    y_side_rule,
)

ETA_FLOOR = 10 * np.finfo(float).eps
P1_INNER_ORDER = 4
CHUNK = 20000
TAYLOR_RADIUS = 1e-5


class OperatorError(ValueError):
    """Raised for unsupported operator evaluations (e.g. beta >= d pointwise)."""


# ---------------------------------------------------------------- context


@dataclass
class FormContext:
    """Everything the nonlocal forms need.

    ``rho`` is calibrated so that its ``(p - beta)`` moment equals
    ``cbar(d, p)``.
    """

    domain: Domain
    p: float
    beta: float
    rule: LocalizationRule
    horizon: Horizon
    rho: RadialProfile
    consts: KernelConstants
    phi: Nonlinearity
    psi: RadialProfile
    n_radial: int = 12
    n_angular: int = 32
    quad_tol: float = 1e-6
    extra: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.domain.dim

    @property
    def delta(self) -> float:
        return self.horizon.delta

    @property
    def N(self) -> int:
        return self.rule.N

    def eta(self, X) -> np.ndarray:
        return _eta_parts(self.rule, self.delta, np.atleast_2d(X))[0]

    def eta_grad(self, X) -> np.ndarray:
        return _eta_parts(self.rule, self.delta, np.atleast_2d(X))[1]

    @property
    def rho_bar(self) -> float:
        return rho_moment(self.rho, self.p - self.beta, self.d)

    @property
    def a_factor(self) -> float:
        """``A_p(a) = a_factor * |a|^(p-2) a`` for the calibrated profile."""
        return self.rho_bar / cbar(self.d, self.p)

    def a_delta(self) -> float:
        return a_delta_constant(self.N, self.delta, self.beta, self.rho, self.rule.qprime0, self.d)

    def with_delta(self, delta: float) -> "FormContext":
        return FormContext(
            self.domain, self.p, self.beta, self.rule, make_horizon(self.rule, delta), self.rho,
            self.consts, self.phi, self.psi, self.n_radial, self.n_angular, self.quad_tol, dict(self.extra),
        )


def make_distance(domain: Domain, spec: str, psi: RadialProfile | None = None):
    """``exact`` or ``smoothed:EPS`` generalized distance.

    The smoothing window always uses the identity profile, so ``EPS`` is
    bounded by 1/6 independently of the operator's ``q``.
    """
    spec = spec.strip().strip('"')
    if spec == "exact":
        return exact_distance(domain)
    if spec.startswith("smoothed:"):
        eps = float(spec.split(":", 1)[1])
        psi = psi or bump(0.9, domain.dim)
        return smoothed_distance(domain, eps, psi, make_rule("identity", exact_distance(domain)))
    raise ValueError(f"unknown lambda '{spec}'")


def make_context(
    domain: Domain,
    p: float = 2.0,
    beta: float = 0.0,
    q: str = "identity",
    delta: float = 0.1,
    lam: str = "exact",
    rho: str = "mollified:0.8,0.9",
    psi: str = "bump:0.9",
    n_radial: int = 12,
    n_angular: int = 32,
    quad_tol: float = 1e-6,
    smoothness: int | None = None,
) -> FormContext:
    """Build and validate a :class:`FormContext` from configuration values."""
    d = domain.dim
    psi_prof = parse_profile(psi, d)
    rule = make_rule(q, make_distance(domain, lam, psi_prof), smoothness)
    validate_rule(rule)
    horizon = make_horizon(rule, delta)
    if not 0 <= beta < d + p:
        raise KernelError(f"beta={beta} must lie in [0, d+p)")
    rho_cal, consts = calibrate_rho(parse_profile(rho, d), d, p, beta)
    return FormContext(domain, float(p), float(beta), rule, horizon, rho_cal, consts, Nonlinearity(p), psi_prof, n_radial, n_angular, quad_tol)


@dataclass
class OperatorSample:
    """Operator values at points ``x`` (arrays when several points are given)."""

    x: np.ndarray
    value: np.ndarray
    D1: np.ndarray | None = None
    D2: np.ndarray | None = None
    eps: float = 0.0
    certified: bool = True


# ---------------------------------------------------------------- outer rules


def kink_crossings(ctx: FormContext, points, radii=None) -> list[float]:
    """1D points ``x`` whose interaction ball edge meets one of ``points``.

    Both the x-side ball ``|y - x| = t eta(x)`` and the dual ball
    ``|y - x| = t eta(y)`` are used for every radius ``t``.
    """
    if ctx.d != 1:
        return []
    a, b = ctx.domain.params
    radii = radii if radii is not None else tuple(ctx.rho.breaks) + (ctx.rho.support,)
    out = []
    e = lambda s: float(ctx.eta(np.array([[s]]))[0])
    for m in points:
        if not a < m < b:
            continue
        em = e(m)
        for t in radii:
            out += [m - t * em, m + t * em]
            for sgn, lo, hi in ((1.0, a, m), (-1.0, m, b)):
                f = lambda s: s + sgn * t * e(s) - m
                if f(lo) * f(hi) < 0:
                    out.append(brentq(f, lo, hi, xtol=1e-14))
    return sorted(s for s in out if a < s < b)


def outer_rule(ctx: FormContext, u: Field | None = None, breaks=(), n_panels: int = 32, order: int = 8, grade: int = 12, h: float = 0.1):
    """Default outer quadrature ``(X, W)`` over the domain.

    P1 fields use their mesh; closed-form 1D integrands use composite
    Gauss-Legendre graded toward the boundary with breaks at the medial
    point and at ball-edge crossings; 2D closed forms use a triangulation.
    """
    if u is not None and u.is_p1:
        qr = omega_rule(u.mesh, 4)
        return qr.points, qr.weights
    if ctx.d == 1:
        a, b = ctx.domain.params
        med = list(ctx.rule.distance.kinks())
        br = list(breaks) + med + kink_crossings(ctx, med + list(breaks))
        return interval_rule(a, b, br, n_panels, order, grade)
    qr = omega_rule(build_mesh(ctx.domain, h), 4)
    return qr.points, qr.weights


# ---------------------------------------------------------------- double integrals


def _pairs(ctx: FormContext, X, W, profile: RadialProfile, w_exp: float, kinks=(), n_inner=None):
    """Yield chunks ``(idx, Y, r, c)`` of the x-side double rule.

    ``c`` carries the outer weight, the inner weight ``|z|^w_exp`` and the
    profile value; ``r = |x - y|``.
    """
    X = jitter_off_medial(ctx.rule, np.atleast_2d(X))
    n_inner = n_inner or ctx.n_radial
    ex = ctx.eta(X)
    live = np.flatnonzero(ex > ETA_FLOOR)
    if ctx.d == 1:
        acc = []
        size = 0
        for i in live:
            Z, Wz, Y, e = x_side_rule(ctx.rule, ctx.horizon, X[i], profile, w_exp, kinks, n_inner, ctx.n_angular)
            r = e * np.abs(Z[:, 0])
            acc.append((np.full(len(Y), i), Y, r, W[i] * Wz * profile(np.abs(Z[:, 0]))))
            size += len(Y)
            if size >= CHUNK:
                yield tuple(np.concatenate(a) for a in zip(*acc))
                acc, size = [], 0
        if acc:
            yield tuple(np.concatenate(a) for a in zip(*acc))
        return
    Z, Wz = inner_rule(ctx.d, w_exp, profile.support, profile.breaks, (), n_inner, ctx.n_angular)
    rz = np.linalg.norm(Z, axis=1)
    cz = Wz * profile(rz)
    step = max(1, CHUNK // len(Z))
    for s in range(0, len(live), step):
        idx = live[s : s + step]
        e = ex[idx]
        Y = (X[idx][:, None, :] + e[:, None, None] * Z[None]).reshape(-1, ctx.d)
        r = (e[:, None] * rz[None, :]).ravel()
        c = (W[idx][:, None] * cz[None, :]).ravel()
        yield np.repeat(idx, len(Z)), Y, r, c


def _quotient(u: Field, X, idx, Y, r, cache):
    key = id(u)
    if key not in cache:
        cache[key] = u.value(X)
    return (cache[key][idx] - u.value(Y)) / r


def _check_beta(ctx: FormContext):
    if not 0 <= ctx.beta < ctx.d + ctx.p:
        raise KernelError(f"beta={ctx.beta} must lie in [0, d+p)")


def _quad(ctx, u, quad, v=None):
    if quad is not None:
        return quad
    if u.is_p1:
        return outer_rule(ctx, u)
    if v is not None and v.is_p1:
        return outer_rule(ctx, v)
    return outer_rule(ctx, breaks=tuple(u.kinks) + (tuple(v.kinks) if v is not None else ()))


def _inner_order(ctx, *fields):
    return P1_INNER_ORDER if any(f.is_p1 for f in fields) else ctx.n_radial


def _kinks(*fields):
    out = []
    for f in fields:
        out += list(f.kinks)
    return tuple(sorted(set(out)))


def seminorm(u: Field, ctx: FormContext, quad=None) -> float:
    """``[u]`` with the kernel ``C |x-y|^-beta eta(x)^-(d+p-beta)`` on ``|y-x| < eta(x)``."""
    _check_beta(ctx)
    X, W = _quad(ctx, u, quad)
    C = normalization_constant(ctx.d, ctx.beta, ctx.p)
    ind = RadialProfile("indicator", 1.0, 1.0, C)
    total, cache = 0.0, {}
    for idx, Y, r, c in _pairs(ctx, X, W, ind, ctx.p - ctx.beta, u.kinks, _inner_order(ctx, u)):
        total += float(np.sum(c * np.abs(_quotient(u, X, idx, Y, r, cache)) ** ctx.p))
    return total ** (1.0 / ctx.p)


def energy(u: Field, ctx: FormContext, quad=None) -> float:
    """``E_{p,delta}(u)``."""
    _check_beta(ctx)
    X, W = _quad(ctx, u, quad)
    total, cache = 0.0, {}
    for idx, Y, r, c in _pairs(ctx, X, W, ctx.rho, ctx.p - ctx.beta, u.kinks, _inner_order(ctx, u)):
        total += float(np.sum(c * ctx.phi.phi(_quotient(u, X, idx, Y, r, cache))))
    return total


def bilinear(u: Field, v: Field, ctx: FormContext, quad=None) -> float:
    """``B_{p,delta}(u, v)``; linear in ``v``."""
    _check_beta(ctx)
    X, W = _quad(ctx, u, quad, v)
    total, cache = 0.0, {}
    kinks = _kinks(u, v)
    for idx, Y, r, c in _pairs(ctx, X, W, ctx.rho, ctx.p - ctx.beta, kinks, _inner_order(ctx, u, v)):
        qu = _quotient(u, X, idx, Y, r, cache)
        qv = _quotient(v, X, idx, Y, r, cache)
        total += float(np.sum(c * ctx.phi.dphi(qu) * qv))
    return total


def local_bilinear(u: Field, v: Field, ctx: FormContext, quad=None) -> float:
    """``B_{p,0}(u, v) = int A_p(grad u) . grad v``."""
    if not (u.has_grad and v.has_grad):
        raise FieldError("local_bilinear needs gradients")
    X, W = _quad(ctx, u, quad, v)
    gu, gv = u.grad(X), v.grad(X)
    nu = np.linalg.norm(gu, axis=1)
    return float(ctx.a_factor * np.sum(W * nu ** (ctx.p - 2) * np.sum(gu * gv, axis=1)))


def local_operator(u: Field, x, ctx: FormContext) -> np.ndarray:
    """``-div A_p(grad u)(x)``."""
    if not (u.has_grad and u.has_hess):
        raise FieldError("local_operator needs gradient and Hessian")
    X = np.atleast_2d(np.asarray(x, dtype=float).reshape(-1, ctx.d))
    g, H = u.grad(X), u.hess(X)
    n2 = np.sum(g * g, axis=1)
    lap = np.trace(H, axis1=1, axis2=2)
    out = -lap * n2 ** ((ctx.p - 2) / 2)
    if ctx.p != 2:
        gHg = np.einsum("ni,nij,nj->n", g, H, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            out -= np.where(n2 > 0, (ctx.p - 2) * n2 ** ((ctx.p - 4) / 2) * gHg, 0.0)
    return ctx.a_factor * out


# ---------------------------------------------------------------- pointwise operator


def _differences(u: Field, xi, ux: float, S: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``u(x) - u(x + S)``; second-order Taylor in ``S`` on very small balls.

    Below ``TAYLOR_RADIUS`` the direct difference loses more digits to
    cancellation than the Taylor remainder costs.
    """
    if len(S) and u.has_hess and not u.is_p1 and np.max(np.abs(S)) < TAYLOR_RADIUS:
        g = u.grad(xi[None, :])[0]
        H = u.hess(xi[None, :])[0]
        return -(S @ g) - 0.5 * np.einsum("ni,ij,nj->n", S, H, S)
    return ux - u.value(Y)


def _sides(u: Field, xi, ctx: FormContext, cut: float, grad_split: bool):
    """x-side and y-side contributions (and the D1/D2 integrals) at one point."""
    w = ctx.p - 1 - ctx.beta
    rule, hz = ctx.rule, ctx.horizon
    uk = u.kinks
    n = _inner_order(ctx, u)
    Z, Wz, Yz, ex = x_side_rule(rule, hz, xi, ctx.rho, w, uk, n, ctx.n_angular, cut)
    ux = float(u.value(xi[None, :])[0])
    rz = np.linalg.norm(Z, axis=1)
    Qz = _differences(u, xi, ux, ex * Z, Yz) / (ex * rz)
    wz = Wz * ctx.rho(rz) / ex
    V, Wv, Yv, ey, gy, S = y_side_rule(rule, hz, xi, ctx.rho, w, uk, n, ctx.n_angular, cut, displacement=True)
    rv = np.linalg.norm(V, axis=1)
    Qv = _differences(u, xi, ux, S, Yv) / (ey * rv)
    jac = 1.0 - np.sum(gy * V, axis=1)
    wv = Wv * ctx.rho(rv) / (ey * jac)
    dphi = ctx.phi.dphi
    xs = float(wz @ dphi(Qz))
    ys = float(wv @ dphi(Qv))
    if not grad_split:
        return xs, ys, None, None
    gx = u.grad(xi[None, :])[0]
    Az = -(Z / rz[:, None]) @ gx
    Av = -(V / rv[:, None]) @ gx
    wv0 = Wv * ctx.rho(rv) / ex
    D1 = float((wv - wv0) @ dphi(Av))
    D2 = float(wz @ (dphi(Qz) - dphi(Az)) + wv @ (dphi(Qv) - dphi(Av)))
    return xs, ys, D1, D2


def _apply(u: Field, x, ctx: FormContext, eps: float, split: bool) -> OperatorSample:
    if ctx.beta >= ctx.d:
        raise OperatorError("pointwise evaluation requires beta < d; use the truncated or weak forms")
    X = jitter_off_medial(ctx.rule, np.atleast_2d(np.asarray(x, dtype=float).reshape(-1, ctx.d)))
    ex = ctx.eta(X)
    vals, d1s, d2s = np.zeros(len(X)), np.zeros(len(X)), np.zeros(len(X))
    for i, xi in enumerate(X):
        if ex[i] <= ETA_FLOOR or (eps > 0 and ex[i] / ctx.delta <= eps):
            continue
        xs, ys, D1, D2 = _sides(u, xi, ctx, eps, split)
        vals[i] = xs + ys
        if split:
            d1s[i], d2s[i] = D1, D2
    certified = ctx.rule.distance.smooth or ctx.rule.N > 1
    return OperatorSample(X, vals, d1s if split else None, d2s if split else None, eps, certified)


def apply_pointwise(u: Field, x, ctx: FormContext) -> OperatorSample:
    """``L_{p,delta} u(x)`` by the absolutely convergent integral (``beta < d``).

    ``certified`` is false when ``eta`` is built from the exact distance
    with a first-order ``q``, where ``eta`` is not in ``W^{2,inf}``.
    """
    return _apply(u, x, ctx, 0.0, False)


def apply_truncated(u: Field, x, eps: float, ctx: FormContext) -> OperatorSample:
    """Truncated operator: profile restricted to ``eps <= |t| < 1``, zero where ``q(lambda(x)) <= eps``."""
    if not 0 < eps < 1:
        raise OperatorError("eps must lie in (0, 1)")
    return _apply(u, x, ctx, eps, False)


def split_D1_D2(u: Field, x, ctx: FormContext) -> OperatorSample:
    """``L u = D1 + D2``: the horizon-asymmetry part and the Taylor-remainder part."""
    if not u.has_grad:
        raise FieldError("split_D1_D2 needs a gradient")
    return _apply(u, x, ctx, 0.0, True)


# ---------------------------------------------------------------- P1 pair form


@dataclass
class PairForm:
    """Discrete x-side form ``sum_k c_k Phi(D u)_k`` for P1 fields.

    ``D`` maps nodal values to difference quotients ``(u(x)-u(y))/|x-y|``
    at every quadrature pair; ``c`` holds the pair weights.
    """

    D: sp.csr_matrix
    c: np.ndarray
    phi: Nonlinearity

    def energy(self, u: np.ndarray) -> float:
        return float(self.c @ self.phi.phi(self.D @ u))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.D.T @ (self.c * self.phi.dphi(self.D @ u))

    def hessian(self, u: np.ndarray | None = None) -> sp.csr_matrix:
        w = self.c if u is None or self.phi.p == 2 else self.c * self.phi.ddphi(self.D @ u)
        return (self.D.T @ sp.diags(w) @ self.D).tocsr()

    def stiffness(self) -> sp.csr_matrix:
        """Symmetric stiffness ``A_ij = B(phi_j, phi_i)`` (p = 2)."""
        A = self.hessian()
        return ((A + A.T) * 0.5).tocsr()


def assemble_pairs(ctx: FormContext, mesh: Mesh, order: int = 4, n_inner: int = P1_INNER_ORDER, profile=None) -> PairForm:
    """Assemble the difference-quotient matrix of the x-side form on ``mesh``."""
    _check_beta(ctx)
    qr = omega_rule(mesh, order)
    profile = profile or ctx.rho
    kinks = tuple(mesh.nodes[:, 0]) if mesh.dim == 1 else ()
    k = mesh.dim + 1
    rows, cols, vals, cs = [], [], [], []
    start = 0
    for idx, Y, r, c in _pairs(ctx, qr.points, qr.weights, profile, ctx.p - ctx.beta, kinks, n_inner):
        cy = mesh.locate(Y)
        if np.any(cy < 0):
            raise FieldError("interaction point outside the mesh")
        by = mesh.barycentric(Y, cy)
        m = len(r)
        rid = np.arange(start, start + m)
        rows += [np.repeat(rid, k), np.repeat(rid, k)]
        cols += [mesh.cells[qr.cells[idx]].ravel(), mesh.cells[cy].ravel()]
        vals += [(qr.bary[idx] / r[:, None]).ravel(), (-by / r[:, None]).ravel()]
        cs.append(c)
        start += m
    D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(start, mesh.n_nodes))
    return PairForm(D, np.concatenate(cs), ctx.phi)
