"""Quadrature on Omega and on interaction balls, coordinate maps and kernel masses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .geometry import Mesh, as_points
from .localization import Horizon, LocalizationRule, make_horizon, q_eval

MEDIAL_JITTER = 1e-9


class DivergenceError(ValueError):
    """Raised when a radial weight is not integrable at the origin."""


class MapError(ValueError):
    """Raised when a coordinate map leaves its admissible range."""


# ---------------------------------------------------------------- 1D tables


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _gauss_jacobi_cached(n: int, w: float) -> tuple[np.ndarray, np.ndarray]:
    x, wt = roots_jacobi(n, 0.0, w)
    return 0.5 * (x + 1.0), wt / 2.0 ** (w + 1.0)


def gauss_jacobi(n: int, w: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1] for the weight ``s**w``."""
    if w <= -1:
        raise DivergenceError(f"weight s^{w} is not integrable at 0")
    return _gauss_jacobi_cached(n, round(float(w), 13))


def _is_smooth_power(w: float) -> bool:
    return w >= 0 and abs(w - round(w)) < 1e-14


def rule_1d(breaks, w: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule for ``int |s|^w g(s) ds`` over ``[breaks[0], breaks[-1]]``.

    Pieces ending at 0 use Gauss-Jacobi with the weight absorbed; other
    pieces use Gauss-Legendre, geometrically graded toward 0 when the
    weight is not a smooth polynomial. Returned weights include ``|s|^w``.
    """
    b = np.unique(np.asarray(breaks, dtype=float))
    if b[0] < 0 < b[-1] and not np.any(b == 0):
        b = np.sort(np.append(b, 0.0))
    xs, ws = [], []
    gx, gw = gauss_legendre(n)
    smooth = _is_smooth_power(w)
    for lo, hi in zip(b[:-1], b[1:]):
        if hi - lo <= 0:
            continue
        if lo == 0.0 or hi == 0.0:
            jx, jw = gauss_jacobi(n, w)
            L = hi - lo
            s = jx * L if lo == 0.0 else -jx * L
            xs.append(s)
            ws.append(jw * L ** (w + 1.0))
            continue
        near, far = (lo, hi) if lo > 0 else (-hi, -lo)
        sign = 1.0 if lo > 0 else -1.0
        pieces = [(near, far)]
        if not smooth and near < far - near:
            cuts = [near]
            while cuts[-1] * 2 < far:
                cuts.append(cuts[-1] * 2)
            cuts.append(far)
            pieces = list(zip(cuts[:-1], cuts[1:]))
        for a, c in pieces:
            s = a + (c - a) * gx
            xs.append(sign * s)
            ws.append((c - a) * gw * s**w)
    return np.concatenate(xs), np.concatenate(ws)


def radial_rule(support: float, breaks, w: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule for ``int_0^support r^w g(r) dr`` split at ``breaks``."""
    pts = [0.0] + [float(t) for t in breaks if 0 < t < support] + [float(support)]
    return rule_1d(pts, w, n)


def sphere_rule(d: int, n_angular: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Directions and surface weights (summing to the sphere measure)."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    th = 2 * math.pi * (np.arange(n_angular) + 0.5) / n_angular
    return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n_angular, 2 * math.pi / n_angular)


def half_sphere_rule(theta: np.ndarray, n_angular: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Directions with ``theta . omega > 0`` and their surface weights."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size == 1:
        return np.array([[float(np.sign(theta[0]))]]), np.array([1.0])
    phi0 = math.atan2(theta[1], theta[0])
    gx, gw = gauss_legendre(n_angular)
    phi = phi0 - 0.5 * math.pi + math.pi * gx
    return np.stack([np.cos(phi), np.sin(phi)], axis=1), math.pi * gw


# ---------------------------------------------------------------- ball rules


@dataclass(frozen=True)
class BallRule:
    """Polar-product rule on B(0, support) with ``|z|^w`` absorbed."""

    d: int
    w: float
    points: np.ndarray
    weights: np.ndarray
    radii: np.ndarray
    directions: np.ndarray


def ball_rule(
    d: int,
    w: float,
    n_radial: int = 24,
    n_angular: int = 64,
    breaks: tuple = (),
    support: float = 1.0,
) -> BallRule:
    """Rule for ``int_{B(0,support)} |z|^w g(z) dz`` in polar coordinates.

    The radial factor ``r^(w+d-1)`` is absorbed with Gauss-Jacobi on the
    piece touching the origin; ``breaks`` split the radial interval.
    """
    if w <= -d:
        raise DivergenceError(f"|z|^{w} is not integrable at 0 in dimension {d}")
    r, wr = radial_rule(support, breaks, w + d - 1, n_radial)
    dirs, wd = sphere_rule(d, n_angular)
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    wts = (wr[:, None] * wd[None, :]).ravel()
    return BallRule(d, float(w), pts, wts, np.repeat(r, len(dirs)), np.tile(dirs, (len(r), 1)))


def inner_rule(
    d: int,
    w: float,
    support: float,
    radial_breaks=(),
    extra=(),
    n_radial: int = 12,
    n_angular: int = 32,
    cut: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the ball of radius ``support`` for ``|z|^w g(z)``.

    In 1D, ``extra`` lists additional breakpoints (kinks of g) and ``cut``
    removes ``|z| < cut``. Returns points of shape ``(m, d)`` and weights.
    """
    if d == 1:
        rb = [t for t in radial_breaks if 0 < t < support]
        pts = [-support, support, 0.0] + rb + [-t for t in rb]
        if cut > 0:
            pts += [cut, -cut]
        pts += [float(e) for e in extra if -support < e < support]
        s, ws = rule_1d(pts, w, n_radial)
        if cut > 0:
            keep = np.abs(s) >= cut
            s, ws = s[keep], ws[keep]
        return s[:, None], ws
    br = list(radial_breaks) + ([cut] if cut > 0 else [])
    rule = ball_rule(d, w, n_radial, n_angular, tuple(br), support)
    if cut > 0:
        keep = rule.radii >= cut
        return rule.points[keep], rule.weights[keep]
    return rule.points, rule.weights


# ---------------------------------------------------------------- Omega rules


@dataclass(frozen=True)
class OmegaRule:
    """Per-cell Gauss rule on a mesh."""

    mesh: Mesh
    order: int
    points: np.ndarray
    weights: np.ndarray
    cells: np.ndarray
    bary: np.ndarray


def omega_rule(mesh: Mesh, order: int = 4) -> OmegaRule:
    """Gauss-Legendre per segment (1D) or collapsed Gauss rule per triangle (2D)."""
    P = mesh.nodes[mesh.cells]
    meas = mesh.cell_measures
    nc = len(mesh.cells)
    if mesh.dim == 1:
        gx, gw = gauss_legendre(order)
        bary = np.stack([1 - gx, gx], axis=1)
        pts = P[:, 0, 0][:, None] * (1 - gx)[None, :] + P[:, 1, 0][:, None] * gx[None, :]
        wts = meas[:, None] * gw[None, :]
        return OmegaRule(mesh, order, pts.reshape(-1, 1), wts.ravel(), np.repeat(np.arange(nc), order), np.tile(bary, (nc, 1)))
    ux, uw = gauss_jacobi(order, 1.0)
    vx, vw = gauss_legendre(order)
    U, V = np.meshgrid(ux, vx, indexing="ij")
    W = np.outer(uw, vw).ravel()
    l1 = (U * (1 - V)).ravel()
    l2 = (U * V).ravel()
    bary = np.stack([1 - l1 - l2, l1, l2], axis=1)
    pts = np.einsum("qk,ckd->cqd", bary, P).reshape(-1, 2)
    wts = (2 * meas[:, None] * W[None, :]).ravel()
    m = len(W)
    return OmegaRule(mesh, order, pts, wts, np.repeat(np.arange(nc), m), np.tile(bary, (nc, 1)))


def jitter_off_medial(rule: LocalizationRule, x: np.ndarray) -> np.ndarray:
    """Move points lying on a kink of the distance by ``MEDIAL_JITTER``."""
    x = np.array(x, dtype=float, copy=True)
    kinks = rule.distance.kinks() if rule.distance is not None else np.empty(0)
    if x.shape[1] == 1:
        for k in kinks:
            on = np.abs(x[:, 0] - k) < MEDIAL_JITTER
            x[on, 0] = k - MEDIAL_JITTER
    return x


# ---------------------------------------------------------------- coordinate maps


def _eta_parts(rule: LocalizationRule, scale: float, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam = rule.distance.value(pts)
    e = scale * q_eval(rule, lam, 0)
    g = (scale * q_eval(rule, lam, 1))[:, None] * rule.distance.grad(pts)
    return e, g


def zeta_map(x, z, eps: float, rule: LocalizationRule) -> tuple[np.ndarray, float]:
    """``x + eta_eps(x) z`` with Jacobian determinant ``1 + grad eta_eps(x) . z``."""
    d = rule.distance.domain.dim
    xp = as_points(x, d)
    zp = as_points(z, d)
    if np.linalg.norm(zp) > 1 + 1e-14:
        raise MapError("|z| must be at most 1")
    make_horizon(rule, eps)
    e, g = _eta_parts(rule, eps, xp)
    point = xp[0] + e[0] * zp[0]
    det = float(1.0 + g[0] @ zp[0])
    if det <= 2.0 / 3.0:
        raise MapError(f"zeta determinant {det:.6g} <= 2/3")
    if not rule.distance.domain.contains(point[None, :])[0]:
        raise MapError("zeta image left the domain")
    return point, det


def solve_upsilon(x: np.ndarray, V: np.ndarray, eta_fn, grad_fn, tol: float = 1e-14, maxit: int = 60, displacement: bool = False) -> np.ndarray:
    """Solve ``y = x + eta(y) v`` for every row ``v`` of ``V``.

    The unknown is the displacement ``s = y - x``, so the stopping test is
    relative to ``|s|`` even where ``eta`` is tiny. A few contraction steps
    are followed by Newton iterations using the Sherman-Morrison inverse of
    ``I - v grad(eta)^T``.
    """
    X = np.broadcast_to(x, V.shape)
    S = eta_fn(X.copy())[:, None] * V
    for _ in range(3):
        S = eta_fn(X + S)[:, None] * V
    for _ in range(maxit):
        Y = X + S
        e = eta_fn(Y)
        g = grad_fn(Y)
        F = S - e[:, None] * V
        gv = np.sum(g * V, axis=1)
        gF = np.sum(g * F, axis=1)
        step = F + V * (gF / (1.0 - gv))[:, None]
        S = S - step
        if np.all(np.abs(step) <= tol * np.abs(S) + 1e-300):
            break
    return S if displacement else X + S


def upsilon_map(x, y, delta: float, rule: LocalizationRule) -> tuple[np.ndarray, float]:
    """``(y - x)/eta(y)`` with Jacobian determinant of ``y -> upsilon``."""
    d = rule.distance.domain.dim
    hz = make_horizon(rule, delta)
    xp, yp = as_points(x, d), as_points(y, d)
    e, g = _eta_parts(rule, delta, yp)
    if e[0] <= 0:
        raise MapError("y lies on the boundary")
    v = (yp[0] - xp[0]) / e[0]
    if np.linalg.norm(v) > 1 + 1e-14:
        raise MapError("y is not in the dual interaction set of x")
    det = float((e[0] - g[0] @ (yp[0] - xp[0])) / e[0] ** (d + 1))
    k1d = rule.distance.kappa1 * hz.delta
    lo, hi = (1 - k1d) / e[0] ** d, (1 + k1d) / e[0] ** d
    if not lo * (1 - 1e-12) <= det <= hi * (1 + 1e-12):
        raise MapError(f"determinant {det:.6g} outside [{lo:.6g}, {hi:.6g}]")
    return v, det


def y_side_points(rule: LocalizationRule, horizon: Horizon, x: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points ``y(v)``, ``eta(y)`` and ``grad eta(y)`` for the upsilon rule at ``x``."""

    def ef(P):
        return _eta_parts(rule, horizon.delta, P)[0]

    def gf(P):
        return _eta_parts(rule, horizon.delta, P)[1]

    Y = solve_upsilon(x, V, ef, gf)
    e, g = _eta_parts(rule, horizon.delta, Y)
    return Y, e, g


def upsilon_kinks(rule: LocalizationRule, horizon: Horizon, x: float, points=()) -> list[float]:
    """Upsilon coordinates of given 1D points (and of the distance kinks)."""
    pts = list(rule.distance.kinks()) + list(points)
    if not pts:
        return []
    P = np.asarray(pts, dtype=float)[:, None]
    e = _eta_parts(rule, horizon.delta, P)[0]
    ok = e > 0
    return list((P[ok, 0] - x) / e[ok])


def psi_mass(psi, delta: float, alpha: float, x, rule: LocalizationRule, n_radial: int = 24, n_angular: int = 64, check: bool = True) -> float:
    """``int_Omega psi_{delta,alpha}(y, x) dy`` via the upsilon map.

    The integral becomes ``int psi(|v|)|v|^-alpha / (1 - grad eta(y).v) dv``.
    The Lemma-type sandwich ``M/(1+k1 d) <= Psi <= M/(1-k1 d)`` is asserted
    when ``check`` is set.
    """
    d = rule.distance.domain.dim
    if alpha >= d:
        raise DivergenceError(f"alpha={alpha} must be below d={d}")
    hz = make_horizon(rule, delta)
    xp = jitter_off_medial(rule, as_points(x, d))[0]
    extra = upsilon_kinks(rule, hz, xp[0]) if d == 1 else ()
    V, W = inner_rule(d, -alpha, psi.support, psi.breaks, extra, n_radial, n_angular)
    if psi.scale == 0:
        return 0.0
    _, _, g = y_side_points(rule, hz, xp, V)
    val = float(np.sum(W * psi(np.linalg.norm(V, axis=1)) / (1.0 - np.sum(g * V, axis=1))))
    if check:
        Vb, Wb = inner_rule(d, -alpha, psi.support, psi.breaks, (), n_radial, n_angular)
        M = float(np.sum(Wb * psi(np.linalg.norm(Vb, axis=1))))
        k1d = rule.distance.kappa1 * hz.delta
        if not M / (1 + k1d) * (1 - 1e-9) <= val <= M / (1 - k1d) * (1 + 1e-9):
            raise MapError(f"Psi={val:.6g} violates the sandwich around M={M:.6g}")
    return val


# ---------------------------------------------------------------- interaction rules


def x_side_rule(
    rule: LocalizationRule,
    horizon: Horizon,
    x: np.ndarray,
    profile,
    w: float,
    kinks=(),
    n_radial: int = 12,
    n_angular: int = 32,
    cut: float = 0.0,
):
    """Rule in ``z = (y - x)/eta(x)`` over the profile support.

    Returns ``(Z, W, Y, eta_x)``; ``W`` includes ``|z|^w``. In 1D the
    physical points ``kinks`` become breakpoints.
    """
    d = x.shape[0]
    ex = float(_eta_parts(rule, horizon.delta, x[None, :])[0][0])
    if ex <= 0:
        return np.empty((0, d)), np.empty(0), np.empty((0, d)), ex
    extra = [(k - x[0]) / ex for k in kinks] if d == 1 else ()
    Z, W = inner_rule(d, w, profile.support, profile.breaks, extra, n_radial, n_angular, cut)
    return Z, W, x[None, :] + ex * Z, ex


def y_side_rule(
    rule: LocalizationRule,
    horizon: Horizon,
    x: np.ndarray,
    profile,
    w: float,
    kinks=(),
    n_radial: int = 12,
    n_angular: int = 32,
    cut: float = 0.0,
    displacement: bool = False,
):
    """Rule in ``v = (y - x)/eta(y)`` over the profile support.

    Returns ``(V, W, Y, eta_y, grad_eta_y)`` and, with ``displacement``,
    also ``S = y - x`` computed without cancellation. The Jacobian factor
    ``eta(y)^d / (1 - grad eta(y).v)`` is left to the caller.
    """
    d = x.shape[0]
    extra = upsilon_kinks(rule, horizon, x[0], kinks) if d == 1 else ()
    V, W = inner_rule(d, w, profile.support, profile.breaks, extra, n_radial, n_angular, cut)
    if not displacement:
        Y, e, g = y_side_points(rule, horizon, x, V)
        return V, W, Y, e, g

    def ef(P):
        return _eta_parts(rule, horizon.delta, P)[0]

    def gf(P):
        return _eta_parts(rule, horizon.delta, P)[1]

    S = solve_upsilon(x, V, ef, gf, displacement=True)
    Y = x[None, :] + S
    e, g = _eta_parts(rule, horizon.delta, Y)
    return V, W, Y, e, g, S


def interval_rule(a: float, b: float, breaks=(), n_panels: int = 32, order: int = 8, grade: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on ``[a, b]`` with optional end grading.

    ``grade`` adds that many geometrically shrinking panels (ratio 1/2)
    toward each endpoint; ``breaks`` are forced panel boundaries.
    """
    L = b - a
    cuts = list(np.linspace(a, b, n_panels + 1))
    hp = L / n_panels
    for k in range(1, grade + 1):
        # deeper grading only trades quadrature error for rounding in y near b
        if hp * 0.5**k < 1e-9 * L:
            break
        cuts += [a + hp * 0.5**k, b - hp * 0.5**k]
    cuts += [float(t) for t in breaks if a < t < b]
    c = np.unique(np.asarray(cuts))
    gx, gw = gauss_legendre(order)
    lo, hi = c[:-1], c[1:]
    X = (lo[:, None] + (hi - lo)[:, None] * gx[None, :]).ravel()
    W = ((hi - lo)[:, None] * gw[None, :]).ravel()
    return X[:, None], W
