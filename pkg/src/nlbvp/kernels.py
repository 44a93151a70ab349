"""Radial profiles, the nonlinearity, normalization constants and boundary fluxes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gamma as gamma_fn

from .geometry import as_points
from .localization import Horizon, LocalizationRule, eta
from .quadrature import DivergenceError, half_sphere_rule, radial_rule, sphere_rule

MOMENT_ORDER = 64


class KernelError(ValueError):
    pass


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True)
class RadialProfile:
    """Even, nonnegative, compactly supported radial profile.

    ``kind`` is ``mollified`` (1 on [0, plateau], cubic C^1 decay to 0 at
    ``support``), ``indicator`` (1 on [0, support)) or ``bump``
    (``exp(-1/(1-(t/support)^2))``). Values are multiplied by ``scale``.
    """

    kind: str
    plateau: float
    support: float
    scale: float = 1.0

    @property
    def breaks(self) -> tuple:
        if self.kind == "mollified":
            return (self.plateau,)
        if self.kind == "bump":
            return (0.5 * self.support,)
        return ()

    @property
    def smoothness(self) -> int:
        return {"mollified": 1, "indicator": 0}.get(self.kind, 1000)

    def scaled(self, c: float) -> "RadialProfile":
        return replace(self, scale=self.scale * float(c))

    def __call__(self, t) -> np.ndarray:
        return self.deriv(t, 0)

    def deriv(self, t, k: int = 1) -> np.ndarray:
        """Derivative of order ``k`` in the radial variable ``t >= 0``."""
        t = np.abs(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        s, c = self.support, self.plateau
        if self.kind == "indicator":
            if k == 0:
                out[t < s] = 1.0
        elif self.kind == "mollified":
            if k == 0:
                out[t <= c] = 1.0
            m = (t > c) & (t < s)
            tau = (t[m] - c) / (s - c)
            if k == 0:
                out[m] = 1 - 3 * tau**2 + 2 * tau**3
            elif k == 1:
                out[m] = (-6 * tau + 6 * tau**2) / (s - c)
            elif k == 2:
                out[m] = (-6 + 12 * tau) / (s - c) ** 2
        elif self.kind == "bump":
            m = t < s
            u = t[m] / s
            om = 1 - u * u
            f = np.exp(-1.0 / om)
            g = -2 * u / om**2
            if k == 0:
                out[m] = f
            elif k == 1:
                out[m] = f * g / s
            elif k == 2:
                out[m] = f * (g * g - (2 + 6 * u * u) / om**3) / s**2
        else:
            raise KernelError(f"unknown profile kind '{self.kind}'")
        return self.scale * out


def mollified_indicator(plateau: float = 0.8, support: float = 0.9) -> RadialProfile:
    if not 0 < plateau <= support < 1:
        raise KernelError("need 0 < plateau <= support < 1")
    kind = "indicator" if plateau == support else "mollified"
    return RadialProfile(kind, plateau, support)


def bump(support: float = 0.9, d: int = 1, alpha: float = 0.0) -> RadialProfile:
    """C-infinity bump normalized so that ``int |z|^-alpha psi(|z|) dz = 1``."""
    if not 0 < support < 1:
        raise KernelError("bump support must lie in (0, 1)")
    raw = RadialProfile("bump", 0.0, support)
    return raw.scaled(1.0 / rho_moment(raw, -alpha, d))


def parse_profile(spec: str, d: int) -> RadialProfile:
    """``mollified:C,S``, ``indicator:S`` or ``bump:S``."""
    spec = spec.strip().strip('"')
    kind, _, args = spec.partition(":")
    vals = [float(a) for a in args.split(",") if a]
    if kind == "mollified":
        return mollified_indicator(*vals) if vals else mollified_indicator()
    if kind == "indicator":
        s = vals[0] if vals else 0.9
        return mollified_indicator(s, s)
    if kind == "bump":
        return bump(vals[0] if vals else 0.9, d)
    raise KernelError(f"unknown profile '{spec}'")


# ---------------------------------------------------------------- nonlinearity


@dataclass(frozen=True)
class Nonlinearity:
    """``Phi_p(t) = |t|^p / p`` with growth constants ``c = C = 1``."""

    p: float = 2.0
    c: float = 1.0
    C: float = 1.0

    def __post_init__(self):
        if self.p < 2:
            raise KernelError("p >= 2 is required")

    def phi(self, t):
        return np.abs(t) ** self.p / self.p

    def dphi(self, t):
        t = np.asarray(t, dtype=float)
        return t if self.p == 2 else np.abs(t) ** (self.p - 2) * t

    def ddphi(self, t):
        t = np.asarray(t, dtype=float)
        return np.ones_like(t) if self.p == 2 else (self.p - 1) * np.abs(t) ** (self.p - 2)


# ---------------------------------------------------------------- constants


def sphere_measure(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d=1)."""
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


def cbar(d: int, p: float) -> float:
    """``sqrt(pi) Gamma((d+p)/2) / (Gamma((p+1)/2) Gamma(d/2))``."""
    return float(math.sqrt(math.pi) * gamma_fn((d + p) / 2) / (gamma_fn((p + 1) / 2) * gamma_fn(d / 2)))


def sphere_average_power(d: int, p: float, n_angular: int = 4096) -> float:
    """Oracle for ``1/cbar``: the sphere average of ``|omega_1|^p``."""
    dirs, w = sphere_rule(d, n_angular)
    return float(np.sum(w * np.abs(dirs[:, 0]) ** p) / np.sum(w))


def normalization_constant(d: int, beta: float, p: float) -> float:
    """``C_{d,beta,p} = cbar(d,p) (d+p-beta) / |S^{d-1}|``."""
    if not 0 <= beta < d + p:
        raise KernelError(f"beta={beta} must lie in [0, d+p) = [0, {d + p})")
    return cbar(d, p) * (d + p - beta) / sphere_measure(d)


@dataclass
class KernelConstants:
    d: int
    p: float
    beta: float
    cbar: float
    sigma: float
    C: float
    scale: float
    rho_bar: dict = field(default_factory=dict)


def rho_moment(rho: RadialProfile, alpha: float, d: int, n: int = MOMENT_ORDER) -> float:
    """``int_{B(0,1)} |z|^alpha rho(|z|) dz`` by piecewise radial quadrature."""
    if alpha <= -d:
        raise DivergenceError(f"moment of order {alpha} diverges in dimension {d}")
    if rho.scale == 0:
        return 0.0
    r, w = radial_rule(rho.support, rho.breaks, alpha + d - 1, n)
    return float(sphere_measure(d) * np.sum(w * rho(r)))


def calibrate_rho(rho: RadialProfile, d: int, p: float, beta: float) -> tuple[RadialProfile, KernelConstants]:
    """Scale ``rho`` so that its ``(p-beta)`` moment equals ``cbar(d, p)``."""
    C = normalization_constant(d, beta, p)
    m = rho_moment(rho, p - beta, d)
    if m <= 0:
        raise KernelError("cannot calibrate a profile with zero moment")
    cb = cbar(d, p)
    scale = cb / m
    out = rho.scaled(scale)
    m2 = rho_moment(out, p - beta, d)
    if abs(m2 - cb) > 1e-10 * cb:
        raise KernelError(f"calibration post-check failed: {m2} vs {cb}")
    consts = KernelConstants(d, p, beta, cb, sphere_measure(d), C, scale, {p - beta: m2})
    return out, consts


def monotone_map(a, p: float, rho_bar: float, d: int, n_angular: int = 128) -> np.ndarray:
    """``rho_bar * avg_{S^{d-1}} Phi_p'(a.omega) omega``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    dirs, w = sphere_rule(d, n_angular)
    phi = Nonlinearity(p)
    vals = phi.dphi(dirs @ a)
    return rho_bar * (w * vals) @ dirs / np.sum(w)


def gamma_kernel(x, y, d: int, beta: float, p: float, rule: LocalizationRule, horizon: Horizon) -> np.ndarray:
    """``C |x-y|^-beta eta(x)^-(d+p-beta)`` inside the horizon ball, else 0.

    The diagonal with ``beta > 0`` returns ``inf``.
    """
    C = normalization_constant(d, beta, p)
    xp = as_points(x, d)
    yp = as_points(y, d)
    e = eta(rule, horizon, xp)[0]
    r = np.linalg.norm(yp - xp, axis=1)
    out = np.zeros(len(yp))
    inside = (r < e) & (e > 0)
    with np.errstate(divide="ignore"):
        out[inside] = C * r[inside] ** (-beta) * e ** (-(d + p - beta))
    if beta > 0:
        out[(r == 0) & (e > 0)] = np.inf
    return out


def _check_log(delta: float, qprime0: float) -> float:
    c = delta * qprime0
    if c >= 1.0 / 3.0:
        raise KernelError(f"delta*q'(0)={c:.6g} must be below 1/3")
    return c


def boundary_flux(
    N: int,
    a,
    theta,
    delta: float,
    qprime0: float,
    beta: float,
    p: float,
    rho: RadialProfile,
    n_radial: int = 32,
    n_angular: int = 128,
) -> float:
    """The boundary flux density ``BF^N_{p,delta}(a, theta)``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = a.size
    c = _check_log(delta, qprime0)
    if N > 1:
        return float(monotone_map(a, p, rho_moment(rho, p - beta, d), d, n_angular) @ theta)
    r, wr = radial_rule(rho.support, rho.breaks, p - beta + d - 1, n_radial)
    dirs, wd = sphere_rule(d, n_angular)
    mu = dirs @ theta
    cr = c * r[:, None] * mu[None, :]
    logf = (np.log1p(cr) - np.log1p(-cr)) / (2 * c * r[:, None])
    integrand = logf * Nonlinearity(p).dphi(dirs @ a)[None, :]
    return float(np.sum((wr * rho(r))[:, None] * wd[None, :] * integrand))


def boundary_flux_half(
    sign: str,
    N: int,
    a,
    theta,
    delta: float,
    qprime0: float,
    beta: float,
    p: float,
    rho: RadialProfile,
    n_radial: int = 32,
    n_angular: int = 128,
) -> float:
    """Half-space boundary flux ``BF^{N,+}`` or ``BF^{N,-}``."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = a.size
    c = _check_log(delta, qprime0)
    if N > 1:
        return 0.5 * boundary_flux(N, a, theta, delta, qprime0, beta, p, rho, n_radial, n_angular)
    r, wr = radial_rule(rho.support, rho.breaks, p - beta + d - 1, n_radial)
    dirs, wd = half_sphere_rule(theta, n_angular)
    mu = dirs @ theta
    cr = c * r[:, None] * mu[None, :]
    if sign == "+":
        logf = np.log1p(cr) / (c * r[:, None])
    else:
        logf = -np.log1p(-cr) / (c * r[:, None])
    integrand = logf * Nonlinearity(p).dphi(dirs @ a)[None, :]
    return float(np.sum((wr * rho(r))[:, None] * wd[None, :] * integrand))


def a_delta_constant(N: int, delta: float, beta: float, rho: RadialProfile, qprime0: float, d: int) -> float:
    """The Green's-identity boundary constant ``A_delta^N`` (p = 2)."""
    if N > 1:
        return rho_moment(rho, 2 - beta, d) / cbar(d, 2)
    e = np.zeros(d)
    e[-1] = 1.0
    return boundary_flux(1, e, e, delta, qprime0, beta, 2.0, rho)


def weighted_mollifier(psi: RadialProfile, delta: float, alpha: float, x, y, rule: LocalizationRule, horizon: Horizon) -> np.ndarray:
    """``eta(x)^-d psi(t) t^-alpha`` with ``t = |y-x|/eta(x)``."""
    d = rule.distance.domain.dim
    if alpha >= d:
        raise DivergenceError(f"alpha={alpha} must be below d={d}")
    xp, yp = as_points(x, d), as_points(y, d)
    e = eta(rule, horizon, xp)[0]
    if e <= 0:
        return np.zeros(len(yp))
    t = np.linalg.norm(yp - xp, axis=1) / e
    with np.errstate(divide="ignore"):
        tw = np.where(t > 0, t ** (-alpha), np.inf if alpha > 0 else 1.0)
    return e ** (-d) * psi(t) * tw


def hat(k):
    """Symmetrization ``k(x,y) + k(y,x)`` of a pointwise two-point kernel."""

    def sym(x, y):
        return k(x, y) + k(y, x)

    return sym
