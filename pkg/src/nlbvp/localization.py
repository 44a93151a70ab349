"""Localization profile q, heterogeneous horizon and admissibility checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial

from .geometry import DistanceField, as_points

BLEND_LO, BLEND_HI = 0.9, 1.1


class HorizonError(ValueError):
    """Raised when a bulk horizon violates the admissibility threshold."""


class RuleValidationError(ValueError):
    """Raised by :func:`validate_rule`; carries the violated clause."""

    def __init__(self, clause: str, point: float, detail: str = ""):
        super().__init__(f"clause '{clause}' violated at r={point:.6g}" + (f": {detail}" if detail else ""))
        self.clause = clause
        self.point = point


@dataclass(frozen=True)
class LocalizationRule:
    """The pair (q, lambda) with its constants.

    Parameters
    ----------
    kind : {"identity", "arctan", "power", "linear"}
        ``linear`` is ``q(r) = slope * r`` and exists so that inadmissible
        slopes can be detected by :func:`validate_rule`.
    j : int
        Exponent for ``power``.
    distance : DistanceField or None
        The generalized distance; ``None`` for purely one-variable use.
    smoothness : int
        Declared number of continuous derivatives of q.
    """

    kind: str = "identity"
    j: int = 1
    slope: float = 1.0
    C_q: float = 2.0
    c_q: float = 1.0
    distance: DistanceField | None = None
    smoothness: int = 1000

    @property
    def N(self) -> int:
        return self.j if self.kind == "power" else 1

    @property
    def qN0(self) -> float:
        """The first nonvanishing derivative of q at 0."""
        return float(q_eval(self, np.array([0.0]), self.N)[0])

    @property
    def qprime0(self) -> float:
        return float(q_eval(self, np.array([0.0]), 1)[0])

    def with_distance(self, distance: DistanceField) -> "LocalizationRule":
        return replace(self, distance=distance)

    @property
    def label(self) -> str:
        if self.kind == "power":
            return f"power:{self.j}"
        if self.kind == "linear":
            return f"linear:{self.slope:g}"
        return self.kind


def make_rule(spec: str, distance: DistanceField | None = None, smoothness: int | None = None) -> LocalizationRule:
    """Parse ``identity``, ``arctan``, ``power:J`` or ``linear:S``."""
    spec = spec.strip().strip('"')
    if spec == "identity":
        rule = LocalizationRule("identity", 1, 1.0, 2.0, 1.0, distance)
    elif spec == "arctan":
        rule = LocalizationRule("arctan", 1, 1.0, 2.0, 1.0, distance)
    elif spec.startswith("power:"):
        j = int(spec.split(":", 1)[1])
        if j not in (2, 3):
            raise ValueError("power q supports j in {2, 3}")
        rule = LocalizationRule("power", j, 1.0, float(2**j), BLEND_LO, distance, smoothness=3)
    elif spec.startswith("linear:"):
        s = float(spec.split(":", 1)[1])
        rule = LocalizationRule("linear", 1, s, 2.0, 1.0, distance)
    else:
        raise ValueError(f"unknown q kind '{spec}'")
    if smoothness is not None:
        rule = replace(rule, smoothness=smoothness)
    return rule


@lru_cache(maxsize=None)
def _power_pieces(j: int) -> tuple[Polynomial, float, float]:
    """Blend polynomial on [0.9, 1.1] and the plateau value.

    The derivative is ``r^(j-1)/(j-1)! * (1 - S(t))`` with the quintic
    smoothstep S, so q' stays in [0, 1] and q is C^3.
    """
    a, w = BLEND_LO, BLEND_HI - BLEND_LO
    t = Polynomial([-a / w, 1.0 / w])
    smooth = Polynomial([0, 0, 0, 10, -15, 6])(t)
    dq = Polynomial([0] * (j - 1) + [1.0 / math.factorial(j - 1)]) * (1 - smooth)
    qa = a**j / math.factorial(j)
    blend = dq.integ(lbnd=a) + qa
    return blend, qa, float(blend(BLEND_HI))


def q_eval(rule: LocalizationRule, r, k: int = 0) -> np.ndarray:
    """Derivative of order ``k`` of q at ``r`` (vectorized)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("q is only defined for r >= 0")
    if k not in (0, 1, 2, 3):
        raise ValueError("order k must be 0, 1, 2 or 3")
    if rule.kind in ("identity", "linear"):
        s = rule.slope if rule.kind == "linear" else 1.0
        return s * r if k == 0 else (np.full_like(r, s) if k == 1 else np.zeros_like(r))
    if rule.kind == "arctan":
        c = 2.0 / math.pi
        if k == 0:
            return c * np.arctan(r)
        if k == 1:
            return c / (1 + r * r)
        if k == 2:
            return -2 * c * r / (1 + r * r) ** 2
        return c * (6 * r * r - 2) / (1 + r * r) ** 3
    if rule.kind == "power":
        j = rule.j
        blend, _, top = _power_pieces(j)
        lo = r <= BLEND_LO
        mid = (r > BLEND_LO) & (r < BLEND_HI)
        out = np.zeros_like(r)
        if k <= j:
            out[lo] = r[lo] ** (j - k) / math.factorial(j - k)
        if k == 0:
            out[r >= BLEND_HI] = top
        out[mid] = blend.deriv(k)(r[mid]) if k else blend(r[mid])
        return out
    raise ValueError(f"unknown q kind '{rule.kind}'")


def horizon_threshold(rule: LocalizationRule) -> float:
    """The admissibility threshold for the bulk horizon."""
    k0 = rule.distance.kappa0 if rule.distance is not None else 1.0
    k1 = rule.distance.kappa1 if rule.distance is not None else 1.0
    cq = rule.C_q
    return 1.0 / (3.0 * max(1.0, k1, cq * k0 ** math.log2(cq)))


@dataclass(frozen=True)
class Horizon:
    delta: float
    threshold: float


def make_horizon(rule: LocalizationRule, delta: float) -> Horizon:
    thr = horizon_threshold(rule)
    if not 0 < delta < thr:
        raise HorizonError(f"delta={delta} must lie in (0, {thr:.6g}) (threshold 1/{1 / thr:.6g})")
    return Horizon(float(delta), thr)


def eta(rule: LocalizationRule, horizon: Horizon, x) -> np.ndarray:
    """``delta * q(lambda(x))``; exactly zero on the boundary."""
    return horizon.delta * q_eval(rule, rule.distance.value(x), 0)


def eta_grad(rule: LocalizationRule, horizon: Horizon, x) -> np.ndarray:
    lam = rule.distance.value(x)
    return (horizon.delta * q_eval(rule, lam, 1))[:, None] * rule.distance.grad(x)


@dataclass
class ValidationReport:
    ok: bool
    clause: str | None = None
    point: float | None = None
    checks: dict | None = None


def validate_rule(rule: LocalizationRule, r_max: float = 10.0, n: int = 2000, raise_on_fail: bool = True) -> ValidationReport:
    """Numerically check the admissibility clauses of q on a grid.

    The clauses are checked in order: ``q(0)=0``, ``q(r) > 0``,
    ``q(r) <= r``, ``0 <= q'`` and ``q' <= 1``, ``q'(r) > 0 on (0, c_q]``,
    ``doubling`` with the declared C_q (log-spaced grid from 1e-6), and
    ``vanishing order`` / ``smoothness`` for the declared N.
    """
    tol = 1e-12
    r = np.concatenate([np.geomspace(1e-6, r_max, n), np.linspace(0, r_max, n)[1:]])
    r.sort()
    q0 = float(q_eval(rule, np.array([0.0]))[0])
    q = q_eval(rule, r)
    dq = q_eval(rule, r, 1)
    checks = {}

    def fail(clause, idx, detail=""):
        if raise_on_fail:
            raise RuleValidationError(clause, float(r[idx]) if idx is not None else 0.0, detail)
        return ValidationReport(False, clause, float(r[idx]) if idx is not None else 0.0, checks)

    if abs(q0) > tol:
        return fail("q(0)=0", None, f"q(0)={q0}")
    bad = np.flatnonzero(q <= 0)
    if bad.size:
        return fail("q(r) > 0", bad[0])
    bad = np.flatnonzero(q > r * (1 + 1e-12) + tol)
    if bad.size:
        return fail("q(r) ≤ r", bad[0], f"q={q[bad[0]]:.6g}")
    bad = np.flatnonzero((dq < -tol) | (dq > 1 + tol))
    if bad.size:
        return fail("0 ≤ q' ≤ 1", bad[0], f"q'={dq[bad[0]]:.6g}")
    pos = r[(r > 0) & (r <= rule.c_q)]
    bad = np.flatnonzero(q_eval(rule, pos, 1) <= 0)
    if bad.size:
        return fail("q' > 0 on (0, c_q]", np.searchsorted(r, pos[bad[0]]))
    rl = np.geomspace(1e-6, r_max / 2, n)
    ratio = q_eval(rule, 2 * rl) / q_eval(rule, rl)
    checks["doubling_max"] = float(ratio.max())
    bad = np.flatnonzero(ratio > rule.C_q * (1 + 1e-9))
    if bad.size:
        idx = int(np.searchsorted(r, rl[bad[0]]))
        return fail("doubling", min(idx, len(r) - 1), f"q(2r)/q(r)={ratio[bad[0]]:.6g} > C_q={rule.C_q}")
    N = rule.N
    if rule.smoothness < max(N, 2 if rule.kind == "power" else 1):
        return fail("smoothness", None, f"declared k={rule.smoothness} < required {max(N, 2)}")
    for k in range(N):
        v = float(q_eval(rule, np.array([0.0]), k)[0])
        if abs(v) > tol:
            return fail("vanishing order", None, f"q^({k})(0)={v}")
    lead = float(q_eval(rule, np.array([0.0]), N)[0])
    if lead <= 0:
        return fail("vanishing order", None, f"q^({N})(0)={lead}")
    checks["N"] = N
    checks["qN0"] = lead
    return ValidationReport(True, None, None, checks)


@dataclass
class ComparabilityReport:
    in_range: bool
    ratio: float
    lower: float
    upper: float
    ok: bool
    message: str = ""


def comparability_margin(rule: LocalizationRule, horizon: Horizon, x, y) -> ComparabilityReport:
    """Check ``(1 - k1 d) eta(x) <= eta(y) <= (1 + k1 d) eta(x)``."""
    d = rule.distance.domain.dim
    xp, yp = as_points(x, d), as_points(y, d)
    ex, ey = eta(rule, horizon, xp)[0], eta(rule, horizon, yp)[0]
    k1d = rule.distance.kappa1 * horizon.delta
    if np.linalg.norm(xp - yp) > ex or ex <= 0:
        return ComparabilityReport(False, float("nan"), 1 - k1d, 1 + k1d, False, "not in interaction range")
    ratio = ey / ex
    ok = (1 - k1d) * (1 - 1e-12) <= ratio <= (1 + k1d) * (1 + 1e-12)
    return ComparabilityReport(True, float(ratio), 1 - k1d, 1 + k1d, bool(ok))
