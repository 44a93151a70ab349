"""Galerkin assembly and solvers for the nonlocal and local boundary-value problems."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .convolutions import (
    DualDatum,
    Field,
    j_p_operators,
    k_delta,
    k_delta_star,
    load_vector,
    mollify_data,
    p1_matrices,
)
from .geometry import Mesh
from .operators import FormContext, PairForm, assemble_pairs
from .quadrature import _eta_parts, gauss_legendre, jitter_off_medial, omega_rule, x_side_rule


class SolverError(RuntimeError):
    """Raised when a solve fails; ``stage`` names the failing step."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class SpecError(ValueError):
    """Raised for inconsistent problem data."""


# ---------------------------------------------------------------- problem data


@dataclass
class ProblemSpec:
    """A nonlocal (or, with ``local=True``, local) boundary-value problem.

    Parameters
    ----------
    bc : {"dirichlet", "neumann", "robin"}
    f : Field or DualDatum or None
        Poisson datum. With ``mollify`` it is replaced by ``K*_delta f``.
    g : Field or None
        Dirichlet values, or the boundary datum for Neumann/Robin.
    b : float
        Robin coefficient ``b0``.
    mu, m : float
        Weight and exponent of the lower-order term ``mu l(K_delta u)``
        with ``l(t) = |t|^m / m``.
    dirichlet_facets : array or None
        Facet indices carrying the Dirichlet condition (default all).
    """

    ctx: FormContext
    mesh: Mesh
    bc: str = "dirichlet"
    f: Field | DualDatum | None = None
    g: Field | None = None
    b: float = 0.0
    mu: float = 0.0
    m: float = 2.0
    mollify: bool = False
    dirichlet_facets: np.ndarray | None = None
    tol: float = 1e-10
    maxit: int = 20000
    local: bool = False
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.bc not in ("dirichlet", "neumann", "robin"):
            raise SpecError(f"unknown boundary condition '{self.bc}'")
        if self.mu < 0:
            raise SpecError("mu must be nonnegative")
        d, p = self.ctx.d, self.ctx.p
        pstar = d * p / (d - p) if p < d else np.inf
        if self.mu > 0 and not 1 < self.m < pstar:
            raise SpecError(f"m={self.m} must lie in (1, {pstar})")
        if self.bc == "robin" and self.b <= 0 and self.mu <= 0:
            raise SpecError("Robin problems need b0 > 0 or mu > 0 for coercivity")
        if self.bc == "dirichlet" and self.dirichlet_facets is not None and len(self.dirichlet_facets) == 0:
            raise SpecError("the Dirichlet facet set is empty")


@dataclass
class SolveReport:
    """Solution and diagnostics of a solve."""

    solution: Field
    iterations: int = 0
    residual: float = 0.0
    picard_iterations: int = 0
    energy: float = float("nan")
    seminorm: float = float("nan")
    l2: float = float("nan")
    h1: float = float("nan")
    flux: dict = field(default_factory=dict)
    wall_time: float = 0.0
    energies: list = field(default_factory=list)
    data_norm: float = float("nan")


# ---------------------------------------------------------------- linear algebra


def pcg(A, b: np.ndarray, tol: float = 1e-10, maxit: int = 20000, x0=None, project=None) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradients with relative tolerance ``tol``.

    ``project`` (optional) maps vectors onto the subspace where ``A`` is
    definite; it is applied to the right-hand side and every residual.
    """
    P = project or (lambda v: v)
    dinv = 1.0 / np.where(A.diagonal() > 0, A.diagonal(), 1.0)
    b = P(b)
    nb = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else P(np.array(x0, dtype=float))
    if nb == 0:
        return np.zeros_like(b), 0, 0.0
    r = b - P(A @ x)
    z = P(dinv * r)
    pvec = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = P(A @ pvec)
        alpha = rz / (pvec @ Ap)
        x += alpha * pvec
        r -= alpha * Ap
        res = np.linalg.norm(r) / nb
        if res <= tol:
            return x, it, float(res)
        z = P(dinv * r)
        rz_new = r @ z
        pvec = z + (rz_new / rz) * pvec
        rz = rz_new
    raise SolverError("linear solve", f"CG did not reach {tol:g} in {maxit} iterations (residual {res:.3e})")


def boundary_mass(mesh: Mesh) -> sp.csr_matrix:
    """Mass matrix of the boundary (point masses in 1D)."""
    n = mesh.n_nodes
    if mesh.dim == 1:
        bn = mesh.boundary_nodes
        return sp.csr_matrix((np.ones(len(bn)), (bn, bn)), shape=(n, n))
    L = mesh.facet_measures
    f = mesh.facets
    loc = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rows = np.repeat(f, 2, axis=1).ravel()
    cols = np.tile(f, (1, 2)).ravel()
    vals = (L[:, None, None] * loc[None]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def boundary_load(g: Field, mesh: Mesh) -> np.ndarray:
    """``G_i = int_{boundary} g phi_i`` (nodal values in 1D, 3-point Gauss per facet in 2D)."""
    n = mesh.n_nodes
    G = np.zeros(n)
    if mesh.dim == 1:
        bn = mesh.boundary_nodes
        G[bn] = g.value(mesh.nodes[bn])
        return G
    gx, gw = gauss_legendre(3)
    P = mesh.nodes[mesh.facets]
    L = mesh.facet_measures
    for t, w in zip(gx, gw):
        pts = P[:, 0] * (1 - t) + P[:, 1] * t
        gv = g.value(pts) * w * L
        np.add.at(G, mesh.facets[:, 0], gv * (1 - t))
        np.add.at(G, mesh.facets[:, 1], gv * t)
    return G


def assemble_stiffness(ctx: FormContext, mesh: Mesh, order: int = 4) -> sp.csr_matrix:
    """``A_ij = B_{2,delta}(phi_j, phi_i)`` with the symmetrized kernel (p = 2)."""
    if ctx.p != 2:
        raise SpecError("assemble_stiffness requires p = 2")
    return assemble_pairs(ctx, mesh, order).stiffness()


def local_stiffness(ctx: FormContext, mesh: Mesh) -> sp.csr_matrix:
    """P1 stiffness of ``B_{2,0}`` (scaled by the calibration factor)."""
    return (ctx.a_factor * p1_matrices(mesh)[1]).tocsr()


def _dirichlet_nodes(spec: ProblemSpec) -> np.ndarray:
    facets = spec.mesh.facets if spec.dirichlet_facets is None else spec.mesh.facets[spec.dirichlet_facets]
    return np.unique(facets)


# ---------------------------------------------------------------- lower-order term


def convolution_matrix(spec: ProblemSpec) -> tuple[sp.csr_matrix, np.ndarray]:
    """Rows ``K_delta phi_j(x_q)`` at the outer quadrature points and their weights."""
    if "K" in spec.cache:
        return spec.cache["K"]
    ctx, mesh = spec.ctx, spec.mesh
    qr = omega_rule(mesh, 4)
    X = jitter_off_medial(ctx.rule, qr.points)
    kinks = tuple(mesh.nodes[:, 0]) if mesh.dim == 1 else ()
    rows, cols, vals = [], [], []
    k = mesh.dim + 1
    for i, xi in enumerate(X):
        Z, W, Y, ex = x_side_rule(ctx.rule, ctx.horizon, xi, ctx.psi, 0.0, kinks, 6, ctx.n_angular)
        if ex <= 0:
            Y, wts = xi[None, :], np.ones(1)
        else:
            wts = W * ctx.psi(np.linalg.norm(Z, axis=1))
        cy = mesh.locate(Y)
        by = mesh.barycentric(Y, cy)
        rows.append(np.full(len(Y) * k, i))
        cols.append(mesh.cells[cy].ravel())
        vals.append((wts[:, None] * by).ravel())
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(X), mesh.n_nodes))
    spec.cache["K"] = (K, qr.weights)
    return spec.cache["K"]


def _lprime(t, m):
    return np.abs(t) ** (m - 2) * t


def semilinear_apply(u: np.ndarray, spec: ProblemSpec) -> tuple[np.ndarray, sp.csr_matrix]:
    """Vector ``mu int l'(K u) K phi_i`` and the Picard matrix ``mu K^T diag(|Ku|^(m-2)) K``.

    For ``m = 2`` the matrix is the exact linear operator.
    """
    n = spec.mesh.n_nodes
    if spec.mu == 0:
        return np.zeros(n), sp.csr_matrix((n, n))
    K, W = convolution_matrix(spec)
    Ku = K @ u
    vec = spec.mu * (K.T @ (W * _lprime(Ku, spec.m)))
    wts = W * (np.abs(Ku) ** (spec.m - 2) if spec.m != 2 else 1.0)
    return vec, (spec.mu * (K.T @ sp.diags(wts) @ K)).tocsr()


# ---------------------------------------------------------------- solves


def data_field(spec: ProblemSpec):
    """The datum entering the load: ``f``, or ``K*_delta f`` when mollified."""
    if spec.f is None:
        return None
    if spec.mollify and not spec.local:
        if "f_delta" not in spec.cache:
            ctx = spec.ctx
            spec.cache["f_delta"] = mollify_data(spec.f, ctx.psi, ctx.rule, ctx.horizon)
        return spec.cache["f_delta"]
    return spec.f


def load(spec: ProblemSpec) -> np.ndarray:
    """``F_i = <f, phi_i> (+ boundary datum for Neumann/Robin)``."""
    if "F" in spec.cache:
        return spec.cache["F"]
    mesh = spec.mesh
    F = np.zeros(mesh.n_nodes)
    f = data_field(spec)
    if f is not None:
        F += load_vector(f, mesh)
    if spec.bc in ("neumann", "robin") and spec.g is not None:
        F += boundary_load(spec.g, mesh)
    spec.cache["F"] = F
    return F


def operator_matrix(spec: ProblemSpec) -> sp.csr_matrix:
    """Stiffness of the (local or nonlocal) form plus the Robin boundary term."""
    if "A" not in spec.cache:
        A = local_stiffness(spec.ctx, spec.mesh) if spec.local else assemble_stiffness(spec.ctx, spec.mesh)
        if spec.bc == "robin":
            A = A + spec.b * boundary_mass(spec.mesh)
        spec.cache["A"] = A.tocsr()
    return spec.cache["A"]


def _finish(spec: ProblemSpec, u: np.ndarray, it: int, res: float, picard: int, t0: float) -> SolveReport:
    mesh = spec.mesh
    M, S = p1_matrices(mesh)
    sol = Field.p1(mesh, u)
    rep = SolveReport(sol, it, res, picard)
    rep.l2 = float(np.sqrt(u @ (M @ u)))
    rep.h1 = float(np.sqrt(u @ ((M + S) @ u)))
    if spec.ctx.p == 2 and not spec.local:
        A = assemble_stiffness(spec.ctx, mesh) if spec.bc == "robin" else operator_matrix(spec)
        rep.energy = 0.5 * float(u @ (A @ u))
        rep.seminorm = float(np.sqrt(max(u @ (A @ u), 0.0)))
    rep.wall_time = time.perf_counter() - t0
    return rep


def _linear_solve(spec: ProblemSpec, A: sp.csr_matrix, F: np.ndarray, u0: np.ndarray):
    """Solve with Dirichlet elimination or the Neumann mean-zero projection."""
    n = spec.mesh.n_nodes
    if spec.bc == "dirichlet":
        bn = _dirichlet_nodes(spec)
        free = np.setdiff1d(np.arange(n), bn)
        u = u0.copy()
        rhs = F[free] - A[free][:, bn] @ u[bn]
        Aff = A[free][:, free]
        if np.any(Aff.diagonal() <= 0):
            raise SolverError("assembly", "reduced Dirichlet system is not positive definite")
        u[free], it, res = pcg(Aff, rhs, spec.tol, spec.maxit, u0[free])
        return u, it, res
    if spec.bc == "neumann" and spec.mu == 0:
        proj = lambda v: v - v.mean()
        u, it, res = pcg(A, F, spec.tol, spec.maxit, u0, proj)
        mass = p1_matrices(spec.mesh)[0] @ np.ones(n)
        return u - (mass @ u) / mass.sum(), it, res
    return (*pcg(A, F, spec.tol, spec.maxit, u0),)


def _solve(spec: ProblemSpec) -> SolveReport:
    t0 = time.perf_counter()
    mesh = spec.mesh
    n = mesh.n_nodes
    if spec.ctx.p != 2:
        return minimize_energy(spec)
    A = operator_matrix(spec)
    F = load(spec)
    u = np.zeros(n)
    if spec.bc == "dirichlet" and spec.g is not None:
        bn = _dirichlet_nodes(spec)
        u[bn] = spec.g.value(mesh.nodes[bn])
    if spec.bc == "neumann":
        defect = abs(F.sum())
        scale = np.abs(F).sum() + 1e-300
        if defect > max(spec.ctx.quad_tol, 1e-8) * scale:
            raise SpecError(f"Neumann data violate compatibility: <f,1>+<g,1> = {F.sum():.3e}")
        F = F - F.sum() / n
    if spec.mu == 0 or spec.local:
        u, it, res = _linear_solve(spec, A, F, u)
        return _finish(spec, u, it, res, 0, t0)
    # Picard iteration on the lower-order term
    damping = 1.0 if spec.m == 2 else 0.5
    its = 0
    for k in range(1, 201):
        _, Mk = semilinear_apply(u, spec)
        unew, it, res = _linear_solve(spec, (A + Mk).tocsr(), F, u)
        its += it
        upd = np.linalg.norm(unew - u) / max(np.linalg.norm(unew), 1e-300)
        u = unew if k == 1 and spec.m == 2 else u + damping * (unew - u)
        if upd <= 1e-8 or spec.m == 2:
            return _finish(spec, u, its, res, k, t0)
    raise SolverError("picard", "no convergence in 200 iterations")


def solve_dirichlet(spec: ProblemSpec) -> SolveReport:
    """Nonlocal Dirichlet problem with ``u = g`` imposed on the Dirichlet nodes."""
    if spec.bc != "dirichlet":
        raise SpecError("solve_dirichlet needs bc='dirichlet'")
    return _solve(spec)


def solve_neumann(spec: ProblemSpec) -> SolveReport:
    """Nonlocal Neumann problem with a mean-zero solution."""
    if spec.bc != "neumann":
        raise SpecError("solve_neumann needs bc='neumann'")
    return _solve(spec)


def solve_robin(spec: ProblemSpec) -> SolveReport:
    """Nonlocal Robin problem ``B(u,v) + b0 <Tu,Tv> + mu ... = <f,v> + <g,v>``."""
    if spec.bc != "robin":
        raise SpecError("solve_robin needs bc='robin'")
    return _solve(spec)


def solve(spec: ProblemSpec) -> SolveReport:
    return _solve(spec)


def solve_local(spec: ProblemSpec) -> SolveReport:
    """P1 solution of the local limit problem (same data, ``delta = 0``)."""
    from dataclasses import replace

    loc = replace(spec, local=True, cache={})
    return _solve(loc)


# ---------------------------------------------------------------- p > 2


def minimize_energy(spec: ProblemSpec, max_steps: int = 200, c1: float = 1e-4) -> SolveReport:
    """Armijo descent on the discrete energy along Newton-preconditioned directions.

    The direction solves ``(H + tau A2) d = -grad`` on the free nodes, with
    ``A2`` the ``p = 2`` stiffness keeping the system definite where the
    Hessian degenerates. Stops when the Euler-Lagrange residual
    ``max_i |B(u, phi_i) - <f, phi_i>|`` is below ``spec.tol``.
    """
    t0 = time.perf_counter()
    if spec.bc == "neumann":
        raise SpecError("descent supports Dirichlet and Robin problems")
    ctx, mesh = spec.ctx, spec.mesh
    n = mesh.n_nodes
    if "pairs" not in spec.cache:
        spec.cache["pairs"] = assemble_pairs(ctx, mesh)
    pf: PairForm = spec.cache["pairs"]
    Bm = boundary_mass(mesh) if spec.bc == "robin" else None
    F = load(spec)
    p = ctx.p
    bnodes = _dirichlet_nodes(spec) if spec.bc == "dirichlet" else np.empty(0, dtype=int)
    free = np.setdiff1d(np.arange(n), bnodes)
    u = np.zeros(n)
    if spec.g is not None and spec.bc == "dirichlet":
        u[bnodes] = spec.g.value(mesh.nodes[bnodes])
    A2 = pf.hessian(None)
    bmass = Bm @ np.ones(n) if Bm is not None else None

    def total(v):
        e = pf.energy(v) - F @ v
        if Bm is not None:
            e += spec.b * float(bmass @ np.abs(v) ** p) / p
        if spec.mu:
            K, W = convolution_matrix(spec)
            e += spec.mu * float(W @ (np.abs(K @ v) ** spec.m)) / spec.m
        return e

    def grad(v):
        gv = pf.gradient(v) - F
        if Bm is not None:
            gv += spec.b * bmass * np.abs(v) ** (p - 2) * v
        if spec.mu:
            gv += semilinear_apply(v, spec)[0]
        return gv

    tq, tw = gauss_legendre(8)

    def increment(v, s):
        # E(v + s) - E(v) as int_0^1 grad(v + t s) . s dt, free of cancellation
        return float(sum(w * (grad(v + t * s) @ s) for t, w in zip(tq, tw)))

    E = total(u)
    energies = [E]
    g = grad(u)
    res = float(np.max(np.abs(g[free])))
    steps = 0
    while res > spec.tol:
        if steps >= max_steps:
            raise SolverError("descent", f"residual {res:.3e} after {steps} steps")
        H = pf.hessian(u)
        if Bm is not None:
            H = H + sp.diags(spec.b * (p - 1) * bmass * np.abs(u) ** (p - 2))
        if spec.mu:
            H = H + semilinear_apply(u, spec)[1]
        tau = 1e-8 * max(1.0, float(np.abs(H.diagonal()).max()) / max(float(A2.diagonal().max()), 1e-300))
        Hf = (H + tau * A2).tocsr()[free][:, free]
        d = np.zeros(n)
        d[free] = -sp.linalg.spsolve(Hf.tocsc(), g[free])
        slope = float(g @ d)
        if slope >= 0:
            d = -g.copy()
            d[bnodes] = 0.0
            slope = float(g @ d)
        alpha = 1.0
        while True:
            trial = u + alpha * d
            dE = increment(u, alpha * d)
            if dE <= c1 * alpha * slope and dE < 0:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                raise SolverError("descent", f"line search stagnated at residual {res:.3e}")
        Et = E + dE
        u, E = trial, Et
        energies.append(E)
        g = grad(u)
        res = float(np.max(np.abs(g[free])))
        steps += 1
    rep = _finish(spec, u, steps, res, 0, t0)
    rep.energy = pf.energy(u)
    rep.energies = energies
    return rep


# ---------------------------------------------------------------- fixed point


def fixed_point_residual(u: Field, spec: ProblemSpec, x) -> np.ndarray:
    """``u - J_{delta,beta} u - G/P_{delta,beta}`` at the points ``x`` (p = 2).

    ``G = f_delta - mu K*_delta l'(K_delta u)``; the averages use the
    calibrated operator profile.
    """
    ctx = spec.ctx
    if ctx.p != 2 or ctx.beta >= ctx.d:
        raise SpecError("the fixed-point identity needs p = 2 and beta < d")
    X = np.atleast_2d(np.asarray(x, dtype=float).reshape(-1, ctx.d))
    J, P = j_p_operators(u, X, ctx.beta, ctx.rho, ctx.rule, ctx.horizon)
    f = data_field(spec)
    G = np.zeros(len(X)) if f is None else np.asarray(f.value(X), dtype=float)
    if spec.mu:
        psi, rule, hz = ctx.psi, ctx.rule, ctx.horizon
        lk = Field.closed(lambda Y: _lprime(np.asarray(k_delta(u, Y, psi, rule, hz)), spec.m), dim=ctx.d)
        G = G - spec.mu * np.asarray(k_delta_star(lk, X, psi, rule, hz))
    return u.value(X) - J - G / P
