"""Domains, distance functions, meshes and outward normals.

Points are passed as arrays of shape ``(n, d)``; in one dimension a flat
array of coordinates is accepted as well.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

MEMBERSHIP_TOL = 1e-12


class DomainError(ValueError):
    """Raised for invalid domains or points outside the closed domain."""


class CornerError(DomainError):
    """Raised when a normal is requested at a polygon corner."""

    def __init__(self, message: str, normals: list[np.ndarray]):
        super().__init__(message)
        self.normals = normals


class MeshError(ValueError):
    pass


def as_points(x, d: int) -> np.ndarray:
    """Coerce ``x`` into an ``(n, d)`` float array."""
    x = np.asarray(x, dtype=float)
    if d == 1:
        return x.reshape(-1, 1)
    if x.ndim == 1:
        return x.reshape(1, d)
    return x


@dataclass(frozen=True)
class Domain:
    """Bounded Lipschitz domain.

    ``variant`` is one of ``interval``, ``rectangle``, ``disk``, ``polygon``.
    Use the constructors :meth:`interval`, :meth:`rectangle`, :meth:`disk`
    and :meth:`polygon` rather than building instances directly.
    """

    variant: str
    params: tuple

    @staticmethod
    def interval(a: float = 0.0, b: float = 1.0) -> "Domain":
        if not a < b:
            raise DomainError(f"interval needs a < b, got ({a}, {b})")
        return Domain("interval", (float(a), float(b)))

    @staticmethod
    def rectangle(x0: float = 0.0, y0: float = 0.0, x1: float = 1.0, y1: float = 1.0) -> "Domain":
        if not (x0 < x1 and y0 < y1):
            raise DomainError("rectangle needs x0 < x1 and y0 < y1")
        return Domain("rectangle", (float(x0), float(y0), float(x1), float(y1)))

    @staticmethod
    def disk(center=(0.0, 0.0), radius: float = 1.0) -> "Domain":
        if radius <= 0:
            raise DomainError("disk radius must be positive")
        return Domain("disk", (float(center[0]), float(center[1]), float(radius)))

    @staticmethod
    def polygon(vertices) -> "Domain":
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DomainError("polygon needs at least three 2D vertices")
        area = _signed_area(v)
        if area <= 0:
            raise DomainError("polygon vertices must be counterclockwise")
        if not _is_simple(v):
            raise DomainError("polygon is self-intersecting")
        return Domain("polygon", tuple(map(tuple, v)))

    @property
    def dim(self) -> int:
        return 1 if self.variant == "interval" else 2

    @property
    def measure(self) -> float:
        if self.variant == "interval":
            a, b = self.params
            return b - a
        if self.variant == "rectangle":
            x0, y0, x1, y1 = self.params
            return (x1 - x0) * (y1 - y0)
        if self.variant == "disk":
            return math.pi * self.params[2] ** 2
        return _signed_area(np.asarray(self.params))

    @property
    def boundary_measure(self) -> float:
        """Perimeter (2D) or number of endpoints (1D)."""
        if self.variant == "interval":
            return 2.0
        if self.variant == "rectangle":
            x0, y0, x1, y1 = self.params
            return 2 * (x1 - x0) + 2 * (y1 - y0)
        if self.variant == "disk":
            return 2 * math.pi * self.params[2]
        v = np.asarray(self.params)
        return float(np.sum(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))

    @property
    def diameter(self) -> float:
        if self.variant == "interval":
            return self.measure
        if self.variant == "rectangle":
            x0, y0, x1, y1 = self.params
            return math.hypot(x1 - x0, y1 - y0)
        if self.variant == "disk":
            return 2 * self.params[2]
        v = np.asarray(self.params)
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2)))

    def medial_points(self) -> np.ndarray:
        """Points where the exact distance is not differentiable (1D only)."""
        if self.variant == "interval":
            a, b = self.params
            return np.array([0.5 * (a + b)])
        return np.empty(0)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Membership in the closed domain, up to ``tol``."""
        return _signed_distance(self, as_points(x, self.dim)) >= -tol


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                return False
    return True


def _segment_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(x - proj, axis=1)


def _point_in_polygon(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    inside = np.zeros(len(x), dtype=bool)
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        cond = (a[1] > x[:, 1]) != (b[1] > x[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a[0] + (x[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= cond & (x[:, 0] < xint)
    return inside


def _signed_distance(domain: Domain, x: np.ndarray) -> np.ndarray:
    """Distance to the boundary, negative outside."""
    if domain.variant == "interval":
        a, b = domain.params
        return np.minimum(x[:, 0] - a, b - x[:, 0])
    if domain.variant == "rectangle":
        x0, y0, x1, y1 = domain.params
        inside = np.minimum.reduce([x[:, 0] - x0, x1 - x[:, 0], x[:, 1] - y0, y1 - x[:, 1]])
        dx = np.maximum.reduce([x0 - x[:, 0], np.zeros(len(x)), x[:, 0] - x1])
        dy = np.maximum.reduce([y0 - x[:, 1], np.zeros(len(x)), x[:, 1] - y1])
        return np.where(inside >= 0, inside, -np.hypot(dx, dy))
    if domain.variant == "disk":
        cx, cy, r = domain.params
        return r - np.hypot(x[:, 0] - cx, x[:, 1] - cy)
    v = np.asarray(domain.params)
    dist = np.min([_segment_distance(x, v[i], v[(i + 1) % len(v)]) for i in range(len(v))], axis=0)
    return np.where(_point_in_polygon(x, v) | (dist <= MEMBERSHIP_TOL), dist, -dist)


def distance_to_boundary(domain: Domain, x) -> np.ndarray | float:
    """Exact Euclidean distance from points of the closed domain to its boundary."""
    scalar = np.ndim(x) == 0 or (domain.dim == 2 and np.ndim(x) == 1)
    pts = as_points(x, domain.dim)
    s = _signed_distance(domain, pts)
    if np.any(s < -MEMBERSHIP_TOL):
        bad = pts[np.argmin(s)]
        raise DomainError(f"point {bad.tolist()} lies outside the closed domain")
    s = np.maximum(s, 0.0)
    return float(s[0]) if scalar else s


def distance_gradient(domain: Domain, x) -> np.ndarray:
    """Gradient of the exact distance (one-sided choice on the medial set)."""
    pts = as_points(x, domain.dim)
    if domain.variant == "interval":
        a, b = domain.params
        return np.where(pts[:, 0] - a <= b - pts[:, 0], 1.0, -1.0).reshape(-1, 1)
    if domain.variant == "rectangle":
        x0, y0, x1, y1 = domain.params
        cand = np.stack([pts[:, 0] - x0, x1 - pts[:, 0], pts[:, 1] - y0, y1 - pts[:, 1]], axis=1)
        dirs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        return dirs[np.argmin(cand, axis=1)]
    if domain.variant == "disk":
        cx, cy, _ = domain.params
        rel = pts - np.array([cx, cy])
        nrm = np.linalg.norm(rel, axis=1, keepdims=True)
        out = np.zeros_like(pts)
        np.divide(-rel, nrm, out=out, where=nrm > 0)
        return out
    v = np.asarray(domain.params)
    best = np.full(len(pts), np.inf)
    grad = np.zeros_like(pts)
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + t[:, None] * ab
        diff = pts - proj
        dist = np.linalg.norm(diff, axis=1)
        upd = dist < best
        best = np.where(upd, dist, best)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = diff / dist[:, None]
        grad[upd] = g[upd]
    return grad


def outward_normal(domain: Domain, s, tol: float = 1e-9) -> np.ndarray:
    """Outward unit normal at a boundary point ``s``."""
    pts = as_points(s, domain.dim)
    if pts.shape[0] != 1:
        raise ValueError("outward_normal expects a single boundary point")
    p = pts[0]
    if abs(_signed_distance(domain, pts)[0]) > tol:
        raise DomainError(f"point {p.tolist()} is not on the boundary")
    if domain.variant == "interval":
        a, b = domain.params
        return np.array([-1.0]) if abs(p[0] - a) <= tol else np.array([1.0])
    if domain.variant == "disk":
        cx, cy, r = domain.params
        return (p - np.array([cx, cy])) / r
    if domain.variant == "rectangle":
        x0, y0, x1, y1 = domain.params
        sides = [
            (abs(p[0] - x0) <= tol, np.array([-1.0, 0.0])),
            (abs(p[0] - x1) <= tol, np.array([1.0, 0.0])),
            (abs(p[1] - y0) <= tol, np.array([0.0, -1.0])),
            (abs(p[1] - y1) <= tol, np.array([0.0, 1.0])),
        ]
        hits = [n for on, n in sides if on]
    else:
        v = np.asarray(domain.params)
        hits = []
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            if _segment_distance(p[None, :], a, b)[0] <= tol:
                e = b - a
                hits.append(np.array([e[1], -e[0]]) / np.linalg.norm(e))
        if len(hits) == 1:
            for vert in v:
                if np.linalg.norm(p - vert) <= tol:
                    hits.append(hits[0])
    if len(hits) != 1:
        raise CornerError(f"normal is ambiguous at corner {p.tolist()}", hits)
    return hits[0]


# ---------------------------------------------------------------- meshes


@dataclass
class Mesh:
    """Conforming simplicial mesh with tagged boundary facets."""

    nodes: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    normals: np.ndarray
    domain: Domain | None = None
    _tree: object = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.facets)

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @property
    def cell_measures(self) -> np.ndarray:
        p = self.nodes[self.cells]
        if self.dim == 1:
            return np.abs(p[:, 1, 0] - p[:, 0, 0])
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def facet_measures(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(len(self.facets))
        p = self.nodes[self.facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @property
    def h(self) -> float:
        p = self.nodes[self.cells]
        k = p.shape[1]
        diam = np.zeros(len(p))
        for i in range(k):
            for j in range(i + 1, k):
                diam = np.maximum(diam, np.linalg.norm(p[:, i] - p[:, j], axis=1))
        return float(diam.max())

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Index of a cell containing each point (``-1`` if none)."""
        x = as_points(x, self.dim)
        if self.dim == 1:
            xs = self.nodes[:, 0]
            order = np.argsort(xs)
            k = np.searchsorted(xs[order], x[:, 0], side="right") - 1
            k = np.clip(k, 0, len(xs) - 2)
            inside = (x[:, 0] >= xs[order][0] - 1e-14) & (x[:, 0] <= xs[order][-1] + 1e-14)
            cell_of_left = self._cell_of_left_node()
            return np.where(inside, cell_of_left[order[k]], -1)
        return self._locate_2d(x)

    def _cell_of_left_node(self) -> np.ndarray:
        left = np.where(
            self.nodes[self.cells[:, 0], 0] < self.nodes[self.cells[:, 1], 0],
            self.cells[:, 0],
            self.cells[:, 1],
        )
        out = np.full(self.n_nodes, len(self.cells) - 1)
        out[left] = np.arange(len(self.cells))
        # the right-most node maps to the last cell containing it
        right_most = np.argmax(self.nodes[:, 0])
        out[right_most] = int(np.flatnonzero((self.cells == right_most).any(axis=1))[0])
        return out

    def _locate_2d(self, x: np.ndarray) -> np.ndarray:
        from scipy.spatial import cKDTree

        if self._tree is None:
            self._tree = cKDTree(self.nodes[self.cells].mean(axis=1))
        k = min(12, len(self.cells))
        _, cand = self._tree.query(x, k=k)
        cand = np.atleast_2d(cand)
        out = np.full(len(x), -1)
        for j in range(k):
            todo = out < 0
            if not np.any(todo):
                break
            c = cand[todo, j]
            lam = self.barycentric(x[todo], c)
            ok = np.all(lam >= -1e-10, axis=1)
            idx = np.flatnonzero(todo)[ok]
            out[idx] = c[ok]
        for i in np.flatnonzero(out < 0):
            lam = self.barycentric(np.repeat(x[i : i + 1], len(self.cells), axis=0), np.arange(len(self.cells)))
            score = lam.min(axis=1)
            best = int(np.argmax(score))
            if score[best] >= -1e-8:
                out[i] = best
        return out

    def barycentric(self, x: np.ndarray, cells: np.ndarray) -> np.ndarray:
        p = self.nodes[self.cells[cells]]
        if self.dim == 1:
            x0, x1 = p[:, 0, 0], p[:, 1, 0]
            t = (x[:, 0] - x0) / (x1 - x0)
            return np.stack([1 - t, t], axis=1)
        a, b, c = p[:, 0], p[:, 1], p[:, 2]
        v0, v1, v2 = b - a, c - a, x - a
        den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        l1 = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
        l2 = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
        return np.stack([1 - l1 - l2, l1, l2], axis=1)

    def cell_gradients(self) -> np.ndarray:
        """Gradients of the local P1 basis functions, shape ``(cells, d+1, d)``."""
        p = self.nodes[self.cells]
        if self.dim == 1:
            hk = p[:, 1, 0] - p[:, 0, 0]
            return np.stack([-1.0 / hk, 1.0 / hk], axis=1)[:, :, None]
        e = p[:, 1:, :] - p[:, :1, :]
        inv = np.linalg.inv(e)
        g = np.zeros((len(p), 3, 2))
        g[:, 1:, :] = np.transpose(inv, (0, 2, 1))
        g[:, 0, :] = -g[:, 1, :] - g[:, 2, :]
        return g

    def to_csv(self, out_dir: str | Path) -> None:
        """Write ``nodes.csv``, ``cells.csv`` and ``facets.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        d = self.dim
        coords = ["x", "y"][:d]
        with open(out / "nodes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *coords])
            for i, p in enumerate(self.nodes):
                w.writerow([i, *(f"{c:.12e}" for c in p)])
        with open(out / "cells.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *[f"n{k}" for k in range(d + 1)]])
            for i, c in enumerate(self.cells):
                w.writerow([i, *c.tolist()])
        with open(out / "facets.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *[f"n{k}" for k in range(d)], *["nx", "ny"][:d]])
            for i, (f, n) in enumerate(zip(self.facets, self.normals)):
                w.writerow([i, *f.tolist(), *(f"{c:.12e}" for c in n)])


def _boundary_facets_2d(nodes: np.ndarray, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = {}
    for ci, c in enumerate(cells):
        for a, b, opp in ((c[0], c[1], c[2]), (c[1], c[2], c[0]), (c[2], c[0], c[1])):
            key = (min(a, b), max(a, b))
            edges.setdefault(key, []).append((a, b, opp))
    facets, normals = [], []
    for key, owners in edges.items():
        if len(owners) != 1:
            continue
        a, b, opp = owners[0]
        e = nodes[b] - nodes[a]
        n = np.array([e[1], -e[0]]) / np.linalg.norm(e)
        if np.dot(n, nodes[opp] - nodes[a]) > 0:
            n = -n
        facets.append((a, b))
        normals.append(n)
    return np.asarray(facets, dtype=int), np.asarray(normals)


def _orient_ccw(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = nodes[cells]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
    cells = cells.copy()
    cells[neg, 1], cells[neg, 2] = cells[neg, 2].copy(), cells[neg, 1].copy()
    return cells


def build_mesh(domain: Domain, h: float) -> Mesh:
    """Conforming P1 mesh with maximum cell diameter at most ``1.5 h``.

    Interval meshes are uniform with an even cell count, so the midpoint
    (where the exact distance has its kink) is always a node.
    """
    if h <= 0:
        raise MeshError("mesh size must be positive")
    if h > domain.diameter:
        raise MeshError(f"h={h} exceeds the domain diameter {domain.diameter}")
    if domain.variant == "interval":
        a, b = domain.params
        n = max(2, math.ceil((b - a) / h - 1e-12))
        n += n % 2
        x = np.linspace(a, b, n + 1)
        cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
        facets = np.array([[0], [n]])
        normals = np.array([[-1.0], [1.0]])
        return Mesh(x[:, None], cells, facets, normals, domain)
    if domain.variant == "rectangle":
        x0, y0, x1, y1 = domain.params
        nx = max(1, math.ceil((x1 - x0) / h - 1e-12))
        ny = max(1, math.ceil((y1 - y0) / h - 1e-12))
        xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
        cells = []
        for j in range(ny):
            for i in range(nx):
                n0 = j * (nx + 1) + i
                n1, n2, n3 = n0 + 1, n0 + nx + 2, n0 + nx + 1
                cells += [(n0, n1, n2), (n0, n2, n3)]
        cells = np.asarray(cells)
    elif domain.variant == "disk":
        cx, cy, r = domain.params
        nr = max(1, math.ceil(r / h - 1e-12))
        pts = [np.array([[cx, cy]])]
        for k in range(1, nr + 1):
            rk = r * k / nr
            m = max(6, math.ceil(2 * math.pi * rk / h - 1e-12))
            th = 2 * math.pi * np.arange(m) / m + (0.5 * math.pi / m) * (k % 2)
            pts.append(np.stack([cx + rk * np.cos(th), cy + rk * np.sin(th)], axis=1))
        nodes = np.concatenate(pts)
        cells = Delaunay(nodes).simplices
    else:
        nodes, cells = _polygon_mesh(np.asarray(domain.params), h)
    cells = _orient_ccw(nodes, cells)
    facets, normals = _boundary_facets_2d(nodes, cells)
    mesh = Mesh(nodes, cells, facets, normals, domain)
    if mesh.h > 1.5 * h + 1e-12:
        raise MeshError(f"mesh diameter {mesh.h:.3g} exceeds 1.5*h")
    return mesh


def _ear_clip(v: np.ndarray) -> list[tuple[int, int, int]]:
    idx = list(range(len(v)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3 and guard < 10000:
        guard += 1
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = v[i0], v[i1], v[i2]
            if cross(a, b, c) <= 1e-14:
                continue
            if any(
                cross(a, b, v[j]) >= 0 and cross(b, c, v[j]) >= 0 and cross(c, a, v[j]) >= 0
                for j in idx
                if j not in (i0, i1, i2)
            ):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            raise MeshError("ear clipping failed (degenerate polygon)")
    tris.append(tuple(idx))
    return tris


def _red_refine(nodes: np.ndarray, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nodes = list(map(tuple, nodes))
    mid = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid:
            pa, pb = nodes[a], nodes[b]
            nodes.append(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2))
            mid[key] = len(nodes) - 1
        return mid[key]

    out = []
    for a, b, c in cells:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.asarray(nodes), np.asarray(out)


def _polygon_mesh(v: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    nodes, cells = v.copy(), np.asarray(_ear_clip(v))
    for _ in range(30):
        p = nodes[cells]
        diam = np.max([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)])
        if diam <= 1.5 * h:
            break
        nodes, cells = _red_refine(nodes, cells)
    return nodes, cells


# ---------------------------------------------------------------- distance fields


@dataclass
class DistanceField:
    """Generalized distance ``lambda`` with its reported constants.

    ``kind`` is ``exact`` or ``smoothed``.
    """

    domain: Domain
    kind: str = "exact"
    kappa0: float = 1.0
    kappa1: float = 1.0
    eps: float = 0.0
    _direct: object = field(default=None, repr=False)

    @property
    def smooth(self) -> bool:
        return self.kind == "smoothed"

    def kinks(self) -> np.ndarray:
        return self.domain.medial_points() if self.kind == "exact" else np.empty(0)

    def value(self, x) -> np.ndarray:
        pts = as_points(x, self.domain.dim)
        if self.kind == "exact":
            return np.maximum(_signed_distance(self.domain, pts), 0.0)
        return self._direct(pts)[0]

    def grad(self, x) -> np.ndarray:
        pts = as_points(x, self.domain.dim)
        if self.kind == "exact":
            return distance_gradient(self.domain, pts)
        return self._direct(pts)[1]


def exact_distance(domain: Domain) -> DistanceField:
    return DistanceField(domain, "exact", 1.0, 1.0)


def _bump_tail_moments(psi, t: np.ndarray, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """``M0(t) = int_t^s psi`` and ``M1(t) = int_t^s psi(u)(u - t) du``."""
    from .quadrature import gauss_legendre

    s = psi.support
    lo = np.clip(t, -s, s)
    xg, wg = gauss_legendre(n)
    u = lo[:, None] + (s - lo)[:, None] * xg[None, :]
    wu = (s - lo)[:, None] * wg[None, :]
    pu = psi(np.abs(u))
    m0 = np.sum(wu * pu, axis=1)
    m1 = np.sum(wu * pu * (u - t[:, None]), axis=1)
    # below the support the tail integrals are the full moments
    m1 = np.where(t < -s, -t, m1)
    return m0, m1


def smoothed_distance(domain: Domain, eps: float, psi, rule) -> DistanceField:
    """Boundary-localized mollification of the exact distance.

    The result is ``K_eps[lambda0, q, psi] d`` where ``lambda0`` generates
    the mollification window. On an interval ``lambda0`` is the smooth
    quadratic ``(x-a)(b-x)/(b-a)`` and the convolution has the closed form
    ``(x-a) - 2 eta M1((m-x)/eta)`` with ``m`` the midpoint, which is
    C-infinity in the interior. In 2D the window uses the exact distance and
    the convolution is evaluated by ball quadrature.

    Parameters
    ----------
    eps : float
        Window scale; must lie below the horizon threshold of ``(q, d)``.
    psi : RadialProfile
        Mollifier normalized to unit mass in the domain dimension.
    rule : LocalizationRule
        Supplies q for the window.
    """
    from .localization import horizon_threshold, q_eval

    exact = exact_distance(domain)
    thr = horizon_threshold(rule.with_distance(exact))
    if not 0 < eps < thr:
        raise ValueError(f"smoothing eps={eps} must lie in (0, {thr:.6g})")
    field_ = DistanceField(domain, "smoothed", eps=eps)
    if domain.dim == 1:
        a, b = domain.params
        m = 0.5 * (a + b)

        def direct(pts: np.ndarray):
            x = pts[:, 0]
            lam0 = np.clip((x - a) * (b - x) / (b - a), 0.0, None)
            dlam0 = (a + b - 2 * x) / (b - a)
            et = eps * q_eval(rule, lam0, 0)
            det = eps * q_eval(rule, lam0, 1) * dlam0
            val = np.minimum(x - a, b - x).astype(float)
            der = np.where(x <= m, 1.0, -1.0)
            near = (et > 0) & (np.abs(x - m) < psi.support * et)
            if np.any(near):
                e, de = et[near], det[near]
                t = (m - x[near]) / e
                m0, m1 = _bump_tail_moments(psi, t)
                val[near] = (x[near] - a) - 2 * e * m1
                der[near] = 1 - 2 * de * m1 - 2 * m0 * (1 + t * de)
            return np.maximum(val, 0.0), der[:, None]

        sample = np.linspace(a, b, 1002)[1:-1, None]
    else:
        from .quadrature import ball_rule

        br = ball_rule(2, 0.0, 16, 64, breaks=tuple(psi.breaks), support=psi.support)
        z = br.points
        wp = br.weights * psi(np.linalg.norm(z, axis=1))

        def direct(pts: np.ndarray):
            lam = exact.value(pts)
            et = eps * q_eval(rule, lam, 0)
            geta = (eps * q_eval(rule, lam, 1))[:, None] * exact.grad(pts)
            val = lam.copy()
            der = exact.grad(pts).astype(float)
            for i in np.flatnonzero(et > 0):
                y = pts[i] + et[i] * z
                gy = exact.grad(y)
                val[i] = np.sum(wp * exact.value(y))
                der[i] = np.sum(wp[:, None] * (gy + geta[i][None, :] * np.sum(z * gy, axis=1)[:, None]), axis=0)
            return val, der

        sample = _sample_grid(domain, 1000)
    field_._direct = direct
    lam_s = field_.value(sample)
    dist = exact.value(sample)
    ratio = np.concatenate([lam_s / dist, dist / lam_s])
    field_.kappa0 = float(max(1.0, np.max(ratio)))
    field_.kappa1 = float(max(1.0, np.max(np.linalg.norm(field_.grad(sample), axis=1))))
    return field_


def _sample_grid(domain: Domain, n: int) -> np.ndarray:
    """Roughly ``n`` interior sample points."""
    if domain.dim == 1:
        a, b = domain.params
        return np.linspace(a, b, n + 2)[1:-1, None]
    if domain.variant == "rectangle":
        x0, y0, x1, y1 = domain.params
    elif domain.variant == "disk":
        cx, cy, r = domain.params
        x0, y0, x1, y1 = cx - r, cy - r, cx + r, cy + r
    else:
        v = np.asarray(domain.params)
        x0, y0 = v.min(axis=0)
        x1, y1 = v.max(axis=0)
    m = int(math.ceil(math.sqrt(2 * n)))
    X, Y = np.meshgrid(np.linspace(x0, x1, m + 2)[1:-1], np.linspace(y0, y1, m + 2)[1:-1])
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    pts = pts[_signed_distance(domain, pts) > 1e-9]
    return pts[:n]
