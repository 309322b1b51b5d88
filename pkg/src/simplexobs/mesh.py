"""Uniform red refinement of a triangle or tetrahedron.

Boundary facets carry the index ``j`` of the simplex face ``G_j`` they lie
on, so traces and face integrals can be gathered per face.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Simplex, faces

__all__ = [
    "SimplicialMesh",
    "base_mesh",
    "refine",
    "refined_mesh",
    "interior_vertices",
    "facets_of_face",
    "cell_volumes",
    "facet_areas",
    "facet_tag_error",
]


@dataclass(frozen=True)
class SimplicialMesh:
    vertices: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    boundary_facets: np.ndarray = field(repr=False)
    facet_tags: np.ndarray = field(repr=False)
    level: int = 0
    simplex: Simplex = field(default=None, repr=False)
    # vertex order driving refinement; ``cells`` is this order with
    # negatively oriented cells flipped
    refine_order: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> float:
        """Longest edge of the mesh."""
        v = self.vertices
        c = self.cells
        k = c.shape[1]
        return max(float(np.linalg.norm(v[c[:, a]] - v[c[:, b]], axis=1).max())
                   for a in range(k) for b in range(a))

    def to_json(self) -> str:
        return json.dumps({
            "vertices": self.vertices.tolist(),
            "cells": self.cells.tolist(),
            "boundary_facets": [[f.tolist(), int(t)] for f, t in
                                zip(self.boundary_facets, self.facet_tags)],
        })


def base_mesh(s: Simplex) -> SimplicialMesh:
    n = s.dim
    if n not in (2, 3):
        raise GeometryError(f"meshing supports n in {{2, 3}}, got n={n}")
    order = np.arange(n + 1)[None, :]
    facets = np.array([[i for i in range(n + 1) if i != j] for j in range(n + 1)])
    v = np.array(s.vertices)
    return SimplicialMesh(v, _orient(v, order), facets, np.arange(n + 1), 0, s, order)


def _orient(v: np.ndarray, cells: np.ndarray) -> np.ndarray:
    E = v[cells[:, 1:]] - v[cells[:, :1]]
    neg = np.linalg.det(E) < 0
    out = cells.copy()
    out[neg, -2:] = out[neg, -2:][:, ::-1]
    return out


class _EdgeMidpoints:
    """Unique edges of a mesh and the index of the new midpoint vertex."""

    def __init__(self, pairs: np.ndarray, n_vertices: int):
        lo = pairs.min(axis=1).astype(np.int64)
        hi = pairs.max(axis=1).astype(np.int64)
        self.nv = n_vertices
        keys = lo * n_vertices + hi
        self.keys, first = np.unique(keys, return_index=True)
        self.lo = lo[first]
        self.hi = hi[first]

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        lo = np.minimum(a, b).astype(np.int64)
        hi = np.maximum(a, b).astype(np.int64)
        return self.nv + np.searchsorted(self.keys, lo * self.nv + hi)


def refine(m: SimplicialMesh) -> SimplicialMesh:
    """One level of red refinement (4 children in 2D, 8 in 3D)."""
    v = m.vertices
    c = m.cells if m.refine_order is None else m.refine_order
    n = m.dim
    k = n + 1
    pairs = np.concatenate([c[:, [a, b]] for a in range(k) for b in range(a + 1, k)])
    mid = _EdgeMidpoints(pairs, len(v))
    new_v = np.vstack([v, 0.5 * (v[mid.lo] + v[mid.hi])])

    x = [c[:, i] for i in range(k)]

    def e(i, j):
        return mid(x[i], x[j])

    if n == 2:
        x0, x1, x2 = x
        m01, m12, m02 = e(0, 1), e(1, 2), e(0, 2)
        children = [(x0, m01, m02), (m01, x1, m12), (m02, m12, x2), (m01, m12, m02)]
    else:
        x0, x1, x2, x3 = x
        m01, m02, m03 = e(0, 1), e(0, 2), e(0, 3)
        m12, m13, m23 = e(1, 2), e(1, 3), e(2, 3)
        # Bey's ordering; keeps descendants within three congruence classes
        children = [
            (x0, m01, m02, m03), (m01, x1, m12, m13),
            (m02, m12, x2, m23), (m03, m13, m23, x3),
            (m01, m02, m03, m13), (m01, m02, m12, m13),
            (m02, m03, m13, m23), (m02, m12, m13, m23),
        ]
    new_c = np.stack([np.stack(ch, axis=1) for ch in children], axis=1)
    new_c = new_c.reshape(-1, k)

    f, t = m.boundary_facets, m.facet_tags
    y = [f[:, i] for i in range(n)]
    if n == 2:
        p, q = y
        pq = mid(p, q)
        fch = [(p, pq), (pq, q)]
    else:
        p, q, r = y
        pq, pr, qr = mid(p, q), mid(p, r), mid(q, r)
        fch = [(p, pq, pr), (pq, q, qr), (pr, qr, r), (pq, qr, pr)]
    new_f = np.stack([np.stack(ch, axis=1) for ch in fch], axis=1).reshape(-1, n)
    new_t = np.repeat(t, len(fch))
    return SimplicialMesh(new_v, _orient(new_v, new_c), new_f, new_t,
                          m.level + 1, m.simplex, new_c)


def refined_mesh(s: Simplex, level: int) -> SimplicialMesh:
    m = base_mesh(s)
    for _ in range(level):
        m = refine(m)
    return m


def cell_volumes(m: SimplicialMesh, signed: bool = False) -> np.ndarray:
    v, c = m.vertices, m.cells
    E = v[c[:, 1:]] - v[c[:, :1]]          # (C, n, n), rows are edges
    vol = np.linalg.det(E) / math.factorial(m.dim)
    return vol if signed else np.abs(vol)


def facet_areas(m: SimplicialMesh) -> np.ndarray:
    v, f = m.vertices, m.boundary_facets
    if m.dim == 2:
        return np.linalg.norm(v[f[:, 1]] - v[f[:, 0]], axis=1)
    a = v[f[:, 1]] - v[f[:, 0]]
    b = v[f[:, 2]] - v[f[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def interior_vertices(m: SimplicialMesh) -> np.ndarray:
    on_boundary = np.zeros(m.n_vertices, dtype=bool)
    on_boundary[m.boundary_facets.ravel()] = True
    return np.flatnonzero(~on_boundary)


def facets_of_face(m: SimplicialMesh, j: int):
    """Boundary facets lying on face ``G_j`` and their areas."""
    if not 0 <= j <= m.dim:
        raise ValueError(f"face index {j} out of range 0..{m.dim}")
    sel = np.flatnonzero(m.facet_tags == j)
    return m.boundary_facets[sel], facet_areas(m)[sel]


def facet_tag_error(m: SimplicialMesh) -> float:
    """Largest plane-equation violation of a tagged facet vertex, scaled by
    the simplex diameter."""
    fs = faces(m.simplex)
    worst = 0.0
    for fi in fs:
        pts = m.vertices[m.boundary_facets[m.facet_tags == fi.index].ravel()]
        if len(pts):
            worst = max(worst, float(np.abs(pts @ fi.normal - fi.plane_offset()).max()))
    return worst / m.simplex.diameter
