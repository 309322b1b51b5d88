"""Geometry of n-simplices: volumes, faces, normals, altitudes and the
affine map onto the standard simplex.

A simplex is stored translated so that its first vertex ``p0`` sits at the
origin; the remaining vertices form the columns of ``A``.  ``B = A^{-1}``
sends the simplex onto the standard simplex and ``Gamma = B B^T`` is the
coefficient matrix of the Laplacian in the normalized coordinates.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GeometryError",
    "Simplex",
    "FaceInfo",
    "AffineNormalization",
    "volume",
    "faces",
    "altitude",
    "normalize",
    "denormalize",
    "parallelepiped_face_volume",
    "named_simplex",
    "load_simplex",
    "random_simplex",
]


class GeometryError(ValueError):
    """Raised for degenerate or unsupported simplices."""


@dataclass(frozen=True)
class Simplex:
    """Simplex spanned by ``n + 1`` affinely independent points of R^n."""

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] + 1 or v.shape[1] < 1:
            raise GeometryError(
                f"need n+1 points in R^n, got array of shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        A = (v[1:] - v[0]).T.copy()
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        edges = [np.linalg.norm(v[i] - v[j])
                 for i in range(len(v)) for j in range(i)]
        n = self.dim
        eps = 1e-12 * max(edges) ** n
        if not abs(np.linalg.det(A)) > eps:
            raise GeometryError("degenerate simplex (vertices affinely dependent)")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def offset(self) -> np.ndarray:
        """Translation vector: the original position of ``p0``."""
        return self.vertices[0]

    @property
    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.array([np.linalg.norm(v[i] - v[j])
                         for i in range(len(v)) for j in range(i)])

    @property
    def longest_side(self) -> float:
        return float(self.edge_lengths.max())

    @property
    def diameter(self) -> float:
        return self.longest_side

    def signed_volume(self) -> float:
        return float(np.linalg.det(self.A)) / math.factorial(self.dim)

    def scaled(self, factor: float) -> "Simplex":
        return Simplex(self.vertices * factor)

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class FaceInfo:
    index: int
    vertex_indices: tuple
    normal: np.ndarray = field(repr=False)
    volume: float = 0.0
    centroid: np.ndarray = field(default=None, repr=False)

    def plane_offset(self) -> float:
        """``d`` in the plane equation ``normal . x = d``."""
        return float(self.normal @ self.centroid)


@dataclass(frozen=True)
class AffineNormalization:
    A: np.ndarray
    B: np.ndarray
    Gamma: np.ndarray
    detA: float
    offset: np.ndarray
    ill_conditioned: bool = False

    def to_standard(self, x: np.ndarray) -> np.ndarray:
        """Map physical points (rows) to standard-simplex coordinates."""
        return (np.asarray(x, dtype=float) - self.offset) @ self.B.T

    def to_physical(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.A.T + self.offset

    def momentum_to_standard(self, xi: np.ndarray) -> np.ndarray:
        """Cotangent lift ``eta = A^T xi``; the symbol satisfies
        ``eta^T Gamma eta = |xi|^2``."""
        return self.A.T @ np.asarray(xi, dtype=float)


def volume(s: Simplex) -> float:
    return abs(float(np.linalg.det(s.A))) / math.factorial(s.dim)


def _face_volume(points: np.ndarray) -> float:
    """(n-1)-volume of the simplex spanned by ``points`` (n points in R^n)."""
    k = len(points) - 1
    if k == 0:
        return 1.0
    E = (points[1:] - points[0])
    gram = E @ E.T
    return math.sqrt(max(np.linalg.det(gram), 0.0)) / math.factorial(k)


def faces(s: Simplex) -> list[FaceInfo]:
    """Faces ``G_j`` (``G_j`` omits vertex ``j``) with unit outward normals."""
    v = s.vertices
    n = s.dim
    out = []
    for j in range(n + 1):
        idx = tuple(i for i in range(n + 1) if i != j)
        pts = v[list(idx)]
        centroid = pts.mean(axis=0)
        if n == 1:
            normal = np.sign(centroid - v[j]).astype(float)
        else:
            # normal spans the null space of the face's edge vectors
            E = pts[1:] - pts[0]
            _, _, vt = np.linalg.svd(E)
            normal = vt[-1]
        normal = normal / np.linalg.norm(normal)
        if normal @ (v[j] - centroid) > 0:
            normal = -normal
        normal = _snap(normal)
        out.append(FaceInfo(j, idx, normal, _face_volume(pts), centroid))
    return out


def _snap(x: np.ndarray, tol: float = 1e-15) -> np.ndarray:
    """Zero out SVD round-off so axis-aligned normals come out exact."""
    x = np.where(np.abs(x) < tol, 0.0, x)
    x.setflags(write=False)
    return x


def altitude(s: Simplex, face_index: int) -> float:
    """Distance from vertex ``face_index`` to the line of the opposite side."""
    if s.dim != 2:
        raise GeometryError(f"altitude is defined for triangles, got n={s.dim}")
    f = faces(s)[face_index]
    return float(f.normal @ (f.centroid - s.vertices[face_index]))


def normalize(s: Simplex, cond_limit: float = 1e12) -> AffineNormalization:
    A = np.array(s.A)
    cond = np.linalg.cond(A)
    ill = bool(cond > cond_limit)
    if ill:
        warnings.warn(f"ill-conditioned simplex (cond(A) = {cond:.3e})",
                      RuntimeWarning, stacklevel=2)
    B = np.linalg.inv(A)
    Gamma = B @ B.T
    Gamma = 0.5 * (Gamma + Gamma.T)
    return AffineNormalization(A, B, Gamma, float(np.linalg.det(A)),
                               np.array(s.offset), ill)


def denormalize(nrm: AffineNormalization) -> Simplex:
    n = nrm.A.shape[0]
    std = np.vstack([np.zeros(n), np.eye(n)])
    return Simplex(nrm.to_physical(std))


def parallelepiped_face_volume(s: Simplex, j: int = 0) -> float:
    """Volume of the parallelepiped spanned by the edges of face ``j`` out of
    one of its corners, i.e. ``(n-1)! Vol(G_j)``, via the Gram determinant."""
    idx = [i for i in range(s.dim + 1) if i != j]
    pts = s.vertices[idx]
    E = pts[1:] - pts[0]
    return math.sqrt(max(np.linalg.det(E @ E.T), 0.0)) if len(E) else 1.0


def standard_simplex(n: int) -> Simplex:
    return Simplex(np.vstack([np.zeros(n), np.eye(n)]))


def named_simplex(name: str) -> Simplex:
    """Canonical shapes: ``standard-2``, ``standard-3``, ``half-square-pi``
    and ``equilateral:<side>``."""
    if name.startswith("standard-"):
        return standard_simplex(int(name.split("-", 1)[1]))
    if name == "half-square-pi":
        # {0 < y < x < pi}
        return Simplex([[0.0, 0.0], [math.pi, 0.0], [math.pi, math.pi]])
    if name.startswith("equilateral:"):
        a = float(name.split(":", 1)[1])
        return Simplex([[0.0, 0.0], [a, 0.0], [a / 2, a * math.sqrt(3) / 2]])
    raise GeometryError(f"unknown shape {name!r}")


def load_simplex(source) -> Simplex:
    """Build a simplex from a named shape, a JSON string/file, or a dict."""
    if isinstance(source, Simplex):
        return source
    if isinstance(source, dict):
        return Simplex(source["vertices"])
    source = str(source).strip()
    if source.startswith("{"):
        return Simplex(json.loads(source)["vertices"])
    p = Path(source)
    if source.endswith(".json") and p.exists():
        return Simplex(json.loads(p.read_text())["vertices"])
    return named_simplex(source)


def random_simplex(n: int, rng: np.random.Generator,
                   min_angle_deg: float = 25.0) -> Simplex:
    """Random simplex with a crude shape-quality filter.

    For triangles the minimum interior angle is bounded below; in higher
    dimension the ratio of inradius to circumradius-ish (via volume over the
    n-th power of the longest edge) is used instead.
    """
    while True:
        v = rng.uniform(-1.0, 1.0, size=(n + 1, n))
        try:
            s = Simplex(v)
        except GeometryError:
            continue
        if s.signed_volume() < 0:
            v[[1, 2]] = v[[2, 1]]
            s = Simplex(v)
        if n == 2:
            if min(_triangle_angles(v)) >= math.radians(min_angle_deg):
                return s
        else:
            quality = volume(s) / s.longest_side ** n
            # relative to the regular simplex of unit edge; 0.34 keeps the
            # tetrahedron threshold at about 0.04
            regular = math.sqrt(n + 1) / (math.factorial(n) * 2 ** (n / 2))
            if quality > 0.34 * regular:
                return s


def _triangle_angles(v: np.ndarray) -> list[float]:
    out = []
    for i in range(3):
        a = v[(i + 1) % 3] - v[i]
        b = v[(i + 2) % 3] - v[i]
        c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        out.append(math.acos(max(-1.0, min(1.0, c))))
    return out
