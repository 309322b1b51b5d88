"""P1 finite elements for the Dirichlet Laplacian on a simplicial mesh."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import faces
from .mesh import SimplicialMesh, cell_volumes, facets_of_face, interior_vertices

__all__ = [
    "FEMError",
    "AssembledSystem",
    "EigenBasis",
    "element_gradients",
    "element_stiffness",
    "element_mass",
    "assemble",
    "solve_eigen",
    "default_mode_count",
    "trace_operator",
    "neumann_trace",
    "project",
    "h1_energy",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000


class FEMError(RuntimeError):
    pass


def element_gradients(m: SimplicialMesh) -> np.ndarray:
    """Constant gradients of the barycentric hat functions, shape (C, n+1, n)."""
    v, c = m.vertices, m.cells
    E = v[c[:, 1:]] - v[c[:, :1]]
    # x = x0 + E^T xi  =>  grad xi_i = column i of E^{-1}
    Einv = np.linalg.inv(E)
    G = np.empty((len(c), m.dim + 1, m.dim))
    G[:, 1:, :] = np.transpose(Einv, (0, 2, 1))
    G[:, 0, :] = -G[:, 1:, :].sum(axis=1)
    return G


def element_stiffness(points, coefficient=None) -> np.ndarray:
    """Stiffness matrix of a single P1 element with vertices ``points``."""
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    E = points[1:] - points[0]
    vol = abs(np.linalg.det(E)) / math.factorial(n)
    G = np.vstack([-np.linalg.inv(E).sum(axis=1), np.linalg.inv(E).T])
    C = np.eye(n) if coefficient is None else np.asarray(coefficient)
    return vol * G @ C @ G.T


def element_mass(points) -> np.ndarray:
    """Consistent mass matrix, exact: int l_i l_j = vol (1 + d_ij)/((n+1)(n+2))."""
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    vol = abs(np.linalg.det(points[1:] - points[0])) / math.factorial(n)
    return vol * (np.ones((n + 1, n + 1)) + np.eye(n + 1)) / ((n + 1) * (n + 2))


@dataclass(frozen=True)
class AssembledSystem:
    K: sp.csr_matrix = field(repr=False)
    M: sp.csr_matrix = field(repr=False)
    dof_map: np.ndarray = field(repr=False)
    mesh: SimplicialMesh = field(repr=False)
    K_full: sp.csr_matrix = field(repr=False)
    M_full: sp.csr_matrix = field(repr=False)
    gradients: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_map)

    def full_vector(self, x: np.ndarray) -> np.ndarray:
        """Extend interior values (vector or column stack) by zero on the boundary."""
        x = np.asarray(x)
        out = np.zeros((self.mesh.n_vertices,) + x.shape[1:], dtype=x.dtype)
        out[self.dof_map] = x
        return out

    def interior_points(self) -> np.ndarray:
        return self.mesh.vertices[self.dof_map]


def assemble(m: SimplicialMesh, coefficient=None) -> AssembledSystem:
    """Assemble stiffness and mass, then eliminate Dirichlet vertices.

    ``coefficient`` is an optional constant SPD matrix ``C`` giving the form
    ``int grad(u)^T C grad(v)``; the default is the identity.
    """
    dofs = interior_vertices(m)
    if len(dofs) == 0:
        raise FEMError(f"mesh too coarse: level {m.level} has no interior vertices")
    n = m.dim
    k = n + 1
    G = element_gradients(m)
    vol = cell_volumes(m)
    if coefficient is None:
        Ke = np.einsum("cad,cbd->cab", G, G)
    else:
        Ke = np.einsum("cad,de,cbe->cab", G, np.asarray(coefficient, float), G)
    Ke *= vol[:, None, None]
    Me = vol[:, None, None] * (np.ones((k, k)) + np.eye(k)) / ((n + 1) * (n + 2))

    rows = np.repeat(m.cells, k, axis=1).ravel()
    cols = np.tile(m.cells, (1, k)).ravel()
    N = m.n_vertices
    K_full = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(N, N)).tocsr()
    M_full = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(N, N)).tocsr()
    # local matrices are symmetric, so the sums are symmetric up to ordering
    K_full = 0.5 * (K_full + K_full.T)
    M_full = 0.5 * (M_full + M_full.T)
    K = K_full[dofs][:, dofs].tocsr()
    M = M_full[dofs][:, dofs].tocsr()
    return AssembledSystem(K, M, dofs, m, K_full.tocsr(), M_full.tocsr(), G, vol)


@dataclass(frozen=True)
class EigenBasis:
    eigenvalues: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    system: AssembledSystem = field(repr=False)

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    def full_vectors(self) -> np.ndarray:
        return self.system.full_vector(self.vectors)

    def truncated(self, m: int) -> "EigenBasis":
        return EigenBasis(self.eigenvalues[:m], self.vectors[:, :m],
                          self.residuals[:m], self.system)


def default_mode_count(sys: AssembledSystem) -> int:
    want = 64 if sys.mesh.dim == 2 else 32
    return max(1, min(want, sys.n_dofs // 4))


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def solve_eigen(sys: AssembledSystem, m: int | None = None, method: str = "auto",
                tol: float = 1e-9) -> EigenBasis:
    """Lowest ``m`` eigenpairs of ``K phi = lambda M phi``, M-orthonormal."""
    N = sys.n_dofs
    if m is None:
        m = default_mode_count(sys)
    if m > N:
        raise FEMError(f"requested {m} modes but only {N} interior dofs")
    if method == "auto":
        method = "dense" if N <= DENSE_LIMIT else "shift_invert"
    if method == "shift_invert" and m >= N - 1:
        method = "dense"

    if method == "dense":
        lam, V = sla.eigh(sys.K.toarray(), sys.M.toarray(), subset_by_index=[0, m - 1])
    elif method == "shift_invert":
        rng = np.random.default_rng(0)
        v0 = rng.standard_normal(N)
        try:
            lam, V = spla.eigsh(sys.K.tocsc(), k=m, M=sys.M.tocsc(), sigma=0.0,
                                which="LM", v0=v0, tol=1e-13)
        except spla.ArpackNoConvergence as exc:
            raise FEMError(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
        # re-orthonormalize in the M inner product (clusters may drift)
        Gm = V.T @ (sys.M @ V)
        L = np.linalg.cholesky(0.5 * (Gm + Gm.T))
        V = np.linalg.solve(L, V.T).T
        H = V.T @ (sys.K @ V)
        lam, W = np.linalg.eigh(0.5 * (H + H.T))
        V = V @ W
    else:
        raise ValueError(f"unknown eigen method {method!r}")

    V = _fix_signs(V)
    KV = sys.K @ V
    MV = sys.M @ V
    res = np.linalg.norm(KV - MV * lam, axis=0) / np.linalg.norm(MV, axis=0)
    scale = max(1.0, float(lam.max()))
    if np.any(res > tol * scale):
        raise FEMError(f"eigen residual too large: max {res.max():.3e}")
    log.debug("solved %d modes (%s), lambda_1=%.8g", m, method, lam[0])
    return EigenBasis(lam, V, res, sys)


def _facet_cells(m: SimplicialMesh, facets: np.ndarray) -> np.ndarray:
    """Index of the unique cell adjoining each boundary facet."""
    N = np.int64(m.n_vertices)
    n = m.dim

    def key(arr):
        arr = np.sort(arr, axis=1).astype(np.int64)
        k = np.zeros(len(arr), dtype=np.int64)
        for i in range(arr.shape[1]):
            k = k * N + arr[:, i]
        return k

    c = m.cells
    cell_keys = []
    cell_ids = []
    for omit in range(n + 1):
        sub = np.delete(c, omit, axis=1)
        cell_keys.append(key(sub))
        cell_ids.append(np.arange(len(c)))
    cell_keys = np.concatenate(cell_keys)
    cell_ids = np.concatenate(cell_ids)
    order = np.argsort(cell_keys, kind="stable")
    cell_keys, cell_ids = cell_keys[order], cell_ids[order]
    fk = key(facets)
    pos = np.searchsorted(cell_keys, fk)
    pos = np.minimum(pos, len(cell_keys) - 1)
    ok = cell_keys[pos] == fk
    if not ok.all():
        raise FEMError("mesh integrity: boundary facet with no adjoining cell")
    return cell_ids[pos]


def trace_operator(sys: AssembledSystem, j: int):
    """Sparse map from vertex values to per-facet normal derivatives on face
    ``j``, together with the facet areas."""
    m = sys.mesh
    facets, areas = facets_of_face(m, j)
    cells = _facet_cells(m, facets)
    normal = faces(m.simplex)[j].normal
    coeff = sys.gradients[cells] @ normal          # (F, n+1)
    rows = np.repeat(np.arange(len(facets)), m.dim + 1)
    D = sp.csr_matrix((coeff.ravel(), (rows, m.cells[cells].ravel())),
                      shape=(len(facets), m.n_vertices))
    return D, areas


def neumann_trace(v: np.ndarray, sys: AssembledSystem, j: int) -> np.ndarray:
    """One-sided normal derivative of a P1 function on each facet of face j.

    ``v`` holds values at all mesh vertices (zero on the boundary).
    """
    D, _ = trace_operator(sys, j)
    return D @ np.asarray(v)


def project(u0, basis: EigenBasis) -> np.ndarray:
    """Modal coefficients ``c_k = phi_k^T M u0`` of initial data.

    ``u0`` is either a callable evaluated at the interior vertices (rows of
    coordinates) or an array of interior values.
    """
    sys = basis.system
    if callable(u0):
        vals = np.asarray(u0(sys.interior_points()))
    else:
        vals = np.asarray(u0)
    return basis.vectors.T @ (sys.M @ vals)


def h1_energy(c: np.ndarray, basis: EigenBasis) -> float:
    return float(np.sum(basis.eigenvalues * np.abs(c) ** 2))
