"""Spectral Schrodinger evolution and boundary observability integrals.

With ``-Delta phi_k = lambda_k phi_k`` the solution of ``(i d_t + Delta) u = 0``
is ``u(t) = sum_k c_k exp(-i lambda_k t) phi_k``.  All time integrals of
quadratic boundary quantities are then closed-form pair sums over modes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import AssembledSystem, EigenBasis, trace_operator
from .geometry import Simplex, faces, volume

__all__ = [
    "DynamicsError",
    "SpectralState",
    "ObservabilityReport",
    "evolve",
    "energy",
    "random_state",
    "face_gram",
    "moment_gram",
    "time_kernel",
    "observability_integral",
    "predicted_rate",
    "default_time_grid",
    "oscillation_envelope",
    "envelope_slope",
    "remainder_scan",
    "radial_field_operator",
    "commutator_identity",
    "commutator_identity_residual",
    "crank_nicolson_evolve",
    "poincare_check",
]

TAYLOR_SWITCH = 1e-6
ENVELOPE_WINDOW = 4


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralState:
    """Modal coefficients of ``u(t)``.

    The coefficients at time zero are kept and the current ones are formed
    as ``c0 * exp(-i lambda t)`` on demand, so repeated evolution never
    accumulates phase round-off in the modulus.
    """

    eigenvalues: np.ndarray = field(repr=False)
    c0: np.ndarray = field(repr=False)
    t: float = 0.0

    @classmethod
    def from_coefficients(cls, basis, c, t: float = 0.0) -> "SpectralState":
        lam = basis.eigenvalues if isinstance(basis, EigenBasis) else np.asarray(basis, float)
        c = np.asarray(c, dtype=complex)
        if c.shape != lam.shape:
            raise DynamicsError(f"expected {lam.shape[0]} coefficients, got {c.shape}")
        return cls(lam, c * np.exp(1j * lam * t), t)

    @property
    def c(self) -> np.ndarray:
        if self.t == 0.0:
            return self.c0
        return self.c0 * np.exp(-1j * self.eigenvalues * self.t)

    @property
    def m(self) -> int:
        return len(self.c0)

    def norm(self) -> float:
        return float(np.linalg.norm(self.c))


def evolve(s: SpectralState, t: float) -> SpectralState:
    return SpectralState(s.eigenvalues, s.c0, s.t + t)


def energy(s: SpectralState) -> float:
    """Dirichlet energy ``int |grad u|^2 = sum lambda_k |c_k|^2``."""
    return float(np.sum(s.eigenvalues * np.abs(s.c) ** 2))


def random_state(basis, rng: np.random.Generator, modes: int | None = None,
                 normalize: bool = True) -> SpectralState:
    """Complex Gaussian coefficients with variance ``lambda_k^-2`` on the
    lowest ``modes`` modes (all by default), normalized in L^2."""
    lam = basis.eigenvalues if isinstance(basis, EigenBasis) else np.asarray(basis, float)
    k = len(lam) if modes is None else min(modes, len(lam))
    z = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2)
    c = np.zeros(len(lam), dtype=complex)
    c[:k] = z / lam[:k]
    if normalize:
        c /= np.linalg.norm(c)
    return SpectralState.from_coefficients(lam, c)


def face_gram(basis: EigenBasis, j: int) -> np.ndarray:
    """``G_kl = int_{G_j} (d_w phi_k)(d_w phi_l) dS`` from P1 traces."""
    D, areas = trace_operator(basis.system, j)
    T = D @ basis.full_vectors()
    G = T.T @ (areas[:, None] * T)
    return 0.5 * (G + G.T)


def moment_gram(basis: EigenBasis, center=None) -> np.ndarray:
    """``sum_j ((x - center) . w_j) G^(j)``; ``x . w_j`` is constant on a flat face."""
    s = basis.system.mesh.simplex
    center = s.vertices[0] if center is None else np.asarray(center, float)
    out = np.zeros((basis.m, basis.m))
    for f in faces(s):
        w = float(f.normal @ (f.centroid - center))
        if abs(w) > 1e-14 * s.diameter:
            out += w * face_gram(basis, f.index)
    return out


def time_kernel(eigenvalues: np.ndarray, T: float) -> np.ndarray:
    """``I_kl(T) = int_0^T exp(-i (lambda_k - lambda_l) t) dt``.

    A three-term Taylor expansion replaces the closed form when
    ``|Delta| T < 1e-6``.
    """
    lam = np.asarray(eigenvalues, float)
    d = lam[:, None] - lam[None, :]
    x = d * T
    small = np.abs(x) < TAYLOR_SWITCH
    out = np.empty(d.shape, dtype=complex)
    xs = x[small]
    out[small] = T * (1.0 - 0.5j * xs - xs * xs / 6.0)
    dl = d[~small]
    # expm1 keeps full precision just above the switch
    out[~small] = -np.expm1(-1j * dl * T) / (1j * dl)
    return out


def _pair_weights(s: SpectralState, G: np.ndarray) -> np.ndarray:
    c = s.c
    return np.outer(c, np.conj(c)) * G


def observability_integral(s: SpectralState, G: np.ndarray, T: float,
                           rtol_imag: float = 1e-10) -> float:
    """``int_0^T int_face |d_w u|^2 dS dt`` starting from the state's time."""
    if T < 0:
        raise DynamicsError("T must be non-negative")
    W = _pair_weights(s, np.asarray(G))
    val = np.sum(W * time_kernel(s.eigenvalues, T))
    if abs(val.imag) > rtol_imag * max(abs(val.real), 1e-300) and abs(val.imag) > 1e-14:
        raise DynamicsError(f"pair sum not real: imag {val.imag:.3e} vs real {val.real:.3e}")
    return float(val.real)


def predicted_rate(simplex: Simplex, j: int, E0: float) -> float:
    """Leading coefficient ``2 Vol(G_j) E0 / (n Vol(Omega))`` per unit time."""
    f = faces(simplex)[j]
    return 2.0 * f.volume * E0 / (simplex.dim * volume(simplex))


def default_time_grid(lambda_1: float, t0: float | None = None, points: int = 41,
                      per_octave: int = 4) -> np.ndarray:
    """Geometric grid ``T0 * 2^(i / per_octave)``, ``i < points``.

    ``T0`` defaults to one period ``2 pi / lambda_1``; the default spans
    ``T0 .. 1024 T0``.
    """
    if t0 is None:
        t0 = 2 * math.pi / lambda_1
    return t0 * 2.0 ** (np.arange(points) / per_octave)


def oscillation_envelope(values: np.ndarray, window: int = ENVELOPE_WINDOW) -> np.ndarray:
    """Running max of ``|values|`` over a trailing window."""
    a = np.abs(np.asarray(values, float))
    return np.array([a[max(0, i - window + 1):i + 1].max() for i in range(len(a))])


def envelope_slope(T: np.ndarray, values: np.ndarray, window: int = ENVELOPE_WINDOW) -> float:
    """Least-squares slope of ``log envelope(|values|)`` against ``log T``.

    Only grid points with a full trailing window enter the fit.
    """
    env = oscillation_envelope(values, window)
    ok = env > 0
    ok[:window - 1] = False
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(T)[ok]), np.log(env[ok]), 1)[0])


@dataclass
class ObservabilityReport:
    face: int
    T: np.ndarray
    N: np.ndarray
    P: np.ndarray
    ratio: np.ndarray
    remainder: np.ndarray
    E0: float
    l2_norm_sq: float
    asymptotic_ratio: float
    sup_T_R: float
    slope: float
    lower_bound_ratio: float
    identity_residuals: dict = field(default_factory=dict)

    @property
    def oscillatory_remainder(self) -> np.ndarray:
        """``ratio - asymptotic_ratio``: the part that must decay like 1/T."""
        return self.ratio - self.asymptotic_ratio

    def summary(self, tol_ratio: float = 0.10, min_T: float | None = None,
                slope_window=(-1.3, -0.7)) -> dict:
        sel = np.ones(len(self.T), dtype=bool) if min_T is None else self.T >= min_T
        worst = float(np.abs(self.ratio[sel] - 1).max()) if sel.any() else float("nan")
        ratio_ok = bool(worst <= tol_ratio)
        # stationary data: nothing oscillates, so there is no slope to judge
        flat = float(np.abs(self.oscillatory_remainder).max()) <= 1e-12 * max(1.0, abs(self.asymptotic_ratio))
        slope_ok = flat or bool(slope_window[0] <= self.slope <= slope_window[1])
        return {
            "face": self.face,
            "ratio": float(self.ratio[-1]),
            "max_ratio_error": worst,
            "asymptotic_ratio": self.asymptotic_ratio,
            "sup_T_R": self.sup_T_R,
            "slope": self.slope,
            "lower_bound_ratio": self.lower_bound_ratio,
            "E0": self.E0,
            "identity_residuals": dict(self.identity_residuals),
            "pass": ratio_ok and slope_ok,
            "ratio_pass": ratio_ok,
            "slope_pass": slope_ok,
            "slope_applicable": not flat,
        }


def remainder_scan(s: SpectralState, basis: EigenBasis, j: int, T_grid=None,
                   G: np.ndarray | None = None,
                   with_identity: bool = False) -> ObservabilityReport:
    """Compare ``N_j(T)`` with the predicted ``P_j(T)`` along a time grid.

    The ratio settles to ``asymptotic_ratio`` (1 in the continuum limit, and
    off by the discretization bias of the face Gram diagonal on a mesh); the
    slope is fitted on the envelope of ``ratio - asymptotic_ratio``.
    """
    E0 = energy(s)
    if not E0 > 0:
        raise DynamicsError("asymptotic undefined for zero solution")
    simplex = basis.system.mesh.simplex
    if G is None:
        G = face_gram(basis, j)
    T_grid = default_time_grid(basis.eigenvalues[0]) if T_grid is None else np.asarray(T_grid, float)
    rate = predicted_rate(simplex, j, E0)
    N = np.array([observability_integral(s, G, T) for T in T_grid])
    P = rate * T_grid
    ratio = N / P
    R = ratio - 1.0
    # time-averaged part of the pair sum: equal-frequency pairs only
    lam = s.eigenvalues
    same = np.abs(lam[:, None] - lam[None, :]) <= 1e-12 * lam.max()
    asym = float(np.real(np.sum(_pair_weights(s, G)[same]))) / rate
    l2 = float(np.sum(np.abs(s.c) ** 2))
    residuals = {}
    if with_identity:
        # the field centered at the vertex opposite face j isolates face j
        p = simplex.vertices[j]
        for label, T in (("T_first", T_grid[0]), ("T_last", T_grid[-1])):
            residuals[label] = commutator_identity_residual(s, basis, float(T), p)
    return ObservabilityReport(
        face=j, T=T_grid, N=N, P=P, ratio=ratio, remainder=R, E0=E0,
        l2_norm_sq=l2, asymptotic_ratio=asym,
        sup_T_R=float(np.max(T_grid * np.abs(R))),
        slope=envelope_slope(T_grid, ratio - asym),
        lower_bound_ratio=float(np.min(N / l2)) if l2 > 0 else float("nan"),
        identity_residuals=residuals,
    )


def radial_field_operator(sys: AssembledSystem, center=None) -> sp.csr_matrix:
    """Sparse map ``u -> (x - center) . grad u`` at vertices.

    Cell gradients are averaged to vertices with volume weights.
    """
    m = sys.mesh
    center = m.simplex.vertices[0] if center is None else np.asarray(center, float)
    C, k = m.cells.shape
    N = m.n_vertices
    # vertex-averaged gradient: g_v = sum_c vol_c grad_c / sum_c vol_c
    wsum = np.bincount(m.cells.ravel(), weights=np.repeat(sys.volumes, k), minlength=N)
    rows, cols, vals = [], [], []
    x = m.vertices - center
    for a in range(k):
        v = m.cells[:, a]
        xv = x[v]
        for b in range(k):
            # contribution of u[cells[:, b]] to the averaged gradient at v
            coef = sys.volumes * np.einsum("cd,cd->c", sys.gradients[:, b, :], xv) / wsum[v]
            rows.append(v)
            cols.append(m.cells[:, b])
            vals.append(coef)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N)).tocsr()


def commutator_identity(s: SpectralState, basis: EigenBasis, T: float,
                        center=None) -> dict:
    """Both sides of the flux identity
    ``int_0^T int_bdry (Xu)(d_nu conj u) = 2 T E(0) + [int i (Xu) conj u]_0^T``
    for ``X = (x - p0) . grad``.  On the boundary ``Xu = ((x - p0) . w) d_w u``
    because tangential derivatives of Dirichlet data vanish."""
    E0 = energy(s)
    if not E0 > 0:
        raise DynamicsError("identity residual undefined for zero solution")
    sys = basis.system
    Phi = basis.full_vectors()
    lhs = observability_integral(s, moment_gram(basis, center), T)
    Xop = radial_field_operator(sys, center)
    Q = Phi.T @ (sys.M_full @ (Xop @ Phi))

    def volume_term(c):
        # int i (Xu) conj(u) dx with mass-matrix quadrature
        return 1j * np.conj(c) @ (Q @ c)

    boundary = volume_term(evolve(s, T).c) - volume_term(s.c)
    rhs = 2.0 * T * E0 + boundary
    return {"lhs": lhs, "rhs": float(rhs.real), "rhs_imag": float(rhs.imag),
            "volume_term": float(boundary.real), "E0": E0, "T": T,
            "residual": abs(lhs - rhs.real) / (2.0 * T * E0)}


def commutator_identity_residual(s: SpectralState, basis: EigenBasis, T: float,
                                 center=None) -> float:
    return commutator_identity(s, basis, T, center)["residual"]


def crank_nicolson_evolve(sys: AssembledSystem, u0, dt: float, steps: int,
                          callback=None) -> np.ndarray:
    """``(M + i dt/2 K) u+ = (M - i dt/2 K) u`` on the interior dofs.

    ``callback(step, u)`` is invoked after every step when given.
    """
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    A = (sys.M + 0.5j * dt * sys.K).tocsc()
    Bm = (sys.M - 0.5j * dt * sys.K).tocsr()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise DynamicsError(f"Crank-Nicolson factorization failed: {exc}") from exc
    u = np.asarray(u0, dtype=complex).copy()
    for i in range(steps):
        u = lu.solve(Bm @ u)
        if not np.all(np.isfinite(u)):
            raise DynamicsError(f"non-finite state at step {i + 1}")
        if callback is not None:
            callback(i + 1, u)
    return u


def poincare_check(sys: AssembledSystem, v, rtol: float = 1e-10):
    """``||v|| <= L sqrt(e - 1) ||d_x1 v||`` with ``L`` the longest side.

    ``v`` holds interior or full vertex values of a P1 function vanishing on
    the boundary.  Returns ``(lhs, rhs, passed)``.
    """
    v = np.asarray(v)
    if v.shape[0] == sys.n_dofs and sys.n_dofs != sys.mesh.n_vertices:
        v = sys.full_vector(v)
    lhs = math.sqrt(max(float(np.real(np.conj(v) @ (sys.M_full @ v))), 0.0))
    dx = np.einsum("ca,ca->c", sys.gradients[:, :, 0], v[sys.mesh.cells])
    grad_norm = math.sqrt(float(np.sum(sys.volumes * np.abs(dx) ** 2)))
    L = sys.mesh.simplex.longest_side
    rhs = L * math.sqrt(math.e - 1) * grad_norm
    return lhs, rhs, bool(lhs <= rhs * (1 + rtol))
