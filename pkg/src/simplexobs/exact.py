"""Closed-form reference solutions and quadrature oracles.

Two analytic families live here: the separable square solution that has no
uniform boundary observability constant, and the Dirichlet eigenmodes of the
half-square triangle ``{0 < y < x < pi}``.  The Gauss-Legendre routines are
used as independent oracles for the finite-element path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadratureError",
    "gauss_legendre",
    "gauss_legendre_2d",
    "SquareCounterexample",
    "square_counterexample",
    "TriangleEigenmode",
    "triangle_mode",
    "triangle_modes",
    "HALF_SQUARE_EDGES",
    "edge_quadrature_oracle",
    "time_factor",
]

MAX_PANELS = 2 ** 20


class QuadratureError(RuntimeError):
    pass


_NODES = {}


def _rule(order: int):
    if order not in _NODES:
        _NODES[order] = np.polynomial.legendre.leggauss(order)
    return _NODES[order]


def _panels(f, a: float, b: float, panels: int, order: int):
    x, w = _rule(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return np.sum(wts * f(pts))


def gauss_legendre(f, a: float, b: float, tol: float = 1e-12, order: int = 16):
    """Composite Gauss-Legendre with panel doubling.

    Stops once two successive values agree to ``tol`` (relative to
    ``max(1, |value|)``).  ``f`` must accept an array of abscissae.
    """
    panels = 1
    prev = _panels(f, a, b, panels, order)
    while panels < MAX_PANELS:
        panels *= 2
        cur = _panels(f, a, b, panels, order)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise QuadratureError(f"no convergence on [{a}, {b}] with {panels} panels")


def gauss_legendre_2d(f, ax: float, bx: float, ylo, yhi, tol: float = 1e-12,
                      order: int = 16):
    """Iterated rule for ``int_ax^bx int_ylo(x)^yhi(x) f(x, y) dy dx``.

    ``ylo``/``yhi`` may be constants or callables of ``x``.
    """
    lo = ylo if callable(ylo) else (lambda x: np.full_like(x, ylo))
    hi = yhi if callable(yhi) else (lambda x: np.full_like(x, yhi))
    x, w = _rule(order)

    def inner(xs, panels):
        a = lo(xs)
        b = hi(xs)
        edges = a[:, None] + (b - a)[:, None] * np.linspace(0, 1, panels + 1)[None, :]
        half = 0.5 * np.diff(edges, axis=1)
        mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
        ys = mid[..., None] + half[..., None] * x
        ws = half[..., None] * w
        vals = f(xs[:, None, None], ys)
        return np.sum(ws * vals, axis=(1, 2))

    panels = 1
    prev = None
    while panels < 2 ** 10:
        cur = _panels(lambda xs: inner(xs, panels), ax, bx, panels, order)
        if prev is not None and abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
        panels *= 2
    raise QuadratureError("2D quadrature did not converge")


def time_factor(lam_k: float, lam_l: float, T: float) -> complex:
    """``int_0^T exp(-i (lam_k - lam_l) t) dt`` in closed form."""
    d = lam_k - lam_l
    if d == 0.0:
        return complex(T)
    return complex(-np.expm1(-1j * d * T) / (1j * d))


@dataclass(frozen=True)
class SquareCounterexample:
    """``u = exp(-i t (1 + n^2)) sin(x) sin(n y) / pi`` on ``[0, 2 pi]^2``."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("mode n must be >= 1")

    @property
    def frequency(self) -> float:
        return 1.0 + self.n ** 2

    def value(self, x, y, t=0.0):
        return np.exp(-1j * t * self.frequency) * np.sin(x) * np.sin(self.n * y) / math.pi

    def gradient(self, x, y, t=0.0):
        ph = np.exp(-1j * t * self.frequency) / math.pi
        return (ph * np.cos(x) * np.sin(self.n * y),
                ph * self.n * np.sin(x) * np.cos(self.n * y))

    def energy(self) -> float:
        return 1.0 + self.n ** 2

    def right_edge_observability(self, T: float) -> float:
        return T / math.pi

    # quadrature cross-checks

    def l2_norm_quadrature(self) -> float:
        n = self.n
        # separable: int sin^2 x dx * int sin^2 ny dy / pi^2
        ix = gauss_legendre(lambda x: np.sin(x) ** 2, 0, 2 * math.pi)
        iy = gauss_legendre(lambda y: np.sin(n * y) ** 2, 0, 2 * math.pi)
        return math.sqrt(ix * iy) / math.pi

    def energy_quadrature(self) -> float:
        def integrand(x, y):
            gx, gy = self.gradient(x, y)
            return np.abs(gx) ** 2 + np.abs(gy) ** 2
        two_pi = 2 * math.pi
        return float(np.real(gauss_legendre_2d(integrand, 0, two_pi, 0, two_pi)))

    def edge_observability_quadrature(self, T: float) -> float:
        """Integrate ``|d_x u|^2`` over ``{x = 2 pi}`` and ``[0, T]``."""
        def integrand(t, y):
            gx, _ = self.gradient(2 * math.pi, y, t)
            return np.abs(gx) ** 2
        return float(gauss_legendre_2d(integrand, 0.0, T, 0.0, 2 * math.pi))


def square_counterexample(n: int, T: float) -> dict:
    if T < 0:
        raise ValueError("T must be non-negative")
    sq = SquareCounterexample(n)
    E = sq.energy()
    obs = sq.right_edge_observability(T)
    return {"n": n, "T": T, "energy": E, "observability": obs, "ratio": obs / E}


@dataclass(frozen=True)
class TriangleEigenmode:
    """Dirichlet eigenmode ``sin(mx)sin(ky) - sin(kx)sin(my)`` of the
    triangle ``{0 < y < x < pi}``, eigenvalue ``m^2 + k^2``."""

    m: int
    k: int

    def __post_init__(self):
        if not (self.m > self.k >= 1):
            raise ValueError(f"need m > k >= 1, got ({self.m}, {self.k})")

    @property
    def eigenvalue(self) -> float:
        return float(self.m ** 2 + self.k ** 2)

    @property
    def norm_squared(self) -> float:
        # half of the square integral pi^2/2; cross terms vanish for m != k
        return math.pi ** 2 / 4

    def __call__(self, x, y):
        m, k = self.m, self.k
        return np.sin(m * x) * np.sin(k * y) - np.sin(k * x) * np.sin(m * y)

    def gradient(self, x, y):
        m, k = self.m, self.k
        gx = m * np.cos(m * x) * np.sin(k * y) - k * np.cos(k * x) * np.sin(m * y)
        gy = k * np.sin(m * x) * np.cos(k * y) - m * np.sin(k * x) * np.cos(m * y)
        return gx, gy

    def laplacian(self, x, y):
        return -self.eigenvalue * self(x, y)

    def normal_derivative(self, edge: int, s):
        """``d_nu phi`` at arclength fraction ``s`` in [0, 1] along an edge."""
        a, b, nu, _ = HALF_SQUARE_EDGES[edge]
        pts = a[None, :] + np.asarray(s)[:, None] * (b - a)[None, :]
        gx, gy = self.gradient(pts[:, 0], pts[:, 1])
        return gx * nu[0] + gy * nu[1]


def triangle_mode(m: int, k: int) -> TriangleEigenmode:
    return TriangleEigenmode(m, k)


def triangle_modes(count: int) -> list[TriangleEigenmode]:
    """The ``count`` lowest modes, ordered by eigenvalue then by ``m``."""
    out = []
    r = 2
    while True:
        out = [TriangleEigenmode(m, k) for m in range(2, r + 1) for k in range(1, m)]
        out.sort(key=lambda md: (md.eigenvalue, md.m))
        if len(out) >= count and out[count - 1].eigenvalue <= (r + 1) ** 2:
            return out[:count]
        r += 1


_P0 = np.array([0.0, 0.0])
_P1 = np.array([math.pi, 0.0])
_P2 = np.array([math.pi, math.pi])

# face index j omits vertex j of (0,0), (pi,0), (pi,pi):
# (start, end, outward unit normal, length)
HALF_SQUARE_EDGES = {
    0: (_P1, _P2, np.array([1.0, 0.0]), math.pi),
    1: (_P0, _P2, np.array([-1.0, 1.0]) / math.sqrt(2), math.pi * math.sqrt(2)),
    2: (_P0, _P1, np.array([0.0, -1.0]), math.pi),
}


def edge_quadrature_oracle(mode_a, mode_b, edge: int, T: float | None = None,
                           tol: float = 1e-12):
    """``int_edge (d_nu phi_a)(d_nu phi_b) ds`` by adaptive Gauss-Legendre.

    Modes are ``TriangleEigenmode`` instances or ``(m, k)`` pairs; they are
    used unnormalized.  With ``T`` the value is multiplied by the time factor
    ``int_0^T exp(-i (lam_a - lam_b) t) dt``.
    """
    if not isinstance(mode_a, TriangleEigenmode):
        mode_a = TriangleEigenmode(*mode_a)
    if not isinstance(mode_b, TriangleEigenmode):
        mode_b = TriangleEigenmode(*mode_b)
    length = HALF_SQUARE_EDGES[edge][3]
    val = length * gauss_legendre(
        lambda s: mode_a.normal_derivative(edge, s) * mode_b.normal_derivative(edge, s),
        0.0, 1.0, tol=tol)
    if T is None:
        return float(val)
    return val * time_factor(mode_a.eigenvalue, mode_b.eigenvalue, T)
