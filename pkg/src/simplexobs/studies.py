"""Refinement studies shared by the CLI and the acceptance suite."""
from __future__ import annotations

import math

import numpy as np

from .dynamics import (
    SpectralState,
    commutator_identity,
    crank_nicolson_evolve,
    default_time_grid,
    evolve,
    face_gram,
    poincare_check,
    predicted_rate,
    random_state,
    remainder_scan,
)
from .exact import triangle_modes
from .fem import assemble, solve_eigen
from .geometry import Simplex, faces, named_simplex, normalize, standard_simplex
from .mesh import refined_mesh

# finest levels used for desk-scale verification
FINEST_LEVEL = {2: 7, 3: 6}
MAX_LEVEL = {2: 8, 3: 6}


def system_at(simplex: Simplex, level: int, coefficient=None):
    return assemble(refined_mesh(simplex, level), coefficient)


def empirical_orders(errors: np.ndarray) -> np.ndarray:
    """``log2(e_L / e_{L+1})`` for rows of errors at consecutive levels."""
    e = np.asarray(errors, float)
    return np.log2(e[:-1] / e[1:])


def eigen_convergence(simplex: Simplex, levels, modes: int = 10, exact=None):
    """Eigenvalues per level; with ``exact`` also relative errors and orders."""
    rows = []
    lams = []
    for L in levels:
        b = solve_eigen(system_at(simplex, L), modes)
        lams.append(b.eigenvalues)
        rows.extend((L, k + 1, float(lam), float(res))
                    for k, (lam, res) in enumerate(zip(b.eigenvalues, b.residuals)))
    out = {"levels": list(levels), "eigenvalues": np.array(lams), "table": rows}
    if exact is not None:
        ex = np.asarray(exact, float)[:modes]
        err = np.abs(np.array(lams) - ex) / ex
        out["exact"] = ex
        out["rel_errors"] = err
        out["orders"] = empirical_orders(err)
    return out


def half_square_exact(modes: int) -> np.ndarray:
    return np.array([md.eigenvalue for md in triangle_modes(modes)])


def face_identity_errors(basis, modes: int = 5) -> np.ndarray:
    """``G_kk / (2 lambda_k Vol(G_j) / (n Vol)) - 1`` for every face, shape (faces, modes)."""
    s = basis.system.mesh.simplex
    out = []
    for f in faces(s):
        G = face_gram(basis, f.index)
        pred = predicted_rate(s, f.index, 1.0) * basis.eigenvalues[:modes]
        out.append(np.diag(G)[:modes] / pred - 1.0)
    return np.array(out)


def face_identity_study(simplex: Simplex, levels, modes: int = 5):
    worst = []
    per_level = []
    for L in levels:
        b = solve_eigen(system_at(simplex, L), max(modes, 1))
        e = face_identity_errors(b, modes)
        per_level.append(e)
        worst.append(float(np.abs(e).max()))
    return {"levels": list(levels), "errors": per_level, "worst": worst}


def observability_study(simplex: Simplex, level: int, seed: int, modes: int = 20,
                        faces_=None, T_grid=None, m: int | None = None):
    b = solve_eigen(system_at(simplex, level), m)
    st = random_state(b, np.random.default_rng(seed), modes=modes)
    T_grid = default_time_grid(b.eigenvalues[0]) if T_grid is None else T_grid
    idx = range(simplex.dim + 1) if faces_ is None else faces_
    return b, st, [remainder_scan(st, b, j, T_grid) for j in idx]


def identity_study(simplex: Simplex, levels, seeds, T=None, modes=None):
    """Commutator-identity residuals, rows indexed by seed, columns by level."""
    res = np.zeros((len(seeds), len(levels)))
    details = []
    for jl, L in enumerate(levels):
        b = solve_eigen(system_at(simplex, L))
        TT = 2 * math.pi / b.eigenvalues[0] if T is None else T
        for i, seed in enumerate(seeds):
            st = random_state(b, np.random.default_rng(seed), modes=modes)
            d = commutator_identity(st, b, TT)
            d.update(level=L, seed=seed)
            details.append(d)
            res[i, jl] = d["residual"]
    return res, details


def cn_richardson(simplex: Simplex, level: int, T: float, steps: int, seed: int = 0,
                  modes: int = 5):
    """Crank-Nicolson errors against exact full-basis evolution at ``dt`` and
    ``dt / 2``; returns ``(err_dt, err_dt2, ratio)``."""
    sys = system_at(simplex, level)
    b = solve_eigen(sys, sys.n_dofs, method="dense")
    st = random_state(b, np.random.default_rng(seed), modes=modes)
    u0 = b.vectors @ st.c
    exact = b.vectors @ evolve(st, T).c

    def err(n):
        u = crank_nicolson_evolve(sys, u0, T / n, n)
        d = u - exact
        return math.sqrt(float(np.real(np.conj(d) @ (sys.M @ d))))

    e1, e2 = err(steps), err(2 * steps)
    return e1, e2, e1 / e2


def gamma_conjugation(simplex: Simplex, level: int, modes: int = 10):
    """Eigenvalues of the Gamma-weighted operator on the refined standard
    simplex versus the plain Laplacian on the matched physical mesh."""
    nrm = normalize(simplex)
    std = standard_simplex(simplex.dim)
    lam_std = solve_eigen(system_at(std, level, nrm.Gamma), modes).eigenvalues
    lam_phys = solve_eigen(system_at(simplex, level), modes).eigenvalues
    return lam_std, lam_phys


def poincare_sweep(simplices, level: int, samples: int, rng: np.random.Generator):
    rows = []
    for i, s in enumerate(simplices):
        sys = system_at(s, level)
        for k in range(samples):
            v = rng.standard_normal(sys.n_dofs)
            lhs, rhs, ok = poincare_check(sys, v)
            rows.append((i, k, lhs, rhs, ok))
    return rows


def half_square() -> Simplex:
    return named_simplex("half-square-pi")


def stationary_state(basis, k: int = 0) -> SpectralState:
    c = np.zeros(basis.m, dtype=complex)
    c[k] = 1.0
    return SpectralState.from_coefficients(basis, c)
