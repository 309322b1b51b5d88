import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from simplexobs.dynamics import (
    TAYLOR_SWITCH,
    DynamicsError,
    SpectralState,
    commutator_identity,
    crank_nicolson_evolve,
    default_time_grid,
    energy,
    envelope_slope,
    evolve,
    face_gram,
    moment_gram,
    observability_integral,
    oscillation_envelope,
    poincare_check,
    predicted_rate,
    random_state,
    remainder_scan,
    time_kernel,
)
from simplexobs.fem import solve_eigen
from simplexobs.geometry import altitude, named_simplex, random_simplex, standard_simplex
from simplexobs.studies import cn_richardson, stationary_state, system_at

times = st.floats(-50, 50, allow_nan=False)


def test_evolve_identity_and_single_mode(hs_basis_5):
    b = hs_basis_5
    s = random_state(b, np.random.default_rng(0))
    assert np.array_equal(evolve(s, 0.0).c, s.c)
    one = stationary_state(b, 2)
    t = 3.7
    c = evolve(one, t).c
    assert abs(c[2]) == pytest.approx(1.0, abs=1e-15)
    assert np.angle(c[2]) == pytest.approx(
        math.remainder(-b.eigenvalues[2] * t, 2 * math.pi), abs=1e-12)


@given(t1=times, t2=times, seed=st.integers(0, 2 ** 32 - 1))
def test_group_property(hs_basis_5, t1, t2, seed):
    s = random_state(hs_basis_5, np.random.default_rng(seed))
    a = evolve(evolve(s, t1), t2).c
    b = evolve(s, t1 + t2).c
    assert np.max(np.abs(a - b)) < 1e-13


def test_energy(hs_basis_5):
    b = hs_basis_5
    assert energy(stationary_state(b, 4)) == pytest.approx(b.eigenvalues[4], rel=1e-15)
    zero = SpectralState.from_coefficients(b, np.zeros(b.m))
    assert energy(zero) == 0.0
    rng = np.random.default_rng(5)
    s = random_state(b, rng)
    E = energy(s)
    n = s.norm()
    for t in rng.uniform(-1e3, 1e3, 100):
        u = evolve(s, t)
        assert energy(u) == pytest.approx(E, rel=1e-13)
        assert u.norm() == pytest.approx(n, rel=1e-13)


def test_bad_coefficients(hs_basis_5):
    with pytest.raises(DynamicsError):
        SpectralState.from_coefficients(hs_basis_5, np.ones(3))


def test_face_gram_psd(hs_basis_5):
    for j in range(3):
        G = face_gram(hs_basis_5, j)
        assert np.array_equal(G, G.T)
        assert np.all(np.diag(G) >= 0)
        assert np.linalg.eigvalsh(G).min() > -1e-10 * np.abs(G).max()


def test_predicted_rate():
    s = standard_simplex(2)
    assert predicted_rate(s, 0, 1.0) == pytest.approx(2 * math.sqrt(2), rel=1e-15)
    assert predicted_rate(s, 1, 1.0) == pytest.approx(2.0, rel=1e-15)
    rng = np.random.default_rng(9)
    for _ in range(10):
        t = random_simplex(2, rng)
        E0 = rng.uniform(0.1, 10)
        for j in range(3):
            assert predicted_rate(t, j, E0) == pytest.approx(2 * E0 / altitude(t, j), rel=1e-12)


def test_rellich_moment_sum(half_square):
    # sum_j (x . w_j) G^(j)_kk -> 2 lambda_k for normalized modes
    errs = []
    for L in (4, 5):
        b = solve_eigen(system_at(half_square, L), 6)
        d = np.diag(moment_gram(b))
        errs.append(np.max(np.abs(d / (2 * b.eigenvalues) - 1)))
    assert errs[1] < errs[0]
    assert errs[1] < 0.05


def test_moment_gram_diagonal_center_free(half_square):
    # a constant field commutes with the Laplacian, so the diagonal of
    # sum_j (e . w_j) G^(j) tends to zero; off-diagonal entries do not
    shift = np.array([0.3, -1.2])
    errs = []
    for L in (4, 5):
        b = solve_eigen(system_at(half_square, L), 6)
        d = np.diag(moment_gram(b, center=shift) - moment_gram(b))
        errs.append(np.max(np.abs(d) / (2 * b.eigenvalues)))
    assert errs[0] / errs[1] > 3 and errs[1] < 0.03


def test_observability_examples(hs_basis_5):
    b = hs_basis_5
    G = face_gram(b, 0)
    s = random_state(b, np.random.default_rng(1))
    assert observability_integral(s, G, 0.0) == 0.0
    one = stationary_state(b, 1)
    for T in (0.5, 3.0, 100.0):
        assert observability_integral(one, G, T) == pytest.approx(T * G[1, 1], rel=1e-14)
    with pytest.raises(DynamicsError):
        observability_integral(s, G, -1.0)


@pytest.mark.parametrize("n", [1, 4])
def test_square_counterexample_through_pair_sum(n):
    # one normalized mode; int over the edge of |d_x u|^2 = 1/pi
    s = SpectralState.from_coefficients([1.0 + n * n], [1.0])
    assert observability_integral(s, np.array([[1 / math.pi]]), math.pi) == pytest.approx(1.0)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_n_real_and_monotone(hs_basis_5, seed):
    b = hs_basis_5
    s = random_state(b, np.random.default_rng(seed), modes=8)
    G = face_gram(b, seed % 3)
    T = np.sort(np.random.default_rng(seed).uniform(0, 40, 30))
    N = np.array([observability_integral(s, G, t) for t in T])
    assert np.all(N >= 0)
    assert np.all(np.diff(N) >= -1e-12 * N.max())


def test_time_kernel_taylor_branch():
    mpmath.mp.dps = 40
    T = 2.0
    for gap in (1e-9, 3e-7, 4.9e-7, 6e-7, 1e-4):
        lam = np.array([1.0, 1.0 + gap])
        I = time_kernel(lam, T)[0, 1]
        d = mpmath.mpf(lam[0]) - mpmath.mpf(lam[1])
        ref = (1 - mpmath.exp(-1j * d * T)) / (1j * d)
        assert abs(I - complex(ref)) <= 1e-15 * T
    assert time_kernel(np.array([3.0, 3.0]), T)[0, 1] == T
    assert TAYLOR_SWITCH == 1e-6


def test_stationary_remainder_constant(hs_basis_5):
    b = hs_basis_5
    r = remainder_scan(stationary_state(b, 0), b, 0)
    assert np.max(np.abs(r.oscillatory_remainder)) < 1e-12
    # the only remainder is the discretization bias of G_kk
    rate = predicted_rate(b.system.mesh.simplex, 0, b.eigenvalues[0])
    assert r.ratio[0] == pytest.approx(face_gram(b, 0)[0, 0] / rate, rel=1e-12)
    assert r.summary(tol_ratio=0.05)["pass"]


def test_zero_state_rejected(hs_basis_5):
    zero = SpectralState.from_coefficients(hs_basis_5, np.zeros(hs_basis_5.m))
    with pytest.raises(DynamicsError, match="zero solution"):
        remainder_scan(zero, hs_basis_5, 0)
    with pytest.raises(DynamicsError):
        commutator_identity(zero, hs_basis_5, 1.0)


def test_two_mode_bound(hs_basis_5):
    b = hs_basis_5
    c = np.zeros(b.m, complex)
    c[:2] = 1 / math.sqrt(2)
    s = SpectralState.from_coefficients(b, c)
    for j in range(3):
        G = face_gram(b, j)
        r = remainder_scan(s, b, j)
        rate = predicted_rate(b.system.mesh.simplex, j, energy(s))
        gap = b.eigenvalues[1] - b.eigenvalues[0]
        # cross term 2 Re(c1 conj(c2) G12 I12), |I12| <= 2 / gap
        C = 2 * 0.5 * abs(G[0, 1]) * 2 / gap / rate
        slack = 64 * np.finfo(float).eps * r.T * np.abs(r.ratio).max()
        assert np.all(r.T * np.abs(r.oscillatory_remainder) <= C * (1 + 1e-10) + slack)


def test_additivity(hs_basis_5):
    b = hs_basis_5
    rng = np.random.default_rng(11)
    s = random_state(b, rng, modes=6)
    ca = np.where(np.arange(b.m) < 3, s.c, 0)
    cb = s.c - ca
    sa = SpectralState.from_coefficients(b, ca)
    sb = SpectralState.from_coefficients(b, cb)
    G = face_gram(b, 1)
    lam = b.eigenvalues
    W = np.abs(np.outer(ca, np.conj(cb)) * G)
    C = 2 * np.sum(W * 2 / np.abs(lam[:, None] - lam[None, :] + (W == 0)))
    for T in (1.0, 10.0, 1e3, 1e5):
        d = observability_integral(s, G, T) - observability_integral(sa, G, T) \
            - observability_integral(sb, G, T)
        assert abs(d) <= C * (1 + 1e-9)


def test_slope_on_oscillating_decay():
    T = default_time_grid(1.0)
    assert len(T) == 41 and T[-1] / T[0] == pytest.approx(1024)
    R = np.cos(3 * T) / T
    assert envelope_slope(T, R) == pytest.approx(-1.0, abs=0.1)
    env = oscillation_envelope(np.array([1.0, -3.0, 2.0, 0.5, 0.1, 0.1]), 2)
    assert np.array_equal(env, [1, 3, 3, 2, 0.5, 0.1])


def test_random_state_report_passes(half_square):
    b = solve_eigen(system_at(half_square, 6))
    s = random_state(b, np.random.default_rng(3), modes=20)
    for j in range(3):
        r = remainder_scan(s, b, j)
        out = r.summary(min_T=32 * r.T[0])
        assert out["ratio_pass"] and out["slope_pass"], out
        assert r.sup_T_R > 0 and r.lower_bound_ratio > 0


def test_identity_stationary_converges():
    s = standard_simplex(2)
    res = []
    for L in (3, 4, 5):
        b = solve_eigen(system_at(s, L), 4)
        res.append(commutator_identity(stationary_state(b, 0), b, 1.0)["residual"])
    assert res[0] > res[1] > res[2]


def test_identity_small_T_bounded(std2_full_basis_3):
    b = std2_full_basis_3
    s = random_state(b, np.random.default_rng(2))
    r1 = commutator_identity(s, b, 1e-6)
    r2 = commutator_identity(s, b, 1e-3)
    scale = 2 * r1["T"] * r1["E0"]
    assert abs(r1["lhs"]) < 2 * scale and abs(r1["rhs"]) < 2 * scale
    assert math.isfinite(r1["residual"]) and r1["residual"] < 10 * r2["residual"] + 1e-6


def test_crank_nicolson_conservation(std2_system_3, std2_full_basis_3):
    sys = std2_system_3
    rng = np.random.default_rng(4)
    u0 = rng.standard_normal(sys.n_dofs) + 1j * rng.standard_normal(sys.n_dofs)
    m0 = np.real(np.conj(u0) @ (sys.M @ u0))
    k0 = np.real(np.conj(u0) @ (sys.K @ u0))
    u = crank_nicolson_evolve(sys, u0, 0.01, 1000)
    assert abs(np.real(np.conj(u) @ (sys.M @ u)) / m0 - 1) < 1e-11
    assert abs(np.real(np.conj(u) @ (sys.K @ u)) / k0 - 1) < 1e-10
    assert np.array_equal(crank_nicolson_evolve(sys, u0, 0.1, 0), u0)
    assert np.allclose(crank_nicolson_evolve(sys, u0, 1e-300, 2), u0, atol=1e-14)
    with pytest.raises(DynamicsError):
        crank_nicolson_evolve(sys, u0, 0.0, 1)


def test_crank_nicolson_order():
    # half-square keeps dt * lambda small for the five lowest modes
    e1, e2, ratio = cn_richardson(named_simplex("half-square-pi"), 3, 1.0, 100)
    assert abs(ratio - 4) < 0.8


def test_poincare(hs_system_5, hs_basis_5):
    zero = np.zeros(hs_system_5.n_dofs)
    assert poincare_check(hs_system_5, zero) == (0.0, 0.0, True)
    assert poincare_check(hs_system_5, hs_basis_5.vectors[:, 0])[2]


@given(st.integers(0, 2 ** 32 - 1))
def test_poincare_random(seed):
    rng = np.random.default_rng(seed)
    sys = system_at(random_simplex(2, rng), 3)
    v = rng.standard_normal(sys.n_dofs)
    assert poincare_check(sys, v)[2]
    assert poincare_check(sys, sys.full_vector(v))[:2] == poincare_check(sys, v)[:2]
