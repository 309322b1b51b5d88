import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from simplexobs.geometry import (
    GeometryError,
    Simplex,
    altitude,
    denormalize,
    faces,
    load_simplex,
    named_simplex,
    normalize,
    parallelepiped_face_volume,
    random_simplex,
    standard_simplex,
    volume,
)

seeds = st.integers(0, 2 ** 32 - 1)


def test_volume_standard():
    assert volume(standard_simplex(2)) == pytest.approx(0.5, rel=1e-15)
    assert volume(standard_simplex(3)) == pytest.approx(1 / 6, rel=1e-15)
    assert volume(Simplex([[0, 0], [2, 0], [0, 2]])) == pytest.approx(2.0, rel=1e-15)


def test_degenerate_rejected():
    with pytest.raises(GeometryError):
        Simplex([[0, 0], [1, 1], [2, 2]])
    with pytest.raises(GeometryError):
        Simplex([[0, 0], [1, 0]])


def test_faces_standard_2():
    fs = faces(standard_simplex(2))
    assert len(fs) == 3
    # face 1 omits vertex (1,0): it lies on x1 = 0
    assert np.array_equal(fs[1].normal, [-1.0, 0.0])
    assert fs[1].volume == pytest.approx(1.0)
    assert np.allclose(fs[0].normal, np.array([1.0, 1.0]) / math.sqrt(2), atol=1e-15)
    assert fs[0].volume == pytest.approx(math.sqrt(2))


def test_faces_standard_3():
    fs = faces(standard_simplex(3))
    assert np.allclose(fs[0].normal, np.ones(3) / math.sqrt(3), atol=1e-15)
    for j in (1, 2, 3):
        e = np.zeros(3)
        e[j - 1] = -1.0
        assert np.array_equal(fs[j].normal, e)


def test_altitude():
    assert altitude(standard_simplex(2), 0) == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    s = named_simplex("equilateral:3.0")
    for j in range(3):
        assert altitude(s, j) == pytest.approx(math.sqrt(3) / 2 * 3.0, rel=1e-14)
    with pytest.raises(GeometryError):
        altitude(standard_simplex(3), 0)


def test_altitude_matches_general_constant(rng):
    for _ in range(20):
        s = random_simplex(2, rng)
        fs = faces(s)
        for f in fs:
            general = 2 * f.volume / (2 * volume(s))
            assert 2 / altitude(s, f.index) == pytest.approx(general, rel=1e-12)


def test_normalize_examples():
    nrm = normalize(standard_simplex(2))
    assert np.allclose(nrm.A, np.eye(2)) and np.allclose(nrm.Gamma, np.eye(2))
    nrm = normalize(Simplex([[0, 0], [2, 0], [0, 2]]))
    assert np.allclose(nrm.B, np.diag([0.5, 0.5]), atol=1e-15)
    assert np.allclose(nrm.Gamma, np.diag([0.25, 0.25]), atol=1e-15)


@given(seeds, st.sampled_from([2, 3, 4]))
def test_normalize_random(seed, n):
    s = random_simplex(n, np.random.default_rng(seed))
    nrm = normalize(s)
    assert np.max(np.abs(nrm.A @ nrm.B - np.eye(n))) < 1e-12
    assert np.max(np.abs(nrm.Gamma - nrm.Gamma.T)) < 1e-14
    np.linalg.cholesky(nrm.Gamma)
    assert abs(nrm.detA) == pytest.approx(math.factorial(n) * volume(s), rel=1e-12)
    y = nrm.to_standard(s.vertices)
    assert np.allclose(y, np.vstack([np.zeros(n), np.eye(n)]), atol=1e-12)
    back = denormalize(nrm)
    assert np.max(np.abs(back.vertices - s.vertices)) < 1e-12


def test_ill_conditioned_flag():
    s = Simplex([[0, 0], [1, 0], [0, 1e-13 * 0 + 2e-12]])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        nrm = normalize(s, cond_limit=1e6)
    assert nrm.ill_conditioned and w


@given(seeds, st.sampled_from([2, 3, 4]))
def test_closed_surface_identity(seed, n):
    s = random_simplex(n, np.random.default_rng(seed))
    total = sum(f.volume * f.normal for f in faces(s))
    assert np.max(np.abs(total)) < 1e-10


@given(seeds, st.sampled_from([2, 3]))
def test_symbol_of_laplacian(seed, n):
    rng = np.random.default_rng(seed)
    nrm = normalize(random_simplex(n, rng))
    xi = rng.standard_normal(n)
    eta = nrm.momentum_to_standard(xi)
    assert eta @ nrm.Gamma @ eta == pytest.approx(xi @ xi, rel=1e-12)


def test_parallelepiped_face_volume():
    assert parallelepiped_face_volume(standard_simplex(2)) == pytest.approx(math.sqrt(2), rel=1e-14)
    assert parallelepiped_face_volume(standard_simplex(3)) == pytest.approx(math.sqrt(3), rel=1e-14)
    assert parallelepiped_face_volume(standard_simplex(2).scaled(2.0)) == pytest.approx(
        2 * math.sqrt(2), rel=1e-14)


@given(seeds)
def test_parallelepiped_matches_face(seed):
    s = random_simplex(3, np.random.default_rng(seed))
    assert parallelepiped_face_volume(s, 0) == pytest.approx(2 * faces(s)[0].volume, rel=1e-12)


def test_load_simplex_forms(tmp_path):
    s = standard_simplex(2)
    p = tmp_path / "s.json"
    p.write_text('{"vertices": [[0, 0], [1, 0], [0, 1]]}')
    for source in (s, {"vertices": [[0, 0], [1, 0], [0, 1]]}, str(p), "standard-2"):
        assert np.array_equal(load_simplex(source).vertices, s.vertices)
    assert volume(load_simplex("half-square-pi")) == pytest.approx(math.pi ** 2 / 2)
    with pytest.raises((GeometryError, ValueError)):
        load_simplex("dodecahedron")
