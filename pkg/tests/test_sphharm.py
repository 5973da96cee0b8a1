import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_legendre

from conftest import scipy_real_sh, unit_rows
from specinj.sphharm import (
    L_MAX_SUPPORTED,
    SHVector,
    build_grid,
    degree_of_index,
    eval_sh,
    feature_vector,
    grid_for_degree,
    n_coeffs,
    project,
    real_sph_harm,
    sh_direction_grad,
    sh_index,
    solid_harmonics,
    synthesize,
)

unit_vec = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda v: np.linalg.norm(v) > 0.1).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


def test_index_layout():
    assert sh_index(0, 0) == 0
    assert sh_index(1, -1) == 1
    assert sh_index(2, 2) == 8
    assert n_coeffs(3) == 16
    assert list(degree_of_index(2)) == [0, 1, 1, 1, 2, 2, 2, 2, 2]


def test_matches_scipy_through_max_degree(rng):
    dirs = unit_rows(rng, 50)
    Y = real_sph_harm(L_MAX_SUPPORTED, dirs)
    for l in range(L_MAX_SUPPORTED + 1):
        for m in range(-l, l + 1):
            np.testing.assert_allclose(Y[:, sh_index(l, m)], scipy_real_sh(l, m, dirs), atol=1e-12)


def test_degree_one_orientation():
    c = np.sqrt(3 / (4 * np.pi))
    assert eval_sh(1, 0, [0, 0, 1]) == pytest.approx(0.48860251, abs=1e-8)
    assert eval_sh(1, 1, [1, 0, 0]) == pytest.approx(c)
    assert eval_sh(1, -1, [0, 1, 0]) == pytest.approx(c)
    assert eval_sh(0, 0, [0, 0, 1]) == pytest.approx(1 / np.sqrt(4 * np.pi))


def test_stretched_states_positive():
    d = np.array([1.0, 0.0, 0.0])
    for l in range(1, L_MAX_SUPPORTED + 1):
        assert eval_sh(l, l, d) > 0


@settings(max_examples=40, deadline=None)
@given(unit_vec, unit_vec, st.integers(0, L_MAX_SUPPORTED))
def test_addition_theorem(a, b, l):
    Ya = real_sph_harm(l, a)[0, l * l:]
    Yb = real_sph_harm(l, b)[0, l * l:]
    expected = (2 * l + 1) / (4 * np.pi) * eval_legendre(l, np.clip(a @ b, -1, 1))
    assert Ya @ Yb == pytest.approx(expected, abs=1e-11)


def test_grid_weights_and_gram():
    g = build_grid()
    assert g.weights.sum() == pytest.approx(4 * np.pi, abs=1e-10)
    assert np.all(g.weights > 0)
    Y = real_sph_harm(L_MAX_SUPPORTED, g.nodes)
    gram = Y.T @ (g.weights[:, None] * Y)
    assert np.abs(gram - np.eye(gram.shape[0])).max() < 1e-12


def test_grid_resolution_floor():
    with pytest.raises(ValueError):
        build_grid(10)
    assert grid_for_degree(40).exact_degree >= 40


@settings(max_examples=25, deadline=None)
@given(st.integers(0, L_MAX_SUPPORTED), st.integers(0, 2**31 - 1))
def test_project_synthesize_roundtrip(L, seed):
    c = np.random.default_rng(seed).standard_normal(n_coeffs(L))
    v = SHVector(L, c)
    g = build_grid()
    back = project(synthesize(v, g.nodes), g, L)
    np.testing.assert_allclose(back.coeffs, c, atol=1e-11)


def test_parseval(rng):
    c = rng.standard_normal(n_coeffs(6))
    g = build_grid()
    f = synthesize(SHVector(6, c), g.nodes)
    assert g.integrate(f * f) == pytest.approx(c @ c, rel=1e-12)


def test_direction_gradient_matches_fd(rng):
    v = rng.standard_normal((5, 3)) * 2.0
    Y, dY = sh_direction_grad(6, v)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (sh_direction_grad(6, v + e)[0] - sh_direction_grad(6, v - e)[0]) / (2 * h)
        np.testing.assert_allclose(dY[:, :, k], fd, atol=1e-7)
    np.testing.assert_allclose(Y, real_sph_harm(6, v / np.linalg.norm(v, axis=1, keepdims=True)), atol=1e-13)


def test_solid_harmonics_are_homogeneous(rng):
    v = rng.standard_normal((4, 3))
    S1 = solid_harmonics(5, v)
    S2 = solid_harmonics(5, 2.5 * v)
    np.testing.assert_allclose(S2, S1 * 2.5 ** degree_of_index(5)[None, :], rtol=1e-12)


def test_input_validation():
    with pytest.raises(ValueError):
        real_sph_harm(2, [[1.0, 1.0, 0.0]])
    with pytest.raises(ValueError):
        real_sph_harm(L_MAX_SUPPORTED + 1, [[0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        eval_sh(2, 3, [0, 0, 1])
    with pytest.raises(ValueError):
        SHVector(2, np.zeros(8))
    with pytest.raises(ValueError):
        SHVector(1, [np.nan, 0, 0, 0])


def test_shvector_helpers():
    v = SHVector.unit(2, -1, L=3)
    assert v[2, -1] == 1.0
    assert v.block(2)[1] == 1.0
    np.testing.assert_array_equal(v.degree_power(), [0, 0, 1, 0])
    assert v.truncate(1).coeffs.sum() == 0
    assert v.truncate(4).L == 4
    f = feature_vector(2, [0.0, 0.0, 1.0])
    assert f.L == 2 and f[1, 0] == pytest.approx(0.48860251, abs=1e-8)
