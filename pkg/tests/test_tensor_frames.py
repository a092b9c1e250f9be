import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from djet.tensor_frames import (
    INFINITY,
    Frame,
    SymTensor,
    chordal_distance,
    chordal_distance_array,
    frame_coordinates,
    reconstruct,
    reconstruct_fields,
    sym_product,
    symmetrize,
    unique_tuples,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


def random_sym(rng, N, n, q):
    return SymTensor(symmetrize(rng.normal(size=(N,) + (n,) * q), q), n)


class TestSymProduct:
    def test_off_diagonal(self):
        np.testing.assert_array_equal(sym_product([1, 0], [0, 1]).entries[0], [[0, 0.5], [0.5, 0]])

    def test_square(self):
        np.testing.assert_array_equal(sym_product([1, 0], [1, 0]).entries[0], [[1, 0], [0, 0]])

    def test_scaled(self):
        np.testing.assert_array_equal(sym_product([2, 0], [0, 3]).entries[0], [[0, 3], [3, 0]])

    def test_mismatch(self):
        with pytest.raises(ValueError):
            sym_product([1, 0], [1, 0, 0])

    @given(vec3, vec3)
    def test_symmetric_exactly(self, a, b):
        np.testing.assert_array_equal(sym_product(a, b).entries, sym_product(b, a).entries)

    @given(vec3, vec3, vec3, finite)
    def test_bilinear(self, a, b, c, lam):
        lhs = sym_product(lam * a + c, b).entries
        rhs = lam * sym_product(a, b).entries + sym_product(c, b).entries
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


class TestSymTensor:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            SymTensor(np.array([[[0.0, 1.0], [0.0, 0.0]]]), 2)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SymTensor(np.array([np.inf]), 1)

    def test_norm_is_frobenius(self, rng):
        X = random_sym(rng, 2, 3, 2)
        assert X.norm() == pytest.approx(np.sqrt(np.sum(X.entries * X.entries)))


class TestFrames:
    def test_standard_frame_is_identity(self, rng):
        X = random_sym(rng, 2, 3, 2)
        np.testing.assert_array_equal(frame_coordinates(X, Frame.standard(2, 3)), X.entries)

    def test_rotated_basis_element(self, rng):
        f = Frame.random(1, 3, rng)
        E = f.basis_element(0, (0, 0, 0))
        c = frame_coordinates(E, f)
        e1 = np.zeros_like(c)
        e1[0, 0, 0, 0] = 1.0
        np.testing.assert_allclose(c, e1, atol=1e-12)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Frame(np.eye(1), np.array([[[1.0, 0.1], [0.0, 1.0]]]))

    @pytest.mark.parametrize("q", [0, 1, 2, 3])
    def test_roundtrip_and_norm(self, rng, q):
        for _ in range(100):
            N, n = rng.integers(1, 3), rng.integers(1, 4)
            f = Frame.random(N, n, rng)
            X = random_sym(rng, N, n, q)
            c = frame_coordinates(X, f)
            assert np.sqrt(np.sum(c**2)) == pytest.approx(X.norm(), rel=1e-12)
            back = reconstruct(c, f)
            assert np.abs(back.entries - X.entries).max() <= 1e-10 * max(X.norm(), 1e-300)

    def test_reconstruct_fields_matches_pointwise(self, rng):
        f = Frame.random(2, 2, rng)
        coords = rng.normal(size=(5, 2, 2, 2))
        many = reconstruct_fields(coords, f)
        for k in range(5):
            np.testing.assert_allclose(many[k], reconstruct(coords[k], f).entries, atol=1e-13)

    def test_axis_aligned(self, rng):
        assert Frame.standard(2, 3).is_axis_aligned()
        assert not Frame.random(1, 2, rng).is_axis_aligned()

    def test_unique_tuples(self):
        assert unique_tuples(2, 2) == [(0, 0), (0, 1), (1, 1)]


class TestChordal:
    def test_zero_to_infinity(self):
        assert chordal_distance(0.0, INFINITY) == 2.0

    def test_zero_to_one(self):
        assert chordal_distance(0.0, 1.0) == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_infinity_to_infinity(self):
        assert chordal_distance(INFINITY, INFINITY) == 0.0

    @given(vec3)
    def test_identity(self, x):
        assert chordal_distance(x, x) == 0.0

    @given(vec3, vec3)
    def test_bounds_and_symmetry(self, x, y):
        d = chordal_distance(x, y)
        assert d == chordal_distance(y, x)
        assert 0.0 <= d <= min(2.0, 2.0 * np.linalg.norm(x - y)) + 1e-12

    @given(vec3, vec3, vec3)
    def test_triangle(self, x, y, z):
        assert chordal_distance(x, z) <= chordal_distance(x, y) + chordal_distance(y, z) + 1e-12

    @given(vec3, vec3)
    def test_triangle_through_infinity(self, x, y):
        assert chordal_distance(x, y) <= chordal_distance(x, INFINITY) + chordal_distance(INFINITY, y) + 1e-12

    def test_escape_to_infinity(self):
        d = [chordal_distance(10.0**k, INFINITY) for k in range(8)]
        assert all(b < a for a, b in zip(d, d[1:])) and d[-1] < 1e-6
        bounded = [chordal_distance(np.sin(k), INFINITY) for k in range(50)]
        assert min(bounded) > 1.0

    def test_vectorised_agrees(self, rng):
        a = rng.normal(size=(20, 3)) * 5
        b = rng.normal(size=(20, 3)) * 5
        b[3] = np.inf
        got = chordal_distance_array(a, b)
        want = [chordal_distance(x, INFINITY if not np.all(np.isfinite(y)) else y) for x, y in zip(a, b)]
        np.testing.assert_allclose(got, want, rtol=1e-14)
