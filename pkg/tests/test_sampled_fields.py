from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from djet.corpus import fat_cantor_cells, fat_cantor_indicator, fat_cantor_intervals
from djet.sampled_fields import (
    CellSet,
    GridDomain,
    SampledField,
    ae_convergence_check,
    exceedance_set,
    lr_norm,
    measure_of,
)


def interval(cells):
    return GridDomain.unit_interval(cells)


def test_measure_empty_and_full():
    dom = interval(100)
    assert measure_of(CellSet.empty(dom)) == 0
    assert measure_of(CellSet.full(dom)) == pytest.approx(1.0, abs=1e-12)


def test_fat_cantor_measure_against_interval_arithmetic():
    dom = interval(3**8)
    m = measure_of(fat_cantor_cells(dom))
    assert Fraction(1, 12) <= m <= Fraction(1, 3)
    # oracle: count cell centres inside the exact intervals, independently of the mask code
    centers = (np.arange(3**8) + 0.5) / 3**8
    hits = sum(((centers >= float(a)) & (centers <= float(b))).sum() for a, b in fat_cantor_intervals())
    assert m == pytest.approx(hits / 3**8, abs=1e-15)


def test_masked_domain_measure():
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:5, 3:9] = True
    dom = GridDomain((10, 10), 0.1, [0.0, 0.0], mask)
    assert dom.measure == pytest.approx(18 * 0.01)


def test_rejects_empty_domain():
    with pytest.raises(ValueError):
        GridDomain((3,), 0.1, [0.0], np.zeros(3, dtype=bool))


class TestLr:
    def test_zero(self):
        assert lr_norm(SampledField(interval(50), np.zeros(50)), 2) == 0.0

    def test_constant(self):
        assert lr_norm(SampledField(interval(64), np.full(64, -3.0)), 2) == pytest.approx(3.0, rel=1e-14)

    def test_indicator(self):
        dom = interval(3**8)
        assert lr_norm(fat_cantor_indicator(dom), 1) == pytest.approx(measure_of(fat_cantor_cells(dom)), rel=1e-12)

    def test_sup(self):
        assert lr_norm(SampledField(interval(4), [1.0, -5.0, 2.0, 0.0]), np.inf) == 5.0

    def test_rejects_small_r(self):
        with pytest.raises(ValueError):
            lr_norm(SampledField(interval(4), np.zeros(4)), 0.5)

    def test_jensen_monotone(self, rng):
        dom = interval(200)
        for _ in range(50):
            u = SampledField(dom, rng.normal(size=200) * rng.uniform(0.1, 10))
            r1, r2 = sorted(rng.uniform(1, 6, size=2))
            assert lr_norm(u, r1) <= lr_norm(u, r2) + 1e-12


class TestExceedance:
    def test_zero(self):
        assert exceedance_set(SampledField(interval(10), np.zeros(10)), 1.0).count == 0

    def test_linear(self):
        dom = interval(100)
        u = SampledField.from_function(dom, lambda x: x[..., 0])
        assert abs(measure_of(exceedance_set(u, 0.5)) - 0.5) <= dom.g

    def test_indicator_recovers_k(self):
        dom = interval(3**8)
        assert exceedance_set(fat_cantor_indicator(dom), 0.5) == fat_cantor_cells(dom)

    def test_strict(self):
        assert exceedance_set(SampledField(interval(3), [1.0, 2.0, 3.0]), 2.0).count == 1


class TestAeConvergence:
    def test_constant_sequence(self):
        dom = interval(81)
        u = SampledField.from_function(dom, lambda x: np.sin(5 * x[..., 0]))
        assert ae_convergence_check([u] * 4, u, 0.0)[0]

    def test_uniform_convergence(self):
        dom = interval(81)
        u = SampledField.from_function(dom, lambda x: x[..., 0] ** 2)
        ok, rep = ae_convergence_check([u + 1.0 / k for k in range(1, 101)], u, 0.05)
        assert ok and rep["measure"] == 0

    def test_no_convergence_on_k(self):
        dom = interval(3**8)
        chi = fat_cantor_indicator(dom)
        ok, rep = ae_convergence_check([chi] * 5, SampledField(dom, np.zeros(dom.shape)), 0.5)
        assert not ok
        assert rep["measure"] == pytest.approx(measure_of(fat_cantor_cells(dom)))
        assert set(rep) >= {"measure", "offending_cells", "trend"}

    def test_empty(self):
        dom = interval(3)
        with pytest.raises(ValueError):
            ae_convergence_check([], SampledField(dom, np.zeros(3)), 0.1)


masks = arrays(bool, (6, 7), elements=st.booleans())


@given(masks, masks)
def test_measure_additive_on_disjoint_sets(a, b):
    dom = GridDomain((6, 7), 0.25, [0.0, 0.0], np.ones((6, 7), dtype=bool))
    A = CellSet(dom, a)
    B = CellSet(dom, b & ~a)
    assert measure_of(A | B) == measure_of(A) + measure_of(B)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_zero_extension_outside_box(points):
    dom = GridDomain.box([0.0], [1.0], 10)
    u = SampledField(dom, np.arange(1.0, 11.0))
    pts = np.array(points)[:, None]
    out = u.at(pts)
    assert np.all(out[(pts[:, 0] < 0) | (pts[:, 0] >= 1)] == 0.0)


def test_rejects_nan():
    with pytest.raises(ValueError):
        SampledField(interval(3), [0.0, np.nan, 1.0])


def test_refine_preserves_measure():
    mask = np.array([True, False, True])
    dom = GridDomain((3,), 1 / 3, [0.0], mask)
    assert dom.refine(3).measure == pytest.approx(dom.measure)
