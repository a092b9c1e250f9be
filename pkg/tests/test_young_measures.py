import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from djet.corpus import fat_cantor_indicator
from djet.difference_quotients import JetField
from djet.sampled_fields import GridDomain, SampledField
from djet.young_measures import (
    BinScheme,
    DiscreteYoungMeasure,
    OrderBins,
    PreconditionError,
    ProductBins,
    TestFunction,
    check_ae_weak_equivalence,
    check_asymptotic_pairs,
    check_product_limit,
    default_bins,
    dirac_embed,
    pair,
    pairing_terms,
    product_measure,
    reduced_support,
    support_bins,
    trend_to_zero,
    uniform_measure,
    weak_star_distance,
)

SPACE = OrderBins(0, 1, 1, 2.0, 7)
DOM = GridDomain.unit_interval(16)


def random_measure(rng, dom=DOM, space=SPACE, sparsity=0.5):
    m = rng.dirichlet(np.ones(space.n_bins), size=dom.ncells)
    m[rng.random(m.shape) < sparsity] = 0.0
    m[:, 0] += 1e-3
    m /= m.sum(axis=1, keepdims=True)
    return DiscreteYoungMeasure(dom, [space], [m])


def random_test(rng, dom=DOM, space=SPACE):
    return TestFunction(rng.normal(size=dom.ncells), rng.normal(size=space.n_bins))


seeds = st.integers(0, 2**32 - 1)


class TestBins:
    def test_index_and_centre(self):
        b = OrderBins(0, 1, 1, 1.0, 4)
        assert b.width == 0.5
        np.testing.assert_array_equal(b.index(np.array([[-0.9], [0.1], [0.99], [1.5], [-7.0]])), [0, 2, 3, 4, 4])
        np.testing.assert_allclose(b.centers([2])[:, 0], [0.25])

    def test_infinity_has_no_centre(self):
        with pytest.raises(ValueError):
            SPACE.center_coords([SPACE.inf_index])

    def test_canonical_order_starts_at_infinity(self):
        order = SPACE.canonical_order
        assert order[0] == SPACE.inf_index
        assert sorted(order) == list(range(SPACE.n_bins))
        # the bin containing 0 comes next (7 bins, the middle one)
        assert order[1] == 3

    def test_symmetric_coordinates(self):
        b = OrderBins(2, 1, 2, 1.0, 3)
        assert b.dim == 3
        c = b.centers([5])[0, 0]
        np.testing.assert_array_equal(c, c.T)

    def test_bin_limit(self):
        with pytest.raises(ValueError):
            OrderBins(2, 2, 3, 1.0, 9)

    def test_default_bins(self):
        assert default_bins(1) == 65
        assert default_bins(3) ** 3 <= 1 << 16

    def test_product_encode_decode(self):
        p = ProductBins([SPACE, OrderBins(1, 1, 1, 1.0, 3)])
        idx = np.arange(p.n_bins)
        np.testing.assert_array_equal(p.encode(p.decode(idx)), idx)
        assert p.is_inf(p.encode([[SPACE.inf_index, 0]]))[0]

    def test_scheme_roundtrip(self):
        u = SampledField.from_function(GridDomain.unit_interval(81), lambda x: np.sin(3 * x[..., 0]))
        s = BinScheme.fit(u)
        assert BinScheme.from_dict(s.to_dict()) == s
        assert s.spaces[0].radius == pytest.approx(2 * np.quantile(np.abs(u.values), 0.999))


class TestDirac:
    def test_constant_field(self):
        u = SampledField(DOM, np.full(16, 0.1))
        th = dirac_embed(u, BinScheme((SPACE,)))
        assert np.all(th.masses[0].getnnz(axis=1) == 1)
        assert set(th.masses[0].indices) == {3}

    def test_pairing_with_hat(self):
        u = SampledField(DOM, np.full(16, 0.1))
        th = dirac_embed(u, BinScheme((SPACE,)))
        assert pair(th, TestFunction.bin_hat(th, SPACE, 3)) == pytest.approx(1.0, abs=1e-15)
        assert pair(th, TestFunction.bin_hat(th, SPACE, 2)) == 0.0

    def test_large_values_go_to_infinity(self):
        dom = GridDomain.unit_interval(3**8)
        chi = fat_cantor_indicator(dom)
        th = dirac_embed(chi * 1e6, BinScheme((SPACE,)))
        np.testing.assert_array_equal(th.inf_mass(0) == 1.0, chi.values == 1.0)

    def test_jet_factors(self):
        dom = GridDomain.unit_interval(9)
        jet = JetField(dom, [np.ones((9, 1, 1)), np.zeros((9, 1, 1, 1))])
        th = dirac_embed(jet)
        assert th.nfactors == 2
        assert th.joint().nfactors == 1

    def test_scheme_mismatch(self):
        dom = GridDomain.unit_interval(9)
        jet = JetField(dom, [np.ones((9, 1, 1))])
        with pytest.raises(ValueError):
            dirac_embed(jet, BinScheme((OrderBins(2, 1, 1, 1.0, 3),)))


class TestNormalization:
    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            DiscreteYoungMeasure(DOM, [SPACE], [np.full((16, SPACE.n_bins), 0.2)])

    def test_rejects_negative(self):
        m = np.zeros((16, SPACE.n_bins))
        m[:, 0] = 1.5
        m[:, 1] = -0.5
        with pytest.raises(ValueError):
            DiscreteYoungMeasure(DOM, [SPACE], [m])

    @given(seeds, st.floats(0, 1))
    def test_mix_and_window_stay_normalized(self, seed, lam):
        rng = np.random.default_rng(seed)
        a, b = random_measure(rng), random_measure(rng)
        for th in (a.mix(b, lam), a.window_average(3)):
            sums = np.asarray(th.masses[0].sum(axis=1)).ravel()
            assert np.abs(sums - 1).max() <= 1e-9

    def test_joint_and_marginal(self, rng):
        a = random_measure(rng)
        other = OrderBins(1, 1, 1, 1.0, 3)
        b = DiscreteYoungMeasure(DOM, [other], [rng.dirichlet(np.ones(other.n_bins), size=16)])
        prod = product_measure(a, b)
        assert abs(prod.masses[0].sum(axis=1) - 1).max() <= 1e-9
        np.testing.assert_allclose(prod.marginal(0).masses[0].toarray(), a.masses[0].toarray(), atol=1e-14)
        np.testing.assert_allclose(prod.marginal(1).masses[0].toarray(), b.masses[0].toarray(), atol=1e-14)


class TestPairing:
    @given(seeds, st.floats(-10, 10), st.floats(-10, 10))
    def test_bilinear_in_measure(self, seed, lam, mu):
        rng = np.random.default_rng(seed)
        a, b = random_measure(rng), random_measure(rng)
        phi = random_test(rng)
        comb = DiscreteYoungMeasure(DOM, [SPACE], [lam * a.masses[0] + mu * b.masses[0]], check=False)
        assert abs(pair(comb, phi) - (lam * pair(a, phi) + mu * pair(b, phi))) <= 1e-12 * (1 + abs(lam) + abs(mu)) * 10

    @given(seeds, st.floats(-10, 10), st.floats(-10, 10))
    def test_bilinear_in_test_function(self, seed, lam, mu):
        rng = np.random.default_rng(seed)
        th = random_measure(rng)
        p1 = random_test(rng)
        p2 = TestFunction(p1.phi, rng.normal(size=SPACE.n_bins))
        comb = TestFunction(p1.phi, lam * p1.psi + mu * p2.psi)
        assert abs(pair(th, comb) - (lam * pair(th, p1) + mu * pair(th, p2))) <= 1e-12 * (1 + abs(lam) + abs(mu)) * 10

    def test_chordal_hat_is_continuous_bump(self):
        phi = TestFunction.chordal_hat(DOM, SPACE, 3, 0.5)
        assert phi.psi[3] == 1.0 and phi.psi[SPACE.inf_index] == 0.0
        assert phi.sup_norm() == 1.0

    def test_terms_count(self, rng):
        a, b = random_measure(rng), random_measure(rng)
        assert len(pairing_terms(a, b, 100)) == 100

    def test_first_term_is_infinity_mass_difference(self, rng):
        a, b = random_measure(rng), random_measure(rng)
        t = pairing_terms(a, b, 1)
        assert t[0] == pytest.approx(DOM.cell_volume * (a.inf_mass(0).sum() - b.inf_mass(0).sum()), abs=1e-15)


class TestMetric:
    @given(seeds)
    def test_pseudometric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_measure(rng) for _ in range(3))
        assert weak_star_distance(a, a) == 0.0
        dab = weak_star_distance(a, b)
        assert abs(dab - weak_star_distance(b, a)) <= 1e-12
        assert weak_star_distance(a, c) <= dab + weak_star_distance(b, c) + 1e-12
        assert 0.0 <= dab <= 1.0

    def test_separates_distinct_diracs(self):
        s = BinScheme((SPACE,))
        a = dirac_embed(SampledField(DOM, np.zeros(16)), s)
        b = dirac_embed(SampledField(DOM, np.ones(16)), s)
        assert weak_star_distance(a, b) > 0.1

    def test_domain_mismatch(self, rng):
        other = GridDomain.unit_interval(8)
        with pytest.raises(ValueError):
            weak_star_distance(random_measure(rng), random_measure(rng, dom=other))


class TestSupport:
    def test_excludes_infinity(self):
        m = np.zeros((16, SPACE.n_bins))
        m[:, SPACE.inf_index] = 0.5
        m[:, 3] = 0.5
        th = DiscreteYoungMeasure(DOM, [SPACE], [m])
        supp = reduced_support(th, (0,), 0.1)
        assert len(supp) == 1
        np.testing.assert_allclose(supp[0][0], SPACE.centers([3])[0])
        rows, bins = support_bins(th, 0.1, 0)
        assert set(bins) == {3} and len(rows) == 16

    def test_threshold(self):
        th = uniform_measure(DOM, SPACE, [1, 2, 3, 4])
        assert len(reduced_support(th, (5,), 0.25)) == 4
        assert reduced_support(th, (5,), 0.3) == []

    def test_tau_range(self):
        with pytest.raises(ValueError):
            reduced_support(uniform_measure(DOM, SPACE, [1]), (0,), 1.0)


class TestTrend:
    def test_examples(self):
        assert trend_to_zero([1, 0.5, 0.1, 0.0], 1e-3)
        assert not trend_to_zero([1, 0.5, 0.1, 0.01], 1e-3)
        assert not trend_to_zero([], 1.0)
        # rise within 10% of the first value is tolerated
        assert trend_to_zero([1, 0.0, 0.05, 0.0], 1e-3)


def _sin_case(rng, dom):
    a, b = rng.uniform(-2, 2), rng.uniform(0.5, 5)
    u = SampledField.from_function(dom, lambda x: a * np.sin(b * x[..., 0]))
    noise = rng.normal(size=dom.shape)
    return u, BinScheme.fit(u), [u + SampledField(dom, noise * 10.0**-m) for m in range(1, 9)]


class TestLimitChecks:
    dom = GridDomain.unit_interval(729)

    def test_ae_equivalence_convergent(self, rng):
        u, s, seq = _sin_case(rng, self.dom)
        ok, rep = check_ae_weak_equivalence(seq, u, s, 1e-6)
        assert ok and rep["ae"] and rep["weak"]

    def test_ae_equivalence_oscillating(self, rng):
        u, s, _ = _sin_case(rng, self.dom)
        x = self.dom.centers()[..., 0]
        osc = [u + SampledField(self.dom, np.sign(np.sin(3**m * np.pi * x))) for m in range(1, 6)]
        ok, rep = check_ae_weak_equivalence(osc, u, s, 1e-6)
        assert ok and not rep["ae"] and not rep["weak"]

    def test_asymptotic_pairs(self, rng):
        u, s, seq = _sin_case(rng, self.dom)
        V = [w + SampledField(self.dom, rng.normal(size=729) * 20.0**-m) for m, w in enumerate(seq, 1)]
        ok, rep = check_asymptotic_pairs(seq, V, dirac_embed(u, s), s)
        assert ok

    def test_asymptotic_pairs_precondition(self, rng):
        u, s, seq = _sin_case(rng, self.dom)
        with pytest.raises(PreconditionError):
            check_asymptotic_pairs(seq, [w + 1.0 for w in seq], dirac_embed(u, s), s)

    def test_product_limit(self, rng):
        u, s, seq = _sin_case(rng, self.dom)
        w = SampledField.from_function(self.dom, lambda x: np.cos(x[..., 0]))
        sw = BinScheme.fit(w)
        ok, rep = check_product_limit(seq, u, [w] * len(seq), dirac_embed(w, sw), s, sw)
        assert ok and rep["rho_pair"][-1] <= 1e-3

    def test_product_limit_oscillating_second_factor(self):
        # V_m alternates +-1 at ever finer scale; its limit is the half/half measure
        dom = self.dom
        space = OrderBins(0, 1, 1, 2.0, 4)
        sv = BinScheme((space,))
        x = dom.centers()[..., 0]
        V = [SampledField(dom, np.where(((x * 3**m).astype(int) % 2) == 0, 1.0, -1.0)) for m in range(1, 7)]
        theta = uniform_measure(dom, space, space.index(np.array([[-1.0], [1.0]])))
        u = SampledField(dom, np.zeros(dom.shape))
        su = BinScheme((space,))
        ok, rep = check_product_limit([u] * 6, u, V, theta, su, sv, rho_tol=1e-2)
        assert ok, rep
