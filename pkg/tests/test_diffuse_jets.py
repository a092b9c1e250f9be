import numpy as np
import pytest

from djet.corpus import builtin_field, cantor_function, cantor_set_mask, exact_jet, fat_cantor_mask, unit_interval
from djet.difference_quotients import step_schedule
from djet.diffuse_jets import check_classical_jet, correct_bin_fraction, estimate_diffuse_jet
from djet.sampled_fields import SampledField
from djet.tensor_frames import Frame

FRAME = Frame.standard(1, 1)


def schedule(dom, p=1, steps=6):
    return step_schedule(p, (dom.shape[0] // 27) * dom.g, 1 / 3, steps, dom.g)


@pytest.fixture(scope="module")
def dom():
    return unit_interval(3**8)


class TestEstimate:
    def test_needs_three_steps(self, dom):
        with pytest.raises(ValueError):
            estimate_diffuse_jet(builtin_field("sin", dom), FRAME, schedule(dom)[:2])

    def test_zero_field_is_dirac_at_zero(self, dom):
        u = SampledField(dom, np.zeros(dom.shape))
        est = estimate_diffuse_jet(u, FRAME, schedule(dom))
        assert est.converged and est.rho_trace == [0.0] * 5
        zero_bin = est.scheme.spaces[0].index(np.zeros((1, 1, 1)))[0]
        np.testing.assert_array_equal(est.measure.mass_in(0, np.full(dom.ncells, zero_bin)), 1.0)

    @pytest.mark.parametrize("p", [1, 2])
    def test_sin_converges_to_classical_jet(self, dom, p):
        u = builtin_field("sin", dom)
        est = estimate_diffuse_jet(u, FRAME, schedule(dom, p))
        assert est.converged and not est.nonunique
        ok, rep = check_classical_jet(exact_jet("sin", dom, p), est, tau=0.1, mass_budget=0.05)
        assert ok, rep

    def test_linear_exact_everywhere_but_boundary(self, dom):
        est = estimate_diffuse_jet(builtin_field("linear", dom), FRAME, schedule(dom))
        ok = correct_bin_fraction(exact_jet("linear", dom, 1), est, tau=1e-9)
        # forward quotients of the zero extension leave the domain in the last cells
        assert (~ok).sum() <= 1

    def test_cantor_zero_bin_off_cantor_cells(self, dom):
        u = cantor_function(dom)
        est = estimate_diffuse_jet(u, FRAME, schedule(dom))
        zero_bin = est.scheme.spaces[0].index(np.zeros((1, 1, 1)))[0]
        # oracle: cells whose quotient stencil sees no Cantor cell at any step
        live = cantor_set_mask(dom)
        reach = int(round(est.schedule[0].row(1)[0] / dom.g))
        near = np.convolve(live.astype(int), np.ones(reach + 1, int), mode="full")[reach:] > 0
        mass = est.measure.mass_in(0, np.full(dom.ncells, zero_bin))
        assert np.all(mass[~near & (np.arange(dom.ncells) < dom.ncells - reach)] == 1.0)
        assert (mass >= 0.9).mean() >= 0.5

    def test_indicator_complement_at_zero(self, dom):
        u = SampledField(dom, fat_cantor_mask(dom).astype(float))
        est = estimate_diffuse_jet(u, FRAME, schedule(dom))
        K = fat_cantor_mask(dom)
        zero_bin = est.scheme.spaces[0].index(np.zeros((1, 1, 1)))[0]
        mass = est.measure.mass_in(0, np.full(dom.ncells, zero_bin))
        assert (mass[~K] >= 0.9).mean() >= 0.9

    def test_history_and_trace_dict(self, dom):
        sched = schedule(dom)
        est = estimate_diffuse_jet(builtin_field("sin", dom), FRAME, sched)
        assert len(est.history) == len(sched) and len(est.rho_trace) == len(sched) - 1
        d = est.trace_dict()
        assert d["converged"] is True and len(d["schedule"]) == len(sched)
        assert len(est.inf_mass_history()) == len(sched)

    def test_unconverged_diagnostic(self, dom):
        u = SampledField(dom, np.sign(np.sin(200 * np.pi * dom.centers()[..., 0])))
        est = estimate_diffuse_jet(u, FRAME, schedule(dom), rho_tol=1e-12)
        assert not est.converged and "above tolerance" in est.diagnostic

    def test_window_keeps_normalization(self, dom):
        est = estimate_diffuse_jet(builtin_field("sin", dom), FRAME, schedule(dom), window=3)
        sums = np.asarray(est.measure.masses[0].sum(axis=1)).ravel()
        assert np.abs(sums - 1).max() <= 1e-9
