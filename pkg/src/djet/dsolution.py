"""Residual checks against diffuse jets, the mollification pipeline and its
convergence diagnostics."""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .difference_quotients import JetField
from .mollifier import GridResolutionError, assemble
from .sampled_fields import CellSet, SampledField, exceedance_set, measure_of, tail_nonincreasing
from .young_measures import dirac_embed, support_bins, weak_star_distance


class UnconvergedEstimateError(ValueError):
    """Residual requested on an estimate whose trace did not settle."""


@dataclass
class ResidualField:
    values: SampledField
    tol: float
    offending: CellSet
    passed: bool
    mass_budget: float

    @property
    def offending_measure(self):
        return measure_of(self.offending)


def _support_combinations(theta, tau):
    """(rows, [bins per factor]) over the product of per-factor reduced supports."""
    rows = np.arange(theta.domain.ncells)
    bins = []
    for f in range(theta.nfactors):
        r, b = support_bins(theta, tau, f)
        order = np.argsort(r, kind="stable")
        r = r[order]
        b = b[order]
        counts = np.bincount(r, minlength=theta.domain.ncells)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        reps = counts[rows]
        new_rows = np.repeat(rows, reps)
        group_start = np.repeat(np.cumsum(reps) - reps, reps)
        offs = np.arange(len(new_rows)) - group_start
        picked = b[starts[new_rows] + offs]
        bins = [np.repeat(prev, reps) for prev in bins] + [picked]
        rows = new_rows
    return rows, bins


def residual(u, est, F, tau=0.05, tol=None, mass_budget=None, allow_unconverged=False):
    """r(x) = max |F(x, u(x), X)| over reduced-support bin centres; 0 on empty support."""
    theta = est.measure
    dom = u.domain
    if not est.converged:
        if not allow_unconverged:
            raise UnconvergedEstimateError(est.diagnostic or "diffuse-jet estimate did not converge")
        warnings.warn("residual evaluated on an unconverged diffuse-jet estimate", stacklevel=2)
    vs = u.value_shape
    N = 1 if vs == () else vs[0]
    F.check_dims(dom.n, N, theta.nfactors)
    if theta.nfactors != F.p:
        raise ValueError(f"estimate has {theta.nfactors} orders, system needs {F.p}")
    if tol is None:
        tol = 0.5 * max(s.width for s in theta.spaces)
    if mass_budget is None:
        mass_budget = 0.01 * dom.measure
    rows, bins = _support_combinations(theta, tau)
    r = np.zeros(dom.ncells)
    if len(rows):
        x = dom.active_centers()[rows]
        uv = u.active_values().reshape(dom.ncells, N)[rows]
        jet = tuple(space.centers(b) for space, b in zip(theta.spaces, bins))
        val = np.sqrt(np.sum(F(x, uv, jet) ** 2, axis=1))
        np.maximum.at(r, rows, val)
    full = np.zeros(dom.shape)
    full[dom.mask] = r
    field_ = SampledField(dom, full)
    off = exceedance_set(field_, tol)
    return ResidualField(field_, tol, off, measure_of(off) <= mass_budget, mass_budget)


# --- approximation run ---------------------------------------------------------


def sandwich(R):
    """Phi_R(X) = clamp(2 - |X|/R, 0, 1): 1 on B_R, 0 outside B_2R."""
    return lambda norm: np.clip(2.0 - norm / R, 0.0, 1.0)


@dataclass
class ApproximationStep:
    nu: int
    eps: float
    output: object = None
    u_nu: SampledField = None
    f_nu: SampledField = None
    jet_norm: np.ndarray = None
    rho_to_estimate: float = None
    error: str = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class ApproximationRun:
    u: SampledField
    system: object
    steps: list = field(default_factory=list)

    def completed(self):
        return [s for s in self.steps if s.ok]

    def report(self, diagnostics=None):
        blocks = []
        for s in self.steps:
            b = {"nu": s.nu, "eps": s.eps, "error": s.error}
            if s.ok:
                b.update(
                    bounds=s.output.bounds,
                    rho_to_estimate=s.rho_to_estimate,
                    residual_sup_offE=_sup_off(s.f_nu, s.output.exceptional),
                )
            blocks.append(b)
        if diagnostics:
            for key in ("mode_sandwich", "mode_ball", "mode_triple"):
                for i, b in enumerate(bl for bl in blocks if bl["error"] is None):
                    b[key] = {str(k): v["trend"][i] for k, v in diagnostics[key].items()}
        return blocks


def _sup_off(f, cells):
    mag = f.pointwise_norm().values[f.domain.mask & ~cells.mask]
    return float(mag.max(initial=0.0))


def default_eps_rule(nu):
    return 1.0 / nu


def run_approximation(u, F, frame, schedule, est=None, eps_rule=default_eps_rule, cutoff="exp"):
    """For each schedule entry nu: mollify with eps_nu and evaluate
    f_nu = F(x, u_nu, D u_nu) at cell centres from the analytic derivatives."""
    dom = u.domain
    run = ApproximationRun(u, F)
    for nu, H in enumerate(schedule, start=1):
        eps = float(eps_rule(nu))
        step = ApproximationStep(nu, eps)
        try:
            out = assemble(u, frame, H, eps, cutoff=cutoff)
        except GridResolutionError as exc:
            step.error = str(exc)
            run.steps.append(step)
            continue
        step.output = out
        step.u_nu, step.f_nu, jets = evaluate_residual_field(out, F, u.value_shape)
        sq = sum(np.sum(j.reshape(dom.ncells, -1) ** 2, axis=1) for j in jets)
        step.jet_norm = np.sqrt(sq)
        if est is not None:
            orders = []
            for q, j in enumerate(jets, start=1):
                full = np.zeros(dom.shape + j.shape[1:])
                full[dom.mask] = j
                orders.append(full)
            theta = dirac_embed(JetField(dom, orders), est.scheme)
            step.rho_to_estimate = weak_star_distance(theta, est.measure)
        run.steps.append(step)
    return run


def evaluate_residual_field(out, F, value_shape=None):
    """(u_nu, f_nu, jets) from a mollifier output; recomputable from its serialisation."""
    dom = out.domain
    x = dom.active_centers()
    u0 = out.sample(0)
    jets = [out.sample(q) for q in range(1, F.p + 1)]
    f = F(x, u0, tuple(jets))
    if value_shape is None:
        value_shape = (out.N,)
    uf = np.zeros(dom.shape + tuple(value_shape))
    uf[dom.mask] = u0.reshape((dom.ncells,) + tuple(value_shape))
    ff = np.zeros(dom.shape + (F.M,))
    ff[dom.mask] = f
    return SampledField(dom, uf), SampledField(dom, ff), jets


# --- convergence diagnostics ------------------------------------------------------


def ae_trend_passes(trend, budget):
    """Last value within budget and the last three nonincreasing."""
    return bool(trend and trend[-1] <= budget and tail_nonincreasing(trend))


def _offending(weights, fmag, tol, vol, restrict=None):
    bad = weights * fmag > tol
    if restrict is not None:
        bad &= restrict
    return float(bad.sum() * vol)


def exceptional_from_estimate(est, tau_inf=0.05):
    """Cells where some order's infinity-bin mass exceeds tau_inf."""
    theta = est.measure
    dom = theta.domain
    flag = np.zeros(dom.ncells, dtype=bool)
    for f in range(theta.nfactors):
        flag |= theta.inf_mass(f) > tau_inf
    mask = np.zeros(dom.shape, dtype=bool)
    mask[dom.mask] = flag
    return CellSet(dom, mask)


def convergence_diagnostics(run, est, eps_grid=(0.1, 0.05), R_grid=(1.0, 10.0), tau_inf=0.05, tol=0.05,
                            mass_budget=None):
    """Trends over nu of the equivalent convergence modes and of f_nu off E."""
    steps = run.completed()
    if not steps:
        raise ValueError("the run has no completed steps")
    dom = run.u.domain
    vol = dom.cell_volume
    if mass_budget is None:
        mass_budget = 0.01 * dom.measure
    fmags = [s.f_nu.pointwise_norm().active_values() for s in steps]
    norms = [s.jet_norm for s in steps]

    mode_sandwich = {}
    mode_ball = {}
    for R in R_grid:
        phi = sandwich(R)
        t30 = [_offending(phi(nm), fm, tol, vol) for nm, fm in zip(norms, fmags)]
        t31 = [_offending((nm < R).astype(float), fm, tol, vol) for nm, fm in zip(norms, fmags)]
        mode_sandwich[R] = {"trend": t30, "passed": ae_trend_passes(t30, mass_budget)}
        mode_ball[R] = {"trend": t31, "passed": ae_trend_passes(t31, mass_budget)}
    mode_triple = {}
    for e in eps_grid:
        t = [float(((fm > e) & (nm < 1.0 / e)).sum() * vol) for nm, fm in zip(norms, fmags)]
        mode_triple[e] = {"trend": t, "passed": ae_trend_passes(t, mass_budget)}

    E = exceptional_from_estimate(est, tau_inf)
    offE = ~E.mask[dom.mask]
    onE = E.mask[dom.mask]
    t32 = [_offending(np.ones_like(fm), fm, tol, vol, offE) for fm in fmags]
    max_on_E = [float(fm[onE].max(initial=0.0)) for fm in fmags]
    l1 = [float(np.sum(fm) * vol) for fm in fmags]
    return {
        "mode_sandwich": mode_sandwich,
        "mode_ball": mode_ball,
        "mode_triple": mode_triple,
        "mode_sandwich_passed": all(v["passed"] for v in mode_sandwich.values()),
        "mode_ball_passed": all(v["passed"] for v in mode_ball.values()),
        "mode_triple_passed": all(v["passed"] for v in mode_triple.values()),
        "exceptional_set": E,
        "measure_E": measure_of(E),
        "off_E_trend": t32,
        "off_E_passed": ae_trend_passes(t32, mass_budget),
        "max_f_on_E": max_on_E,
        "l1_f": l1,
        "u_ae_trend": [measure_of(exceedance_set((s.u_nu - run.u).pointwise_norm(), tol)) for s in steps],
    }
