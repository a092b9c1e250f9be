"""Smooth approximation by polynomial patches with an exceptional set.

Given u, a frame and a step matrix, ``assemble`` produces a C^infinity map
u_eps (a sum of cutoff-weighted Taylor polynomials, one per cube of a
decomposition of the domain) and a cell set E such that, off E, u_eps and
its derivatives up to order p are within eps of u and of its
difference-quotient jet, while |E| <= eps.

The construction runs in stages: truncate the stacked field
V = (u, jet), smooth it by bump convolution, choose cube side and
shrink factor, then patch.
"""
import json
from dataclasses import dataclass, field
from itertools import product
from math import comb, factorial

import numpy as np
from scipy.signal import fftconvolve

from . import _kernels
from .difference_quotients import jet_of_quotients
from .sampled_fields import CellSet, SampledField, lr_norm, measure_of
from .tensor_frames import symmetrize


class GridResolutionError(ValueError):
    """The requested accuracy needs cubes smaller than one grid cell."""

    def __init__(self, inequality, detail):
        super().__init__(f"{inequality} condition cannot be met at this grid resolution: {detail}")
        self.inequality = inequality
        self.detail = detail


# --- stacked fields -----------------------------------------------------------


def stack_fields(u, jet):
    """V = (u, X_1, ..., X_p) flattened per active cell, plus the block layout."""
    dom = u.domain
    uv = u.active_values().reshape(dom.ncells, -1)
    blocks = [uv] + [jet.active(q).reshape(dom.ncells, -1) for q in range(1, jet.p + 1)]
    sizes = [b.shape[1] for b in blocks]
    return np.concatenate(blocks, axis=1), sizes


def _split(V, sizes):
    out = []
    start = 0
    for s in sizes:
        out.append(V[:, start : start + s])
        start += s
    return out


def truncate(V, R):
    """T^R applied row-wise: identity where |V| < R, else R V / |V|."""
    if R <= 0:
        raise ValueError("truncation radius must be positive")
    V = np.asarray(V, dtype=np.float64)
    norm = np.sqrt(np.sum(V * V, axis=-1, keepdims=True))
    scale = np.where(norm >= R, R / np.where(norm > 0, norm, 1.0), 1.0)
    return V * scale


@dataclass
class TruncationParams:
    R: float
    exceedance_set: CellSet
    tried: list = field(default_factory=list)


def select_truncation_radius(norms, domain, eps):
    """Smallest R in 1, 2, 4, ... with |{|V| >= R}| <= eps / 2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    full = np.zeros(domain.shape)
    full[domain.mask] = norms
    R = 1.0
    tried = []
    while True:
        mask = (full >= R) & domain.mask
        meas = int(mask.sum()) * domain.cell_volume
        tried.append((R, meas))
        if meas <= eps / 2:
            return TruncationParams(R, CellSet(domain, mask), tried)
        R *= 2.0


# --- smoothing ----------------------------------------------------------------

DIRECT_TAPS = 64


def bump_kernel(sigma, g):
    """Normalised samples of exp(-1 / (1 - (z/sigma)^2)) at multiples of g."""
    r = int(np.ceil(sigma / g)) - 1
    if r < 1:
        return np.ones(1)
    z = np.arange(-r, r + 1) * g / sigma
    w = np.exp(-1.0 / (1.0 - z * z))
    return w / w.sum()


def convolve_field(grid_values, kernel):
    """Separable zero-padded convolution over every grid axis; wide kernels go through FFT."""
    out = np.asarray(grid_values, dtype=np.float64)
    if len(kernel) == 1:
        return out.copy()
    nax = out.ndim - 1
    for ax in range(nax):
        moved = np.moveaxis(out, ax, 0)
        shp = moved.shape
        flat = moved.reshape(1, shp[0], -1)
        if len(kernel) > DIRECT_TAPS:
            r = (len(kernel) - 1) // 2
            flat = fftconvolve(flat, kernel[None, :, None], mode="full", axes=1)[:, r : r + shp[0]]
        else:
            flat = _kernels.convolve_axis(np.ascontiguousarray(flat), kernel)
        out = np.moveaxis(flat.reshape(shp), 0, ax)
    return out


@dataclass
class SmoothingResult:
    fields: list
    egoroff_set: CellSet
    sigma: float
    trace: list
    sigma_at_grid_scale: bool


def smooth_approx(W, sizes, domain, eps, u_values=None, r=None):
    """Convolve the stacked field with a bump of width sigma, halving sigma
    from diam/8 until |{|smoothed - W| > eps}| <= eps/2 (and, with ``r``,
    until the order-0 block is within eps of ``u_values`` in L^r)."""
    g = domain.g
    grid = np.zeros(domain.shape + (W.shape[1],))
    grid[domain.mask] = W
    sigma = domain.diameter / 8.0
    trace = []
    while True:
        kern = bump_kernel(sigma, g)
        sm = convolve_field(grid, kern)[domain.mask]
        dev = np.sqrt(np.sum((sm - W) ** 2, axis=1))
        bad = dev > eps
        meas = int(bad.sum()) * domain.cell_volume
        ok = meas <= eps / 2
        lr = None
        if r is not None:
            diff = np.zeros(domain.shape + (sizes[0],))
            diff[domain.mask] = sm[:, : sizes[0]] - u_values
            lr = lr_norm(SampledField(domain, diff), r)
            ok = ok and lr <= eps
        trace.append({"sigma": sigma, "egoroff_measure": meas, "lr": lr})
        if ok or len(kern) == 1:
            mask = np.zeros(domain.shape, dtype=bool)
            mask[domain.mask] = bad
            return SmoothingResult(_split(sm, sizes), CellSet(domain, mask), sigma, trace, len(kern) == 1)
        sigma /= 2.0


def empirical_modulus(fields, domain, max_offsets_per_rung=512):
    """Monotone modulus omega(t) of sum_q |U^q(x) - U^q(y)| over a dyadic
    distance ladder t = 0, g, 2g, 4g, ...

    ``fields`` are (cells, D_q) arrays over active cells.  Every integer
    offset with length in (t_{k-1}, t_k] is used while a rung has at most
    ``max_offsets_per_rung`` of them; larger rungs use an evenly strided subset.
    """
    stacked = np.concatenate([np.asarray(f).reshape(domain.ncells, -1) for f in fields], axis=1)
    grid = np.zeros(domain.shape + (stacked.shape[1],))
    grid[domain.mask] = stacked
    maxlen = np.sqrt(np.sum((np.asarray(domain.shape) - 1) ** 2))
    ts = [0.0]
    omega = [0.0]
    lo = 0.0
    hi = 1.0
    while lo < maxlen:
        rad = int(np.floor(hi))
        axes = [np.arange(-min(rad, s - 1), min(rad, s - 1) + 1) for s in domain.shape]
        offs = np.array(list(product(*axes)), dtype=np.int64).reshape(-1, domain.n)
        length = np.sqrt(np.sum(offs * offs, axis=1))
        offs = offs[(length > lo) & (length <= hi)]
        if len(offs) > max_offsets_per_rung:
            offs = offs[:: int(np.ceil(len(offs) / max_offsets_per_rung))]
        val = float(_kernels.offset_modulus(grid, domain.mask, offs).max(initial=0.0))
        ts.append(hi * domain.g)
        omega.append(max(omega[-1], val))
        lo, hi = hi, 2 * hi
    return np.asarray(ts), np.asarray(omega)


# --- cubes and grid parameters -----------------------------------------------


def shrink_factor(eps, measure, n):
    """alpha = (max{1 - eps/(2|Omega|), 1/2})^(1/n)."""
    return max(1.0 - eps / (2.0 * measure), 0.5) ** (1.0 / n)


@dataclass
class CubeDecomposition:
    """Cubes of ``m`` cells per side anchored at the box corner."""

    m: int
    delta: float
    alpha: float
    kept: np.ndarray  # (K, n) cube grid indices
    centers: np.ndarray  # (K, n) physical centres
    center_rows: np.ndarray  # (K,) active-row index of each centre cell
    omega_delta: CellSet
    omega_alpha_delta: CellSet
    dropped: dict
    alpha_raised: bool = False


def _cube_layout(domain, m):
    idx = np.argwhere(domain.mask)
    cube = idx // m
    off = idx - cube * m
    ncube_axis = [s // m for s in domain.shape]
    complete = np.all(cube < np.asarray(ncube_axis), axis=1)
    return idx, cube, off, ncube_axis, complete


def _inner_offsets(m, alpha):
    """Cell offsets (within one axis of a cube) whose centres lie in the inner cube."""
    half = (m - 1) / 2.0
    j = np.arange(m) - half
    return np.abs(j) <= alpha * m / 2.0 + 1e-12


def decompose(domain, U, eps, m, alpha):
    """Keep cubes of side m*g inside Omega that satisfy the Taylor remainder
    bound at their centre and whose inner cells deviate from the centre by at
    most eps (summed over orders)."""
    n = domain.n
    g = domain.g
    delta = m * g
    idx, cube, off, ncube_axis, complete = _cube_layout(domain, m)
    ncubes = int(np.prod(ncube_axis)) if all(ncube_axis) else 0
    cube_flat = np.full(len(idx), -1, dtype=np.int64)
    if ncubes:
        cube_flat[complete] = np.ravel_multi_index(tuple(cube[complete].T), ncube_axis)
    counts = np.bincount(cube_flat[cube_flat >= 0], minlength=ncubes)
    inside = counts == m**n
    centre_cell = np.all(off == (m - 1) // 2, axis=1) & (cube_flat >= 0)
    center_row = np.full(ncubes, -1, dtype=np.int64)
    center_row[cube_flat[centre_cell]] = np.flatnonzero(centre_cell)

    inner_axis = _inner_offsets(m, alpha)
    inner_cell = np.all(inner_axis[off], axis=1)

    p = len(U) - 1
    norms = [np.sqrt(np.sum(Uq.reshape(len(Uq), -1) ** 2, axis=1)) for Uq in U]
    taylor_ok = np.ones(ncubes, dtype=bool)
    safe_center = np.where(center_row >= 0, center_row, 0)
    for k in range(p + 1):
        tot = np.zeros(ncubes)
        for q in range(k + 1, p + 1):
            tot += norms[q][safe_center] * delta ** (q - k) / factorial(q - k)
        taylor_ok &= tot <= eps
    # entrywise |.| summed over all orders bounds sum_q |U^q(x) - U^q(c)| from above
    stacked = np.concatenate([Uq.reshape(len(Uq), -1) for Uq in U], axis=1)
    sel_cube = np.where(inner_cell & (cube_flat >= 0), cube_flat, -1)
    sel_cube[(sel_cube >= 0) & (center_row[np.maximum(sel_cube, 0)] < 0)] = -1
    dev = _kernels.center_deviation(stacked, sel_cube, np.maximum(center_row, 0), ncubes)
    modulus_ok = dev <= eps
    keep = inside & taylor_ok & modulus_ok
    dropped = {
        "outside": int((~inside).sum()),
        "taylor": int((inside & ~taylor_ok).sum()),
        "oscillation": int((inside & taylor_ok & ~modulus_ok).sum()),
    }
    kept_ids = np.flatnonzero(keep)
    kept_cells = np.zeros(len(idx), dtype=bool)
    kept_cells[cube_flat >= 0] = keep[cube_flat[cube_flat >= 0]]
    od = np.zeros(domain.shape, dtype=bool)
    od[tuple(idx[kept_cells].T)] = True
    oad = np.zeros(domain.shape, dtype=bool)
    oad[tuple(idx[kept_cells & inner_cell].T)] = True
    kept_idx = np.array(np.unravel_index(kept_ids, ncube_axis)).T.reshape(-1, n) if ncubes else np.zeros((0, n), int)
    centers = domain.origin + (kept_idx + 0.5) * delta
    return CubeDecomposition(
        m=m,
        delta=delta,
        alpha=alpha,
        kept=kept_idx,
        centers=centers,
        center_rows=center_row[kept_ids],
        omega_delta=CellSet(domain, od),
        omega_alpha_delta=CellSet(domain, oad),
        dropped=dropped,
    )


def _odd_ladder(start):
    """Odd cube sides, roughly halving from ``start`` down to 1."""
    m = start if start % 2 else start - 1
    out = [max(m, 1)]
    while out[-1] > 1:
        half = out[-1] // 2
        out.append(max(1, half if half % 2 else half - 1))
    return out


def select_grid_params(domain, U, eps):
    """Walk cube sides down an odd-cell ladder until the dropped measure
    |Omega \\ Omega_delta| <= eps/2, then certify |Omega \\ Omega_alpha_delta| <= eps.

    Raises ``GridResolutionError`` naming the inequality that blocks the
    single-cell level.
    """
    alpha = shrink_factor(eps, domain.measure, domain.n)
    last = None
    for m in _odd_ladder(min(domain.shape)):
        dec = decompose(domain, U, eps, m, alpha)
        lost = domain.measure - measure_of(dec.omega_delta)
        if lost <= eps / 2 + 1e-15:
            if domain.measure - measure_of(dec.omega_alpha_delta) > eps:
                # discrete inner cubes lose up to one cell layer; widen them
                dec = decompose(domain, U, eps, m, max(alpha, (m - 1) / m))
                dec.alpha_raised = True
                if domain.measure - measure_of(dec.omega_alpha_delta) > eps:
                    raise GridResolutionError("inner-cover", f"|Omega minus Omega_alpha_delta| exceeds {eps:.3g}")
            return dec
        last = dec
    worst = max(("taylor", "oscillation"), key=lambda k: last.dropped[k])
    raise GridResolutionError(
        worst if last.dropped[worst] else "cover",
        f"single-cell cubes still drop measure {domain.measure - measure_of(last.omega_delta):.3g} > {eps / 2:.3g}",
    )


# --- cutoffs ------------------------------------------------------------------


def _exp_series(g):
    """Taylor coefficients of exp(g(e)) from those of g."""
    K = len(g)
    h = np.zeros_like(g)
    h[0] = np.exp(g[0])
    for k in range(1, K):
        h[k] = sum(j * g[j] * h[k - j] for j in range(1, k + 1)) / k
    return h


def _div_series(a, d):
    K = len(a)
    q = np.zeros_like(a)
    for k in range(K):
        q[k] = (a[k] - sum(d[j] * q[k - j] for j in range(1, k + 1))) / d[0]
    return q


def exp_smoothstep(t, order):
    """S(t) = f(t)/(f(t)+f(1-t)), f(s) = exp(-1/s), and derivatives up to ``order``.

    Returns an array (len(t), order + 1); S = 0 for t <= 0 and 1 for t >= 1
    with all derivatives vanishing there.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = np.zeros((len(t), order + 1))
    out[t >= 1, 0] = 1.0
    mid = np.flatnonzero((t > 0) & (t < 1))
    ks = np.arange(order + 1)
    fact = np.array([factorial(k) for k in ks], dtype=np.float64)
    for i in mid:
        s = t[i]
        # f(s + e): exp of -1/(s+e) = -sum (-e)^k / s^(k+1)
        ga = -((-1.0) ** ks) / s ** (ks + 1)
        gb = -1.0 / (1.0 - s) ** (ks + 1)
        fa = _exp_series(ga) if np.exp(ga[0]) > 0 else np.zeros(order + 1)
        fb = _exp_series(gb) if np.exp(gb[0]) > 0 else np.zeros(order + 1)
        if not fa[0] and not fb[0]:
            continue
        out[i] = _div_series(fa, fa + fb) * fact
    return out


def poly_smoothstep(t, order, p):
    """C^p smoothstep t^(p+1) sum_k C(p+k, k) (1-t)^k and derivatives."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    from numpy.polynomial import polynomial as P

    poly = np.zeros(1)
    for k in range(p + 1):
        poly = P.polyadd(poly, comb(p + k, k) * P.polypow([1.0, -1.0], k))
    poly = P.polymul(poly, P.polypow([0.0, 1.0], p + 1))
    out = np.zeros((len(t), order + 1))
    tc = np.clip(t, 0.0, 1.0)
    inside = (t > 0) & (t < 1)
    for j in range(order + 1):
        vals = P.polyval(tc, P.polyder(poly, j)) if j else P.polyval(tc, poly)
        out[:, j] = np.where(inside, vals, out[:, j])
    out[t >= 1, 0] = 1.0
    return out


@dataclass(frozen=True)
class Cutoff:
    """Tensor-product ramp: 1 on the inner cube, 0 outside the outer cube."""

    delta: float
    alpha: float
    kind: str = "exp"
    p: int = 1

    def profile(self, y, order):
        """Derivatives d^j/dy^j (j = 0..order) of the 1-D profile at offsets y."""
        y = np.asarray(y, dtype=np.float64)
        half = self.delta / 2.0
        width = (1.0 - self.alpha) * half
        t = (half - np.abs(y)) / width
        S = exp_smoothstep(t, order) if self.kind == "exp" else poly_smoothstep(t, order, self.p)
        dtdy = -np.sign(y) / width
        return S * dtdy[:, None] ** np.arange(order + 1)

    def derivatives(self, y, k):
        """D^k zeta at offsets y (P, n) from the centre, shape (P,) + (n,) * k."""
        y = np.atleast_2d(y)
        P, n = y.shape
        prof = np.stack([self.profile(y[:, a], k) for a in range(n)], axis=1)  # (P, n, k+1)
        out = np.empty((P,) + (n,) * k)
        for tup in product(range(n), repeat=k):
            cnt = np.bincount(np.asarray(tup, dtype=np.int64), minlength=n) if k else np.zeros(n, int)
            val = np.ones(P)
            for a in range(n):
                val = val * prof[:, a, cnt[a]]
            out[(slice(None),) + tup] = val
        return out

    def __call__(self, y):
        return self.derivatives(y, 0)

    def to_dict(self):
        return {"delta": self.delta, "alpha": self.alpha, "kind": self.kind, "p": self.p}


def build_cutoff(delta, alpha, kind="exp", p=1):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return Cutoff(float(delta), float(alpha), kind, int(p))


# --- assembled output --------------------------------------------------------


def _contract(T, y, times):
    """T : y^(x times) over the trailing axes, per point. T (P, N, n..), y (P, n)."""
    for _ in range(times):
        T = np.einsum("p...i,pi->p...", T, y)
    return T


@dataclass
class MollifierOutput:
    domain: object
    p: int
    N: int
    eps: float
    eps_internal: float
    R: float
    decomposition: CubeDecomposition
    coeffs: list  # q = 0..p, each (K, N) + (n,) * q
    cutoff: Cutoff
    exceptional: CellSet
    F: CellSet
    A: CellSet
    B: CellSet
    bounds: dict = field(default_factory=dict)
    passed: bool = False
    trace: dict = field(default_factory=dict)
    r: float = None

    @property
    def delta(self):
        return self.decomposition.delta

    @property
    def alpha(self):
        return self.decomposition.alpha

    @property
    def centers(self):
        return self.decomposition.centers

    def _lookup(self):
        dom = self.domain
        m = self.decomposition.m
        shape = tuple(max(s // m, 1) for s in dom.shape)
        lut = np.full(shape, -1, dtype=np.int64)
        if len(self.decomposition.kept):
            lut[tuple(self.decomposition.kept.T)] = np.arange(len(self.decomposition.kept))
        return lut

    def evaluate(self, x, k=0):
        """D^k u_eps at points x (P, n); shape (P, N) + (n,) * k.

        On an inner cube this is the Taylor polynomial's k-th derivative; in
        the ramp region the Leibniz rule mixes in cutoff derivatives.
        """
        if k > self.p:
            raise ValueError(f"derivative order {k} exceeds p = {self.p}")
        dom = self.domain
        n = dom.n
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros((len(pts), self.N) + (n,) * k)
        lut = self._lookup()
        cidx = np.floor((pts - dom.origin) / self.delta).astype(np.int64)
        valid = np.all((cidx >= 0) & (cidx < np.asarray(lut.shape)), axis=1)
        ids = np.full(len(pts), -1, dtype=np.int64)
        ids[valid] = lut[tuple(cidx[valid].T)]
        sel = np.flatnonzero(ids >= 0)
        if not len(sel):
            return out
        ids = ids[sel]
        y = pts[sel] - self.centers[ids]
        # derivatives of the Taylor polynomial, orders 0..k
        dP = []
        for j in range(k + 1):
            acc = np.zeros((len(sel), self.N) + (n,) * j)
            for q in range(j, self.p + 1):
                acc += _contract(self.coeffs[q][ids], y, q - j) / factorial(q - j)
            dP.append(acc)
        P = len(sel)
        res = np.zeros((P, self.N, n**k))
        for j in range(k + 1):
            dz = self.cutoff.derivatives(y, j).reshape(P, 1, -1, 1)
            dp = dP[k - j].reshape(P, self.N, 1, -1)
            res += comb(k, j) * (dz * dp).reshape(P, self.N, -1)
        out[sel] = symmetrize(res.reshape((P, self.N) + (n,) * k), k)
        return out

    def sample(self, k=0):
        """D^k u_eps at every active cell centre, shape (cells, N) + (n,) * k."""
        return self.evaluate(self.domain.active_centers(), k)

    def to_dict(self):
        dom = self.domain
        return {
            "delta": self.delta,
            "alpha": self.alpha,
            "R": self.R,
            "eps": self.eps,
            "eps_internal": self.eps_internal,
            "p": self.p,
            "N": self.N,
            "domain": {"shape": list(dom.shape), "g": dom.g, "origin": dom.origin.tolist()},
            "cutoff": self.cutoff.to_dict(),
            "patches": [
                {
                    "center": self.centers[i].tolist(),
                    "coeffs": [self.coeffs[q][i].tolist() for q in range(self.p + 1)],
                    "cutoff": self.cutoff.to_dict(),
                }
                for i in range(len(self.centers))
            ],
            "exceptional_cells": self.exceptional.indices().tolist(),
            "bounds": self.bounds,
            "passed": self.passed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d, domain):
        """Rebuild an evaluable output (patches + exceptional set) on ``domain``."""
        p = d["p"]
        N = d["N"]
        n = domain.n
        K = len(d["patches"])
        centers = np.array([pt["center"] for pt in d["patches"]], dtype=np.float64).reshape(K, n)
        coeffs = [np.array([pt["coeffs"][q] for pt in d["patches"]], dtype=np.float64).reshape((K, N) + (n,) * q)
                  for q in range(p + 1)]
        m = int(round(d["delta"] / domain.g))
        kept = np.floor((centers - domain.origin) / d["delta"]).astype(np.int64)
        dec = CubeDecomposition(m, d["delta"], d["alpha"], kept, centers, np.zeros(K, int),
                                CellSet.empty(domain), CellSet.empty(domain), {})
        mask = np.zeros(domain.shape, dtype=bool)
        for c in d["exceptional_cells"]:
            mask[tuple(c)] = True
        E = CellSet(domain, mask)
        c = d["cutoff"]
        empty = CellSet.empty(domain)
        return cls(domain, p, N, d["eps"], d["eps_internal"], d["R"], dec, coeffs,
                   Cutoff(c["delta"], c["alpha"], c["kind"], c["p"]), E, empty, empty, empty,
                   bounds=d["bounds"], passed=d["passed"])


def measure_bounds(out, u, jet, r=None):
    """Re-measure the approximation bounds on the grid: sup |u - u_eps| and
    sup |jet - D u_eps| over cells outside E, |E|, and optionally the L^r gap."""
    dom = u.domain
    off = ~out.exceptional.mask[dom.mask]
    uvals = u.active_values().reshape(dom.ncells, -1)
    ueps = out.sample(0).reshape(dom.ncells, -1)
    du = np.sqrt(np.sum((uvals - ueps) ** 2, axis=1))
    jet_sq = np.zeros(dom.ncells)
    per_order = []
    for q in range(1, jet.p + 1):
        d = (jet.active(q) - out.sample(q)).reshape(dom.ncells, -1)
        sq = np.sum(d * d, axis=1)
        per_order.append(float(np.sqrt(sq[off].max(initial=0.0))))
        jet_sq += sq
    bounds = {
        "sup_u": float(du[off].max(initial=0.0)),
        "sup_jet": float(np.sqrt(jet_sq[off].max(initial=0.0))),
        "sup_jet_per_order": per_order,
        "measure_E": measure_of(out.exceptional),
        "lr": None,
    }
    if r is not None:
        diff = np.zeros(dom.shape + (uvals.shape[1],))
        diff[dom.mask] = uvals - ueps
        bounds["lr"] = lr_norm(SampledField(dom, diff), r)
    return bounds


def _bounds_pass(b, eps):
    ok = b["measure_E"] <= eps and b["sup_u"] <= eps and b["sup_jet"] <= eps
    if b["lr"] is not None:
        ok = ok and b["lr"] <= eps
    return bool(ok)


def _build(u, jet, eps, eps_int, r, cutoff_kind):
    dom = u.domain
    p = jet.p
    V, sizes = stack_fields(u, jet)
    if r is None:
        norms = np.sqrt(np.sum(V * V, axis=1))
        trunc = select_truncation_radius(norms, dom, eps_int)
        W = truncate(V, trunc.R)
    else:
        # keep u itself, truncate only the jet
        jv = V[:, sizes[0] :]
        trunc = select_truncation_radius(np.sqrt(np.sum(jv * jv, axis=1)), dom, eps_int)
        W = np.concatenate([V[:, : sizes[0]], truncate(jv, trunc.R)], axis=1)
    sm = smooth_approx(W, sizes, dom, eps_int, u_values=V[:, : sizes[0]] if r is not None else None, r=r)
    F = trunc.exceedance_set | sm.egoroff_set
    N = jet.N
    n = dom.n
    U = [f.reshape((dom.ncells, N) + (n,) * q) for q, f in enumerate(sm.fields)]
    dec = select_grid_params(dom, U, eps_int)
    coeffs = [Uq[dec.center_rows] for Uq in U]
    E = F | dec.omega_alpha_delta.complement()
    out = MollifierOutput(
        domain=dom,
        p=p,
        N=N,
        eps=eps,
        eps_internal=eps_int,
        R=trunc.R,
        decomposition=dec,
        coeffs=coeffs,
        cutoff=build_cutoff(dec.delta, dec.alpha, cutoff_kind, p),
        exceptional=E,
        F=F,
        A=trunc.exceedance_set,
        B=sm.egoroff_set,
        r=r,
        trace={
            "truncation": trunc.tried,
            "smoothing": sm.trace,
            "sigma_at_grid_scale": sm.sigma_at_grid_scale,
            "dropped_cubes": dec.dropped,
            "alpha_raised": dec.alpha_raised,
            "m": dec.m,
        },
    )
    out.bounds = measure_bounds(out, u, jet, r)
    if r is not None:
        out.bounds["lr_rhs"] = _lr_rhs(out, U, dom, r)
    out.passed = _bounds_pass(out.bounds, eps)
    return out


def _lr_rhs(out, U, dom, r):
    """Right side of the L^r estimate for the chosen delta and alpha."""
    sup = [float(np.sqrt(np.sum(Uq.reshape(len(Uq), -1) ** 2, axis=1)).max(initial=0.0)) for Uq in U]
    e = out.eps_internal
    lost = dom.measure - measure_of(out.decomposition.omega_delta)
    d = out.delta
    a = out.alpha
    return float(
        4 * e
        + 4 * lost ** (1 / r) * sup[0]
        + 6 * (1 - a**dom.n) ** (1 / r) * dom.measure ** (1 / r) * sum(s / factorial(q) for q, s in enumerate(sup))
        + 4 * dom.measure * sum(sup[q] * d**q / factorial(q) for q in range(1, len(sup)))
    )


def assemble(u, frame, H, eps, r=None, cutoff="exp", max_retries=12):
    """Build u_eps and E for the jet of ``u`` along step matrix ``H``.

    Internally works at eps/(3p) (and at most eps/7 when ``r`` is given); when
    the re-measured bounds miss, the internal accuracy is halved and the
    construction repeated.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = H.p
    jet = jet_of_quotients(u, frame, H)
    eps_int = eps / (3 * p)
    if r is not None:
        if r < 1:
            raise ValueError("L^r needs r >= 1")
        eps_int = min(eps_int, eps / 7)
    attempts = []
    for _ in range(max_retries):
        out = _build(u, jet, eps, eps_int, r, cutoff)
        attempts.append({"eps_internal": eps_int, "bounds": out.bounds, "passed": out.passed})
        if out.passed:
            break
        eps_int /= 2
    out.trace["attempts"] = attempts
    return out
