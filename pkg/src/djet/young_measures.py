"""Discrete Young measures over binned, compactified tensor spaces.

Each order-q tensor space is cut into ``bins**dim`` equal boxes covering
``[-R, R]**dim`` (``dim`` counts the independent entries of a symmetric
tensor) plus one extra bin for everything beyond ``R`` and for the point at
infinity.  A measure stores one sparse probability histogram per active cell
and per factor; several factors form a fibre product.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .difference_quotients import JetField
from .sampled_fields import CellSet, SampledField, ae_convergence_check, tail_nonincreasing
from .tensor_frames import chordal_distance_array, unique_tuples

NORMALIZATION_TOL = 1e-9
MAX_BINS = 1 << 16
DEFAULT_K_MAX = 4096


class PreconditionError(ValueError):
    """Hypotheses of an executable check are not met."""


class OrderBins:
    """Uniform binning of the order-q symmetric space over (N, n), plus infinity."""

    kind = "order"

    def __init__(self, q, N, n, radius, bins):
        if radius <= 0 or bins < 1:
            raise ValueError("radius and bins must be positive")
        self.q = int(q)
        self.N = int(N)
        self.n = int(n)
        self.radius = float(radius)
        self.bins = int(bins)
        self.coords = [(a,) + t for a in range(self.N) for t in (unique_tuples(self.n, self.q) if self.q else [()])]
        if self.bins ** self.dim > MAX_BINS:
            raise ValueError(f"{self.bins}**{self.dim} bins exceed the limit {MAX_BINS}")

    @property
    def dim(self):
        return len(self.coords)

    @property
    def tensor_shape(self):
        return (self.N,) + (self.n,) * self.q

    @property
    def n_finite(self):
        return self.bins**self.dim

    @property
    def n_bins(self):
        return self.n_finite + 1

    @property
    def inf_index(self):
        return self.n_finite

    @property
    def width(self):
        return 2.0 * self.radius / self.bins

    def coords_of(self, values):
        vals = np.asarray(values, dtype=np.float64).reshape((-1,) + self.tensor_shape)
        return np.stack([vals[(slice(None),) + c] for c in self.coords], axis=1)

    def index(self, values):
        return _kernels.bin_index(self.coords_of(values), self.radius, self.bins)

    def center_coords(self, idx):
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if np.any(idx >= self.n_finite):
            raise ValueError("the infinity bin has no finite centre")
        out = np.empty((len(idx), self.dim))
        rem = idx.copy()
        for d in range(self.dim - 1, -1, -1):
            out[:, d] = -self.radius + (rem % self.bins + 0.5) * self.width
            rem //= self.bins
        return out

    def centers(self, idx):
        """Full symmetric tensors at the given finite bin centres."""
        cc = self.center_coords(idx)
        out = np.zeros((len(cc),) + self.tensor_shape)
        from itertools import permutations

        for d, c in enumerate(self.coords):
            alpha, tup = c[0], c[1:]
            for perm in set(permutations(tup)):
                out[(slice(None), alpha) + perm] = cc[:, d]
        return out

    def is_inf(self, idx):
        return np.asarray(idx) == self.n_finite

    @cached_property
    def flat_centers(self):
        """(n_bins, dim) centre coordinates; the infinity row is +inf."""
        out = np.full((self.n_bins, self.dim), np.inf)
        out[: self.n_finite] = self.center_coords(np.arange(self.n_finite))
        return out

    @cached_property
    def canonical_order(self):
        """Enumeration order of bins: infinity first, then by distance of the
        centre from the origin (ties by index)."""
        c = self.flat_centers[: self.n_finite]
        dist = np.sqrt(np.sum(c * c, axis=1))
        finite = np.lexsort((np.arange(self.n_finite), np.round(dist, 12)))
        return np.concatenate([[self.inf_index], finite]).astype(np.int64)

    def contains_value(self, idx, values):
        return self.index(values) == idx

    def to_dict(self):
        return {"kind": "order", "q": self.q, "N": self.N, "n": self.n, "radius": self.radius, "bins": self.bins}

    def __eq__(self, other):
        return isinstance(other, OrderBins) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(sorted(self.to_dict().items())))

    def __repr__(self):
        return f"OrderBins(q={self.q}, N={self.N}, n={self.n}, R={self.radius:.4g}, bins={self.bins})"


class ProductBins:
    """Cartesian product of bin spaces; the last component varies fastest."""

    kind = "product"

    def __init__(self, components):
        comps = []
        for c in components:
            comps.extend(c.components if isinstance(c, ProductBins) else [c])
        self.components = tuple(comps)
        self.sizes = np.array([c.n_bins for c in self.components], dtype=np.int64)

    @property
    def n_bins(self):
        return int(np.prod(self.sizes))

    def decode(self, idx):
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        out = np.empty((len(idx), len(self.components)), dtype=np.int64)
        rem = idx.copy()
        for k in range(len(self.components) - 1, -1, -1):
            out[:, k] = rem % self.sizes[k]
            rem //= self.sizes[k]
        return out

    def encode(self, parts):
        parts = np.asarray(parts, dtype=np.int64)
        idx = np.zeros(len(parts), dtype=np.int64)
        for k in range(len(self.components)):
            idx = idx * self.sizes[k] + parts[:, k]
        return idx

    def is_inf(self, idx):
        parts = self.decode(idx)
        return np.any(np.stack([c.is_inf(parts[:, k]) for k, c in enumerate(self.components)], axis=1), axis=1)

    def centers(self, idx):
        parts = self.decode(idx)
        return tuple(c.centers(parts[:, k]) for k, c in enumerate(self.components))

    @cached_property
    def canonical_order(self):
        allidx = np.arange(self.n_bins)
        parts = self.decode(allidx)
        inf = np.zeros(self.n_bins, dtype=bool)
        dist = np.zeros(self.n_bins)
        for k, c in enumerate(self.components):
            pk = parts[:, k]
            inf |= c.is_inf(pk)
            cc = c.flat_centers[np.minimum(pk, c.n_finite)]
            finite_part = np.where(c.is_inf(pk)[:, None], 0.0, cc)
            dist += np.sum(finite_part**2, axis=1)
        return np.lexsort((allidx, np.round(np.sqrt(dist), 12), ~inf)).astype(np.int64)

    def to_dict(self):
        return {"kind": "product", "components": [c.to_dict() for c in self.components]}

    def __eq__(self, other):
        return isinstance(other, ProductBins) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self):
        return f"ProductBins({list(self.components)})"


def default_bins(dim):
    """65 bins per axis for one coordinate, otherwise the largest odd count
    <= 9 that keeps the box count under the limit."""
    if dim == 1:
        return 65
    b = 9
    while b > 1 and b**dim > MAX_BINS:
        b -= 2
    return b


@dataclass(frozen=True)
class BinScheme:
    """One bin space per factor (per jet order, or per field)."""

    spaces: tuple

    @classmethod
    def fit(cls, source, quantile=0.999, factor=2.0, bins=None):
        """Radius per factor = ``factor`` x the ``quantile`` of max-abs
        coordinates over active cells (1.0 when that is zero)."""
        spaces = []
        for q, vals, n in _factor_values(source):
            N = vals.shape[1] if vals.ndim > 1 else 1
            proto = OrderBins(q, N, n, 1.0, 1)
            coords = proto.coords_of(vals.reshape((len(vals),) + proto.tensor_shape))
            m = np.max(np.abs(coords), axis=1)
            m = m[np.isfinite(m)]
            rad = factor * float(np.quantile(m, quantile)) if m.size else 0.0
            if rad <= 0:
                rad = 1.0
            spaces.append(OrderBins(q, N, n, rad, bins or default_bins(proto.dim)))
        return cls(tuple(spaces))

    def to_dict(self):
        return {"spaces": [s.to_dict() for s in self.spaces]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(_space_from_dict(s) for s in d["spaces"]))


def _space_from_dict(d):
    if d["kind"] == "product":
        return ProductBins([_space_from_dict(c) for c in d["components"]])
    return OrderBins(d["q"], d["N"], d["n"], d["radius"], d["bins"])


def _factor_values(source):
    """(order, active values (cells, N, n, ...), n) per factor of an embeddable source."""
    if isinstance(source, JetField):
        dom = source.domain
        return [(q, source.active(q), dom.n) for q in range(1, source.p + 1)]
    if isinstance(source, SampledField):
        vs = source.value_shape
        vals = source.active_values()
        if vs == ():
            vals = vals[:, None]
        q = max(len(vs) - 1, 0)
        return [(q, vals, source.domain.n)]
    if isinstance(source, (list, tuple)):
        out = []
        for s in source:
            out.extend(_factor_values(s))
        return out
    raise TypeError(f"cannot embed {type(source).__name__}")


def _domain_of(source):
    if isinstance(source, (list, tuple)):
        return source[0].domain
    return source.domain


class DiscreteYoungMeasure:
    """Per-cell probability histograms; several factors form a fibre product."""

    def __init__(self, domain, spaces, masses, check=True):
        spaces = tuple(spaces)
        masses = tuple(sp.csr_matrix(m, dtype=np.float64) for m in masses)
        if len(spaces) != len(masses):
            raise ValueError("one mass matrix per factor")
        for s, m in zip(spaces, masses):
            if m.shape != (domain.ncells, s.n_bins):
                raise ValueError(f"mass matrix shape {m.shape} != {(domain.ncells, s.n_bins)}")
        self.domain = domain
        self.spaces = spaces
        self.masses = masses
        if check:
            self.check_normalized()

    def check_normalized(self, tol=NORMALIZATION_TOL):
        for m in self.masses:
            if m.nnz and m.data.min() < 0:
                raise ValueError("negative mass")
            sums = np.asarray(m.sum(axis=1)).ravel()
            if np.abs(sums - 1.0).max(initial=0.0) > tol:
                raise ValueError("histogram does not sum to one")

    @property
    def nfactors(self):
        return len(self.spaces)

    @cached_property
    def rowmap(self):
        rm = np.full(self.domain.shape, -1, dtype=np.int64)
        rm[self.domain.mask] = np.arange(self.domain.ncells)
        return rm

    def row(self, cell):
        r = int(self.rowmap[tuple(cell)])
        if r < 0:
            raise IndexError(f"cell {cell} is outside the domain")
        return r

    def histogram(self, cell, factor=0):
        return self.masses[factor].getrow(self.row(cell)).toarray().ravel()

    def mass_in(self, factor, bins_per_cell):
        """Mass each active cell puts on its own designated bin."""
        m = self.masses[factor]
        return np.asarray(m[np.arange(self.domain.ncells), np.asarray(bins_per_cell)]).ravel()

    def inf_mass(self, factor):
        """Mass on bins involving infinity, per active cell."""
        space = self.spaces[factor]
        m = self.masses[factor].tocoo()
        flag = space.is_inf(m.col).astype(np.float64)
        return np.bincount(m.row, weights=m.data * flag, minlength=self.domain.ncells)

    def joint(self):
        """Single-factor measure on the product space of all factors."""
        if self.nfactors == 1:
            return self
        space = self.spaces[0]
        mass = self.masses[0]
        for s, m in zip(self.spaces[1:], self.masses[1:]):
            mass = _rowwise_kron(mass, m)
            space = ProductBins([space, s])
        return DiscreteYoungMeasure(self.domain, [space], [mass])

    def marginal(self, component):
        """Marginal of a single product factor on one of its components."""
        if self.nfactors != 1 or not isinstance(self.spaces[0], ProductBins):
            raise ValueError("marginal needs a single product factor")
        space = self.spaces[0]
        m = self.masses[0].tocoo()
        part = space.decode(m.col)[:, component]
        out = sp.csr_matrix((m.data, (m.row, part)), shape=(self.domain.ncells, space.components[component].n_bins))
        out.sum_duplicates()
        return DiscreteYoungMeasure(self.domain, [space.components[component]], [out])

    def factor(self, k):
        return DiscreteYoungMeasure(self.domain, [self.spaces[k]], [self.masses[k]])

    def mix(self, other, lam):
        """Convex combination lam * self + (1 - lam) * other."""
        _check_compatible(self, other)
        return DiscreteYoungMeasure(
            self.domain, self.spaces, [lam * a + (1.0 - lam) * b for a, b in zip(self.masses, other.masses)]
        )

    def window_average(self, width=3):
        """Average histograms over a ``width``-cell box window of active cells."""
        from scipy.ndimage import uniform_filter

        dom = self.domain
        cnt = uniform_filter(dom.mask.astype(np.float64), size=width, mode="constant")
        new = []
        for m in self.masses:
            dense = np.zeros(dom.shape + (m.shape[1],))
            dense[dom.mask] = m.toarray()
            sm = uniform_filter(dense, size=(width,) * dom.n + (1,), mode="constant")
            sm = sm[dom.mask] / cnt[dom.mask][:, None]
            # running-sum filters leave roundoff residue on empty bins
            sm[sm < 1e-14] = 0.0
            sm /= sm.sum(axis=1, keepdims=True)
            new.append(sp.csr_matrix(sm))
        return DiscreteYoungMeasure(dom, self.spaces, new)


def _rowwise_kron(a, b):
    """Row-by-row Kronecker product of two CSR matrices (same row count)."""
    a = sp.csr_matrix(a)
    b = sp.csr_matrix(b)
    a.sort_indices()
    b.sort_indices()
    nrows = a.shape[0]
    na = np.diff(a.indptr)
    nb = np.diff(b.indptr)
    a_row = np.repeat(np.arange(nrows), na)
    reps = nb[a_row]
    rep_a = np.repeat(np.arange(a.nnz), reps)
    group_start = np.repeat(np.cumsum(reps) - reps, reps)
    offs = np.arange(len(rep_a)) - group_start
    b_pos = b.indptr[a_row[rep_a]] + offs
    cols = a.indices[rep_a] * b.shape[1] + b.indices[b_pos]
    data = a.data[rep_a] * b.data[b_pos]
    indptr = np.concatenate([[0], np.cumsum(na * nb)])
    return sp.csr_matrix((data, cols, indptr), shape=(nrows, a.shape[1] * b.shape[1]))


def _check_compatible(t1, t2):
    if not t1.domain.same_as(t2.domain):
        raise ValueError("measures live on different domains")
    if t1.spaces != t2.spaces:
        raise ValueError("bin scheme mismatch")


def dirac_embed(source, scheme=None):
    """v -> delta_v: unit mass in the bin containing v(x), per cell and factor."""
    if scheme is None:
        scheme = BinScheme.fit(source)
    factors = _factor_values(source)
    if len(factors) != len(scheme.spaces):
        raise ValueError("scheme does not match the number of factors")
    dom = _domain_of(source)
    masses = []
    for (q, vals, n), space in zip(factors, scheme.spaces):
        if space.q != q or space.n != n:
            raise ValueError("scheme does not match the factor shapes")
        idx = space.index(vals)
        ncell = len(idx)
        masses.append(sp.csr_matrix((np.ones(ncell), idx, np.arange(ncell + 1)), shape=(ncell, space.n_bins)))
    return DiscreteYoungMeasure(dom, scheme.spaces, masses)


def uniform_measure(domain, space, bins):
    """Equal mass on the listed bins at every cell."""
    bins = np.asarray(bins, dtype=np.int64)
    ncell = domain.ncells
    k = len(bins)
    cols = np.tile(bins, ncell)
    return DiscreteYoungMeasure(
        domain,
        [space],
        [sp.csr_matrix((np.full(ncell * k, 1.0 / k), cols, np.arange(0, ncell * k + 1, k)), shape=(ncell, space.n_bins))],
    )


@dataclass
class TestFunction:
    """Product test function phi(x) * psi(X) acting on one factor.

    ``phi`` holds one weight per active cell; ``psi`` one value per bin.
    """

    phi: np.ndarray
    psi: np.ndarray
    factor: int = 0

    __test__ = False  # not a pytest class

    @classmethod
    def bin_hat(cls, measure_or_domain, space, bin_index, cells=None, factor=0):
        """Hat function centred on one bin centre; it is 1 there and vanishes
        at every other centre (the infinity bump included)."""
        dom = measure_or_domain.domain if hasattr(measure_or_domain, "domain") else measure_or_domain
        psi = np.zeros(space.n_bins)
        psi[bin_index] = 1.0
        return cls(_phi_of(dom, cells), psi, factor)

    @classmethod
    def chordal_hat(cls, domain, space, bin_index, radius, cells=None, factor=0):
        """Continuous hat max(0, 1 - d(X, c)/radius) in the chordal metric,
        evaluated on bin centres of an order space."""
        c = space.flat_centers
        ref = np.repeat(c[bin_index][None, :], len(c), axis=0)
        psi = np.maximum(0.0, 1.0 - chordal_distance_array(c, ref) / radius)
        return cls(_phi_of(domain, cells), psi, factor)

    def sup_norm(self):
        return float(np.abs(self.psi).max())


def _phi_of(domain, cells):
    if cells is None:
        return domain.mask[domain.mask].astype(np.float64)
    if isinstance(cells, CellSet):
        return cells.mask[domain.mask].astype(np.float64)
    return np.asarray(cells, dtype=np.float64)


def pair(theta, test):
    """<theta, Phi> = sum_cells g^n phi(cell) sum_bins psi(bin) mass."""
    m = theta.masses[test.factor]
    per_cell = m @ np.asarray(test.psi, dtype=np.float64)
    return float(theta.domain.cell_volume * np.dot(test.phi, per_cell))


def _block_ids(domain, level):
    """Dyadic block id per active cell at ``level`` (2**level blocks per axis)."""
    idx = np.argwhere(domain.mask)
    ids = np.zeros(len(idx), dtype=np.int64)
    per_axis = []
    for ax, s in enumerate(domain.shape):
        nb = min(2**level, s)
        per_axis.append(nb)
        ids = ids * nb + (idx[:, ax] * nb) // s
    return ids, int(np.prod(per_axis))


def pairing_terms(theta1, theta2, k_max=DEFAULT_K_MAX):
    """Differences <theta1 - theta2, Phi_k> for the first ``k_max`` members of
    the canonical test family.

    Enumeration: dyadic level (whole domain first), block in C order, factor,
    then bins in each space's canonical order (infinity first).
    """
    _check_compatible(theta1, theta2)
    dom = theta1.domain
    vol = dom.cell_volume
    diffs = [a - b for a, b in zip(theta1.masses, theta2.masses)]
    terms = []
    max_level = int(np.ceil(np.log2(max(dom.shape)))) if max(dom.shape) > 1 else 0
    for level in range(max_level + 1):
        ids, nblocks = _block_ids(dom, level)
        A = sp.csr_matrix((np.ones(len(ids)), (ids, np.arange(len(ids)))), shape=(nblocks, dom.ncells))
        per_block = sum(s.n_bins for s in theta1.spaces)
        need_blocks = min(nblocks, -(-(k_max - len(terms)) // per_block))
        sums = [(A[:need_blocks] @ d).toarray() * vol for d in diffs]
        for b in range(need_blocks):
            for f, space in enumerate(theta1.spaces):
                terms.extend(sums[f][b, space.canonical_order].tolist())
                if len(terms) >= k_max:
                    return np.asarray(terms[:k_max])
    return np.asarray(terms)


def weak_star_distance(theta1, theta2, k_max=DEFAULT_K_MAX):
    """rho = sum_k 2^-k |<theta1 - theta2, Phi_k>| / (1 + |...|), k = 1..k_max."""
    t = np.abs(pairing_terms(theta1, theta2, k_max))
    w = np.ldexp(1.0, -np.arange(1, len(t) + 1))
    return float(np.sum(w * t / (1.0 + t)))


def pairings_agree(theta1, theta2, k_max=DEFAULT_K_MAX, tol=0.0):
    return bool(np.all(np.abs(pairing_terms(theta1, theta2, k_max)) <= tol))


def reduced_support(theta, cell, tau, factor=None):
    """Finite bin centres carrying mass >= tau at ``cell``.

    With ``factor`` given, returns a list of centre tensors for that factor;
    otherwise the list of tuples forming the product of the per-factor
    supports (empty as soon as one factor has no finite support).
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    factors = [factor] if factor is not None else range(theta.nfactors)
    per = []
    for f in factors:
        space = theta.spaces[f]
        h = theta.histogram(cell, f)
        idx = np.flatnonzero(h >= tau)
        idx = idx[~space.is_inf(idx)]
        per.append([_center_of(space, i) for i in idx])
    if factor is not None:
        return per[0]
    from itertools import product

    return [tuple(c) for c in product(*per)]


def _center_of(space, i):
    c = space.centers([i])
    if isinstance(c, tuple):
        return tuple(x[0] for x in c)
    return c[0]


def support_bins(theta, tau, factor):
    """(rows, bins) of finite bins with mass >= tau, for all cells at once."""
    m = theta.masses[factor].tocoo()
    keep = (m.data >= tau) & ~theta.spaces[factor].is_inf(m.col)
    return m.row[keep], m.col[keep]


def product_measure(theta_a, theta_b):
    """Cell-wise product histogram on the product of both (joint) spaces."""
    if not theta_a.domain.same_as(theta_b.domain):
        raise ValueError("measures live on different domains")
    ja = theta_a.joint()
    jb = theta_b.joint()
    space = ProductBins([ja.spaces[0], jb.spaces[0]])
    return DiscreteYoungMeasure(theta_a.domain, [space], [_rowwise_kron(ja.masses[0], jb.masses[0])])


# --- executable checks -------------------------------------------------


def trend_to_zero(trace, tol, slack_frac=0.1):
    """Last value within ``tol`` and the last three values nonincreasing up to
    ``slack_frac`` times the first value."""
    trace = list(trace)
    if not trace:
        return False
    return trace[-1] <= tol and tail_nonincreasing(trace, slack=slack_frac * trace[0])


def _diff_norm(a, b):
    if isinstance(a, JetField):
        return (a - b).norm_field()
    return (a - b).pointwise_norm()


def rho_trace(seq, target, scheme, k_max=DEFAULT_K_MAX):
    return [weak_star_distance(dirac_embed(s, scheme), target, k_max) for s in seq]


def check_ae_weak_equivalence(seq, limit, scheme, tol, mass_budget=None, rho_tol=1e-3, k_max=DEFAULT_K_MAX):
    """Both directions at desk scale: a.e. convergence of the maps agrees with
    weak* convergence of their Dirac embeddings."""
    ae_ok, ae_rep = ae_convergence_check(seq, limit, tol, mass_budget)
    target = dirac_embed(limit, scheme)
    trace = rho_trace(seq, target, scheme, k_max)
    weak_ok = trend_to_zero(trace, rho_tol)
    return ae_ok == weak_ok, {"ae": ae_ok, "weak": weak_ok, "rho_trace": trace, "ae_trend": ae_rep["trend"]}


def check_asymptotic_pairs(U_seq, V_seq, theta, scheme, tol=1e-6, mass_budget=None, rho_tol=1e-3, k_max=DEFAULT_K_MAX):
    """If |U_m - V_m| -> 0 a.e. and delta_U_m -> theta, then delta_V_m -> theta."""
    U_seq = list(U_seq)
    V_seq = list(V_seq)
    if len(U_seq) != len(V_seq) or not U_seq:
        raise PreconditionError("sequences must be non-empty and of equal length")
    dom = _domain_of(U_seq[0])
    diffs = [_diff_norm(u, v) for u, v in zip(U_seq, V_seq)]
    zero = SampledField(dom, np.zeros(dom.shape))
    ok, rep = ae_convergence_check(diffs, zero, tol, mass_budget)
    if not ok:
        raise PreconditionError(f"|U_m - V_m| does not vanish a.e. (offending measure trend {rep['trend']})")
    tu = rho_trace(U_seq, theta, scheme, k_max)
    if not trend_to_zero(tu, rho_tol):
        raise PreconditionError(f"delta_U_m does not approach theta (rho trace {tu})")
    tv = rho_trace(V_seq, theta, scheme, k_max)
    return trend_to_zero(tv, rho_tol), {"rho_U": tu, "rho_V": tv, "ae_trend": rep["trend"]}


def check_product_limit(U_seq, U_lim, V_seq, theta, scheme_U, scheme_V, tol=1e-6, mass_budget=None, rho_tol=1e-3,
                        k_max=DEFAULT_K_MAX):
    """If U_m -> U a.e. and delta_V_m -> theta, then delta_(U_m, V_m) -> delta_U x theta."""
    U_seq = list(U_seq)
    V_seq = list(V_seq)
    dom = _domain_of(U_lim)
    diffs = [_diff_norm(u, U_lim) for u in U_seq]
    ok, rep = ae_convergence_check(diffs, SampledField(dom, np.zeros(dom.shape)), tol, mass_budget)
    if not ok:
        raise PreconditionError(f"U_m does not converge a.e. (trend {rep['trend']})")
    tv = rho_trace(V_seq, theta, scheme_V, k_max)
    if not trend_to_zero(tv, rho_tol):
        raise PreconditionError(f"delta_V_m does not approach theta (rho trace {tv})")
    target = product_measure(dirac_embed(U_lim, scheme_U), theta)
    trace = [
        weak_star_distance(product_measure(dirac_embed(u, scheme_U), dirac_embed(v, scheme_V)), target, k_max)
        for u, v in zip(U_seq, V_seq)
    ]
    return trend_to_zero(trace, rho_tol), {"rho_pair": trace, "rho_V": tv}
