"""Grid-sampled measurable maps, cell sets and measure-theoretic checks.

Fields are piecewise constant on a uniform grid of cubic cells of side ``g``.
A cell belongs to the domain when its mask entry is set; everywhere else
(including outside the bounding box) every field is zero.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridDomain:
    """Uniform grid of cells; ``mask`` marks the cells whose union approximates Omega."""

    shape: tuple
    g: float
    origin: np.ndarray
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        origin = np.array(self.origin, dtype=np.float64).reshape(-1)
        mask = np.array(self.mask, dtype=bool)
        if self.g <= 0:
            raise ValueError("cell size must be positive")
        if mask.shape != shape or origin.shape != (len(shape),):
            raise ValueError("shape, origin and mask disagree")
        if not mask.any():
            raise ValueError("domain must contain at least one cell")
        mask.flags.writeable = False
        origin.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "g", float(self.g))

    @classmethod
    def box(cls, lo, hi, cells):
        """Full box [lo, hi] with ``cells`` cells along the first axis."""
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        g = float(hi[0] - lo[0]) / int(cells)
        shape = tuple(int(round((h - l) / g)) for l, h in zip(lo, hi))
        return cls(shape, g, lo, np.ones(shape, dtype=bool))

    @classmethod
    def unit_interval(cls, cells):
        return cls.box([0.0], [1.0], cells)

    @property
    def n(self):
        return len(self.shape)

    @property
    def cell_volume(self):
        return self.g ** self.n

    @property
    def ncells(self):
        return int(self.mask.sum())

    @property
    def measure(self):
        return self.ncells * self.cell_volume

    @property
    def upper(self):
        return self.origin + self.g * np.asarray(self.shape)

    @property
    def diameter(self):
        return float(self.g * np.sqrt(np.sum(np.square(self.shape))))

    def centers(self):
        """Cell centres, shape ``self.shape + (n,)``."""
        axes = [self.origin[k] + self.g * (np.arange(s) + 0.5) for k, s in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def active_centers(self):
        return self.centers()[self.mask]

    def index_of(self, point):
        """Multi-index of the cell containing ``point`` or None outside the box."""
        rel = (np.asarray(point, dtype=np.float64) - self.origin) / self.g
        idx = np.floor(rel).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            return None
        return tuple(int(i) for i in idx)

    def contains(self, index):
        if len(index) != self.n or any(i < 0 or i >= s for i, s in zip(index, self.shape)):
            return False
        return bool(self.mask[tuple(index)])

    def same_as(self, other):
        return (
            self.shape == other.shape
            and self.g == other.g
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.mask, other.mask)
        )

    def refine(self, factor):
        """Same box with every cell split ``factor`` times per axis."""
        mask = self.mask
        for ax in range(self.n):
            mask = np.repeat(mask, factor, axis=ax)
        return GridDomain(tuple(s * factor for s in self.shape), self.g / factor, self.origin, mask)


def _check_domain(a, b):
    if not a.same_as(b):
        raise ValueError("fields live on different grid domains")


class SampledField:
    """Cell-centred samples of a map Omega -> R^N (or a tensor space)."""

    def __init__(self, domain, values):
        vals = np.array(values, dtype=np.float64)
        if vals.shape[: domain.n] != domain.shape:
            raise ValueError(f"values shape {vals.shape} does not start with grid shape {domain.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals[~domain.mask] = 0.0
        vals.flags.writeable = False
        self.domain = domain
        self.values = vals

    @classmethod
    def from_function(cls, domain, fn):
        """Sample ``fn`` (vectorised over an array of points, shape (..., n)) at cell centres."""
        return cls(domain, np.asarray(fn(domain.centers()), dtype=np.float64))

    @property
    def value_shape(self):
        return self.values.shape[self.domain.n :]

    def active_values(self):
        return self.values[self.domain.mask]

    def at(self, points):
        """Evaluate at arbitrary points; zero outside Omega."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        rel = np.floor((pts - self.domain.origin) / self.domain.g).astype(np.int64)
        shape = np.asarray(self.domain.shape)
        inside = np.all((rel >= 0) & (rel < shape), axis=1)
        out = np.zeros((len(pts),) + self.value_shape)
        if inside.any():
            idx = tuple(rel[inside].T)
            out[inside] = self.values[idx]
        return out

    def pointwise_norm(self):
        """Scalar field |u(x)| (Euclidean over all value axes)."""
        flat = self.values.reshape(self.domain.shape + (-1,))
        return SampledField(self.domain, np.sqrt(np.sum(flat * flat, axis=-1)))

    def _combine(self, other, op):
        if isinstance(other, SampledField):
            _check_domain(self.domain, other.domain)
            return SampledField(self.domain, op(self.values, other.values))
        return SampledField(self.domain, op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c):
        return self._combine(c, np.multiply)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self):
        return SampledField(self.domain, -self.values)

    def __repr__(self):
        return f"SampledField(shape={self.domain.shape}, value_shape={self.value_shape})"


class CellSet:
    """Subset of the domain cells."""

    def __init__(self, domain, mask):
        m = np.array(mask, dtype=bool)
        if m.shape != domain.shape:
            raise ValueError("mask shape does not match the grid")
        m &= domain.mask
        m.flags.writeable = False
        self.domain = domain
        self.mask = m

    @classmethod
    def empty(cls, domain):
        return cls(domain, np.zeros(domain.shape, dtype=bool))

    @classmethod
    def full(cls, domain):
        return cls(domain, domain.mask)

    @property
    def count(self):
        return int(self.mask.sum())

    def measure(self):
        return measure_of(self)

    def indices(self):
        return np.argwhere(self.mask)

    def complement(self):
        return CellSet(self.domain, self.domain.mask & ~self.mask)

    def __or__(self, other):
        _check_domain(self.domain, other.domain)
        return CellSet(self.domain, self.mask | other.mask)

    def __and__(self, other):
        _check_domain(self.domain, other.domain)
        return CellSet(self.domain, self.mask & other.mask)

    def __sub__(self, other):
        _check_domain(self.domain, other.domain)
        return CellSet(self.domain, self.mask & ~other.mask)

    def __xor__(self, other):
        _check_domain(self.domain, other.domain)
        return CellSet(self.domain, self.mask ^ other.mask)

    def __eq__(self, other):
        return isinstance(other, CellSet) and self.domain.same_as(other.domain) and np.array_equal(self.mask, other.mask)

    def __repr__(self):
        return f"CellSet(count={self.count}, measure={self.measure():.6g})"


def measure_of(cells):
    """Lebesgue measure of a cell set: (#cells) * g^n."""
    return cells.count * cells.domain.cell_volume


def lr_norm(u, r):
    """Riemann-sum L^r norm over Omega; ``r = inf`` gives the max over cells."""
    if r < 1:
        raise ValueError("L^r norms need r >= 1")
    mag = u.pointwise_norm().active_values()
    if np.isinf(r):
        return float(mag.max()) if mag.size else 0.0
    vol = u.domain.cell_volume
    # fixed summation order: np.sum over a contiguous 1-D array is deterministic
    return float((vol * np.sum(np.ascontiguousarray(mag) ** r)) ** (1.0 / r))


def exceedance_set(u, t):
    """Cells where the scalar field exceeds ``t`` (strictly)."""
    if u.value_shape not in ((), (1,)):
        raise ValueError("exceedance needs a scalar field")
    vals = u.values.reshape(u.domain.shape)
    return CellSet(u.domain, vals > t)


def offending_measures(seq, limit, tol):
    """|{ |u_k - limit| > tol }| for every entry of ``seq``."""
    return [measure_of(exceedance_set((s - limit).pointwise_norm(), tol)) for s in seq]


def tail_nonincreasing(trend, slack=0.0, tail=3):
    last = trend[-tail:]
    return all(b <= a + slack for a, b in zip(last, last[1:]))


def ae_convergence_check(seq, limit, tol, mass_budget=None):
    """Discrete surrogate for almost-everywhere convergence.

    Returns ``(ok, report)``; ``ok`` holds when the offending measure of the
    last entry is within ``mass_budget`` (default 1% of |Omega|) and the
    offending measure is nonincreasing over the last three entries.
    """
    seq = list(seq)
    if not seq:
        raise ValueError("empty sequence")
    for s in seq:
        _check_domain(s.domain, limit.domain)
    if mass_budget is None:
        mass_budget = 0.01 * limit.domain.measure
    trend = offending_measures(seq, limit, tol)
    last = exceedance_set((seq[-1] - limit).pointwise_norm(), tol)
    ok = trend[-1] <= mass_budget and tail_nonincreasing(trend)
    report = {
        "measure": trend[-1],
        "offending_cells": [list(map(int, ix)) for ix in last.indices()],
        "trend": trend,
        "mass_budget": mass_budget,
    }
    return ok, report
