"""Forward difference quotients, their iterates and frame-adapted jets.

Steps are integer multiples of the cell size by default so that ``x + h a``
lands on a cell centre.  Non-axis directions require ``resample=True``,
which evaluates the zero-extended field by multilinear interpolation.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .sampled_fields import CellSet, GridDomain, SampledField
from .tensor_frames import Frame, ordered_tuples, reconstruct_fields

STEP_TOL = 1e-9


class OffGridStepError(ValueError):
    """A step does not land on the grid and resampling is off."""


class StepMatrix:
    """Lower-triangular matrix of steps; row ``q`` drives the order-q quotient.

    ``entries[q-1, r-1]`` is the step used for the r-th applied direction of
    the order-q quotient (the innermost direction comes first).
    """

    def __init__(self, entries, g=None):
        arr = np.array(entries, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        p = arr.shape[0]
        if arr.shape != (p, p):
            raise ValueError("step matrix must be square")
        lower = np.tril(np.ones((p, p), dtype=bool))
        if np.any(arr[~lower] != 0.0):
            raise ValueError("step matrix must be lower triangular")
        if np.any(arr[lower] == 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("steps must be finite and nonzero")
        if g is not None:
            ratio = np.abs(arr[lower]) / g
            if np.any(ratio < 1.0 - STEP_TOL) or np.any(np.abs(ratio - np.round(ratio)) > STEP_TOL * np.maximum(ratio, 1)):
                raise OffGridStepError("steps must be nonzero integer multiples of the cell size")
        arr.flags.writeable = False
        self.entries = arr
        self.g = g

    @property
    def p(self):
        return self.entries.shape[0]

    def row(self, q):
        """Steps (h_q^1, ..., h_q^q) of the order-q quotient."""
        return tuple(float(h) for h in self.entries[q - 1, :q])

    def max_step(self):
        return float(np.abs(self.entries[np.tril_indices(self.p)]).max())

    def tolist(self):
        return [list(self.row(q)) for q in range(1, self.p + 1)]

    def __repr__(self):
        return f"StepMatrix({self.tolist()})"


def _axis_shift(a, h, g, resample):
    """Integer cell offset for the step h*a, or None when resampling."""
    a = np.asarray(a, dtype=np.float64)
    if abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if h == 0:
        raise ValueError("step must be nonzero")
    off = h * a / g
    rounded = np.round(off)
    if np.all(np.abs(off - rounded) <= STEP_TOL * np.maximum(1.0, np.abs(off))):
        return rounded.astype(np.int64)
    if not resample:
        raise OffGridStepError(f"step {h} along {a.tolist()} is off the grid (cell size {g})")
    return None


def _shift(arr, off, nax):
    """out[x] = arr[x + off] with zero fill (the global zero extension)."""
    out = np.zeros_like(arr)
    src = []
    dst = []
    for ax in range(nax):
        s = int(off[ax])
        size = arr.shape[ax]
        if abs(s) >= size:
            return out
        if s >= 0:
            src.append(slice(s, size))
            dst.append(slice(0, size - s))
        else:
            src.append(slice(0, size + s))
            dst.append(slice(-s, size))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _interp(values, domain, offset_pts):
    """Zero-extended multilinear interpolation of cell-centred values at
    centre + offset (offset in physical units, constant over cells)."""
    n = domain.n
    base = np.indices(domain.shape, dtype=np.float64)
    coords = [base[ax] + offset_pts[ax] / domain.g for ax in range(n)]
    extra = values.shape[n:]
    flat = values.reshape(domain.shape + (-1,))
    out = np.empty(flat.shape)
    for k in range(flat.shape[-1]):
        out[..., k] = ndimage.map_coordinates(flat[..., k], coords, order=1, mode="constant", cval=0.0)
    return out.reshape(domain.shape + extra)


def _flag_stencil_exit(domain, shifts):
    """Cells x for which some partial stencil point x + s_1 + ... + s_k leaves Omega."""
    flags = np.zeros(domain.shape, dtype=bool)
    acc = np.zeros(domain.n, dtype=np.int64)
    outside = (~domain.mask).astype(np.float64)
    for s in shifts:
        acc = acc + s
        moved = _shift(outside, acc, domain.n)
        # beyond the box counts as outside too
        inside_box = _shift(np.ones(domain.shape), acc, domain.n)
        flags |= (moved > 0) | (inside_box == 0)
    return flags & domain.mask


def dq_iterated(u, dirs, steps, resample=False, return_flags=False):
    """Iterated forward quotient D^{1,h_p}_{a_p}( ... D^{1,h_1}_{a_1} u).

    ``dirs`` and ``steps`` are listed innermost first: ``dirs[0]`` with
    ``steps[0]`` is applied to ``u`` first.
    """
    dirs = [np.asarray(a, dtype=np.float64) for a in dirs]
    steps = [float(h) for h in steps]
    if len(dirs) != len(steps):
        raise ValueError("directions and steps must have the same length")
    dom = u.domain
    if any(len(a) != dom.n for a in dirs):
        raise ValueError("direction dimension does not match the domain")
    shifts = [_axis_shift(a, h, dom.g, resample) for a, h in zip(dirs, steps)]
    if all(s is not None for s in shifts):
        vals = _dq_aligned(u, shifts, steps)
        flags = _flag_stencil_exit(dom, shifts)
    else:
        vals = _dq_resampled(u, dirs, steps)
        flags = _flag_resampled_exit(dom, dirs, steps)
    out = SampledField(dom, vals)
    if return_flags:
        return out, CellSet(dom, flags)
    return out


def _dq_aligned(u, shifts, steps):
    dom = u.domain
    n = dom.n
    pad = np.sum(np.abs(np.stack(shifts)), axis=0)
    widths = [(int(p), int(p)) for p in pad] + [(0, 0)] * (u.values.ndim - n)
    cur = np.pad(u.values, widths)
    for s, h in zip(shifts, steps):
        cur = (_shift(cur, s, n) - cur) / h
    crop = tuple(slice(int(p), int(p) + size) for p, size in zip(pad, dom.shape))
    return cur[crop]


def _dq_resampled(u, dirs, steps):
    """Expanded stencil: sum over subsets S of (-1)^{q-|S|} u(x + sum_S h a) / prod h."""
    dom = u.domain
    q = len(dirs)
    acc = np.zeros(u.values.shape)
    for mask in range(1 << q):
        off = np.zeros(dom.n)
        sign = -1.0 if (q - bin(mask).count("1")) % 2 else 1.0
        for k in range(q):
            if mask >> k & 1:
                off += steps[k] * dirs[k]
        if np.all(off == 0):
            acc += sign * u.values
        else:
            acc += sign * _interp(u.values, dom, off)
    return acc / np.prod(steps)


def _flag_resampled_exit(dom, dirs, steps):
    ind = SampledField(dom, np.ones(dom.shape))
    flags = np.zeros(dom.shape, dtype=bool)
    off = np.zeros(dom.n)
    for a, h in zip(dirs, steps):
        off = off + h * np.asarray(a)
        flags |= _interp(ind.values, dom, off) < 1.0 - 1e-12
    return flags & dom.mask


def stencil_exit_flags(domain, dirs, steps, resample=False):
    """Mask of cells whose quotient stencil leaves Omega (zero extension used)."""
    shifts = [_axis_shift(a, h, domain.g, resample) for a, h in zip(dirs, steps)]
    if all(s is not None for s in shifts):
        return _flag_stencil_exit(domain, shifts)
    return _flag_resampled_exit(domain, dirs, steps)


def dq1(u, a, h, resample=False):
    """First-order forward quotient (u(x + h a) - u(x)) / h."""
    return dq_iterated(u, [a], [h], resample=resample)


@dataclass
class JetField:
    """Difference-quotient jet (X_1, ..., X_p) per cell, standard coordinates.

    ``orders[q-1]`` has shape ``grid + (N,) + (n,) * q``.
    """

    domain: GridDomain
    orders: list
    boundary: CellSet = None

    @property
    def p(self):
        return len(self.orders)

    @property
    def N(self):
        return self.orders[0].shape[self.domain.n]

    def order(self, q):
        return SampledField(self.domain, self.orders[q - 1])

    def active(self, q):
        """Order-q values over active cells, shape (cells, N, n, ...)."""
        return self.orders[q - 1][self.domain.mask]

    def stacked(self):
        """Flattened (X_1, ..., X_p) per active cell, shape (cells, D)."""
        return np.concatenate([self.active(q).reshape(self.domain.ncells, -1) for q in range(1, self.p + 1)], axis=1)

    def __sub__(self, other):
        return JetField(self.domain, [a - b for a, b in zip(self.orders, other.orders)], self.boundary)

    def __add__(self, other):
        if isinstance(other, JetField):
            return JetField(self.domain, [a + b for a, b in zip(self.orders, other.orders)], self.boundary)
        return JetField(self.domain, [np.where(_bmask(self.domain, a), a + other, 0.0) for a in self.orders], self.boundary)

    def norm_field(self):
        """|(X_1, ..., X_p)| per cell as a scalar field."""
        tot = np.zeros(self.domain.shape)
        for a in self.orders:
            flat = a.reshape(self.domain.shape + (-1,))
            tot += np.sum(flat * flat, axis=-1)
        return SampledField(self.domain, np.sqrt(tot))


def _bmask(domain, arr):
    return domain.mask.reshape(domain.shape + (1,) * (arr.ndim - domain.n))


def jet_of_quotients(u, frame, H, resample=False):
    """Jet of difference quotients of ``u`` relative to ``frame``.

    The order-q coefficient on E^{alpha i_1..i_q} is the iterated quotient of
    E^alpha . u along E^(alpha)i_1 (innermost, step h_q^1), ...,
    E^(alpha)i_q (outermost, step h_q^q).
    """
    dom = u.domain
    n = dom.n
    vs = u.value_shape
    N = 1 if vs == () else vs[0]
    if len(vs) > 1 or frame.N != N or frame.n != n:
        raise ValueError("frame does not match the field dimensions")
    if not resample and not frame.is_axis_aligned():
        raise OffGridStepError("non-axis-aligned frame needs resample=True")
    comps = u.values.reshape(dom.shape + (N,))
    scalar = [SampledField(dom, comps @ frame.target[alpha]) for alpha in range(N)]
    boundary = np.zeros(dom.shape, dtype=bool)

    orders = []
    for q in range(1, H.p + 1):
        row = H.row(q)
        coeff = np.zeros((dom.ncells, N) + (n,) * q)
        for alpha in range(N):
            for tup in ordered_tuples(n, q):
                # full stencil on the zero-extended u; intermediate quotients
                # are not truncated to Omega
                dirs = [frame.domain[alpha, i] for i in tup]
                coeff[(slice(None), alpha) + tup] = dq_iterated(scalar[alpha], dirs, row, resample).values[dom.mask]
                boundary |= stencil_exit_flags(dom, dirs, row, resample)
        full = np.zeros(dom.shape + (N,) + (n,) * q)
        full[dom.mask] = reconstruct_fields(coeff, frame)
        orders.append(full)
    return JetField(dom, orders, CellSet(dom, boundary))


def step_schedule(p, h0, decay, count, g):
    """Diagonal schedule: entry nu has every step equal to h0 * decay**nu."""
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    out = []
    for nu in range(count):
        h = h0 * decay**nu
        if h < g * (1.0 - STEP_TOL):
            raise ValueError(f"schedule entry {nu} (step {h:.3g}) is below the grid resolution {g:.3g}")
        out.append(StepMatrix(np.tril(np.full((p, p), h)), g=g))
    return out


def sweep_entry(H, q, r, values, g=None):
    """Nested-limit diagnostic: vary entry (q, r) over ``values``, others fixed."""
    out = []
    for v in values:
        arr = np.array(H.entries)
        arr[q - 1, r - 1] = v
        out.append(StepMatrix(arr, g=g if g is not None else H.g))
    return out
