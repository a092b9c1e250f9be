"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with identical semantics.  The numpy path is selected when numba is
missing or when ``DJET_DISABLE_NUMBA=1`` is set in the environment before
import.  Both implementations are importable through ``NUMBA_IMPL`` and
``NUMPY_IMPL`` so tests and benchmarks can compare them directly.
"""
import os

import numpy as np

_FLAG = os.environ.get("DJET_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    if DISABLED_BY_ENV:
        raise ImportError("numba disabled by DJET_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _bin_index_np(coords, radius, bins):
    coords = np.asarray(coords, dtype=np.float64)
    ncell, dim = coords.shape
    width = 2.0 * radius / bins
    finite = np.all(np.isfinite(coords), axis=1)
    inside = finite & np.all(np.abs(np.where(finite[:, None], coords, 0.0)) <= radius, axis=1)
    safe = np.where(inside[:, None], coords, 0.0)
    k = np.floor((safe + radius) / width).astype(np.int64)
    k = np.clip(k, 0, bins - 1)
    out = np.zeros(ncell, dtype=np.int64)
    for d in range(dim):
        out = out * bins + k[:, d]
    out[~inside] = bins ** dim
    return out


def _center_deviation_np(values, cube_of, center_row, ncubes):
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros(ncubes, dtype=np.float64)
    sel = cube_of >= 0
    rows = np.flatnonzero(sel)
    cubes = cube_of[sel]
    dev = np.abs(values[rows] - values[center_row[cubes]]).sum(axis=1)
    np.maximum.at(out, cubes, dev)
    return out


def _cube_max_np(values, cube_of, ncubes):
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((ncubes, values.shape[1]), dtype=np.float64)
    sel = cube_of >= 0
    np.maximum.at(out, cube_of[sel], np.abs(values[sel]))
    return out


def _offset_modulus_np(grid_values, active, offsets):
    """max over active pairs (x, x+s) of sum |U(x+s) - U(x)|, per offset s."""
    shape = active.shape
    out = np.zeros(len(offsets), dtype=np.float64)
    for k, off in enumerate(offsets):
        src = []
        dst = []
        ok = True
        for ax, s in enumerate(off):
            s = int(s)
            if abs(s) >= shape[ax]:
                ok = False
                break
            if s >= 0:
                src.append(slice(0, shape[ax] - s))
                dst.append(slice(s, shape[ax]))
            else:
                src.append(slice(-s, shape[ax]))
                dst.append(slice(0, shape[ax] + s))
        if not ok:
            continue
        src = tuple(src)
        dst = tuple(dst)
        both = active[src] & active[dst]
        if not both.any():
            continue
        diff = np.abs(grid_values[dst] - grid_values[src]).sum(axis=-1)
        out[k] = diff[both].max()
    return out


def _convolve_axis_np(arr, kernel):
    """Zero-padded correlation of a (pre, L, post) array with a symmetric kernel."""
    arr = np.asarray(arr, dtype=np.float64)
    r = (len(kernel) - 1) // 2
    length = arr.shape[1]
    out = np.zeros_like(arr)
    for t in range(-r, r + 1):
        w = kernel[t + r]
        if w == 0.0 or abs(t) >= length:
            continue
        if t >= 0:
            out[:, : length - t, :] += w * arr[:, t:, :]
        else:
            out[:, -t:, :] += w * arr[:, : length + t, :]
    return out


NUMPY_IMPL = {
    "bin_index": _bin_index_np,
    "center_deviation": _center_deviation_np,
    "cube_max": _cube_max_np,
    "offset_modulus": _offset_modulus_np,
    "convolve_axis": _convolve_axis_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _bin_index_nb(coords, radius, bins):
        ncell, dim = coords.shape
        width = 2.0 * radius / bins
        inf_bin = 1
        for _ in range(dim):
            inf_bin *= bins
        out = np.empty(ncell, dtype=np.int64)
        for c in range(ncell):
            idx = 0
            escaped = False
            for d in range(dim):
                v = coords[c, d]
                if not np.isfinite(v) or abs(v) > radius:
                    escaped = True
                    break
                k = int(np.floor((v + radius) / width))
                if k < 0:
                    k = 0
                elif k > bins - 1:
                    k = bins - 1
                idx = idx * bins + k
            out[c] = inf_bin if escaped else idx
        return out

    @njit(cache=True)
    def _center_deviation_nb(values, cube_of, center_row, ncubes):
        out = np.zeros(ncubes, dtype=np.float64)
        ncell, width = values.shape
        for c in range(ncell):
            q = cube_of[c]
            if q < 0:
                continue
            ctr = center_row[q]
            s = 0.0
            for d in range(width):
                s += abs(values[c, d] - values[ctr, d])
            if s > out[q]:
                out[q] = s
        return out

    @njit(cache=True)
    def _cube_max_nb(values, cube_of, ncubes):
        ncell, width = values.shape
        out = np.zeros((ncubes, width), dtype=np.float64)
        for c in range(ncell):
            q = cube_of[c]
            if q < 0:
                continue
            for d in range(width):
                a = abs(values[c, d])
                if a > out[q, d]:
                    out[q, d] = a
        return out

    @njit(cache=True)
    def _offset_modulus_flat(flat_values, flat_active, shape, offsets):
        ndim = shape.shape[0]
        ncell = flat_active.shape[0]
        width = flat_values.shape[1]
        strides = np.empty(ndim, dtype=np.int64)
        acc = 1
        for ax in range(ndim - 1, -1, -1):
            strides[ax] = acc
            acc *= shape[ax]
        nofs = offsets.shape[0]
        out = np.zeros(nofs, dtype=np.float64)
        idx = np.empty(ndim, dtype=np.int64)
        for k in range(nofs):
            best = 0.0
            for c in range(ncell):
                if not flat_active[c]:
                    continue
                rem = c
                ok = True
                tgt = 0
                for ax in range(ndim):
                    idx[ax] = rem // strides[ax]
                    rem -= idx[ax] * strides[ax]
                    j = idx[ax] + offsets[k, ax]
                    if j < 0 or j >= shape[ax]:
                        ok = False
                        break
                    tgt += j * strides[ax]
                if not ok or not flat_active[tgt]:
                    continue
                s = 0.0
                for d in range(width):
                    s += abs(flat_values[tgt, d] - flat_values[c, d])
                if s > best:
                    best = s
            out[k] = best
        return out

    def _offset_modulus_nb(grid_values, active, offsets):
        shape = np.asarray(active.shape, dtype=np.int64)
        flat_values = np.ascontiguousarray(grid_values.reshape(active.size, -1), dtype=np.float64)
        flat_active = np.ascontiguousarray(active.reshape(-1))
        offs = np.ascontiguousarray(np.asarray(offsets, dtype=np.int64).reshape(len(offsets), active.ndim))
        return _offset_modulus_flat(flat_values, flat_active, shape, offs)

    @njit(cache=True)
    def _convolve_axis_nb(arr, kernel):
        pre, length, post = arr.shape
        r = (kernel.shape[0] - 1) // 2
        src = arr.reshape(pre, length * post)
        out = np.zeros((pre, length * post))
        # per tap, shifted rows of one slab are contiguous runs of (length - |t|) * post
        for a in range(pre):
            for k in range(kernel.shape[0]):
                w = kernel[k]
                t = k - r
                if w == 0.0 or abs(t) >= length:
                    continue
                count = (length - abs(t)) * post
                o0 = 0 if t >= 0 else -t * post
                s0 = t * post if t >= 0 else 0
                for i in range(count):
                    out[a, o0 + i] += w * src[a, s0 + i]
        return out.reshape(pre, length, post)

    NUMBA_IMPL = {
        "bin_index": lambda coords, radius, bins: _bin_index_nb(
            np.ascontiguousarray(coords, dtype=np.float64), float(radius), int(bins)
        ),
        "center_deviation": lambda values, cube_of, center_row, ncubes: _center_deviation_nb(
            np.ascontiguousarray(values, dtype=np.float64),
            np.ascontiguousarray(cube_of, dtype=np.int64),
            np.ascontiguousarray(center_row, dtype=np.int64),
            int(ncubes),
        ),
        "cube_max": lambda values, cube_of, ncubes: _cube_max_nb(
            np.ascontiguousarray(values, dtype=np.float64),
            np.ascontiguousarray(cube_of, dtype=np.int64),
            int(ncubes),
        ),
        "offset_modulus": _offset_modulus_nb,
        "convolve_axis": lambda arr, kernel: _convolve_axis_nb(
            np.ascontiguousarray(arr, dtype=np.float64), np.ascontiguousarray(kernel, dtype=np.float64)
        ),
    }
else:
    NUMBA_IMPL = None

BACKEND = "numba" if HAVE_NUMBA else "numpy"
_ACTIVE = NUMBA_IMPL if HAVE_NUMBA else NUMPY_IMPL

bin_index = _ACTIVE["bin_index"]
center_deviation = _ACTIVE["center_deviation"]
cube_max = _ACTIVE["cube_max"]
offset_modulus = _ACTIVE["offset_modulus"]
convolve_axis = _ACTIVE["convolve_axis"]
