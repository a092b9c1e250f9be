"""Symmetric tensor spaces, orthonormal frames and the chordal metric.

A symmetric tensor of order ``q`` with dimensions ``(N, n)`` is stored as an
array of shape ``(N,) + (n,) * q`` that is invariant under permutations of
its last ``q`` axes.  ``q = 0`` is a plain vector in R^N.
"""
from dataclasses import dataclass
from itertools import permutations, product
from math import factorial

import numpy as np

SYMMETRY_TOL = 1e-10
ORTHO_TOL = 1e-12


def symmetrize(arr, q):
    """Average ``arr`` over all permutations of its last ``q`` axes."""
    arr = np.asarray(arr, dtype=np.float64)
    if q <= 1:
        return arr.copy()
    lead = arr.ndim - q
    acc = np.zeros_like(arr)
    for perm in permutations(range(q)):
        acc += np.transpose(arr, tuple(range(lead)) + tuple(lead + p for p in perm))
    return acc / factorial(q)


@dataclass(frozen=True)
class SymTensor:
    """Element of the symmetric tensor space of order ``q`` over (N, n)."""

    entries: np.ndarray
    n: int

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64)
        if arr.ndim < 1:
            raise ValueError("entries need at least the target axis")
        if any(s != self.n for s in arr.shape[1:]):
            raise ValueError(f"domain axes must all have length n={self.n}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        q = arr.ndim - 1
        if q >= 2:
            sym = symmetrize(arr, q)
            scale = max(1.0, float(np.abs(arr).max()))
            if np.abs(sym - arr).max() > SYMMETRY_TOL * scale:
                raise ValueError("tensor is not symmetric in its domain indices")
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

    @property
    def order(self):
        return self.entries.ndim - 1

    @property
    def N(self):
        return self.entries.shape[0]

    def norm(self):
        """Euclidean norm, |X|^2 = X : X."""
        return float(np.sqrt(np.sum(self.entries * self.entries)))

    def __add__(self, other):
        return SymTensor(self.entries + other.entries, self.n)

    def __sub__(self, other):
        return SymTensor(self.entries - other.entries, self.n)

    def __mul__(self, c):
        return SymTensor(float(c) * self.entries, self.n)

    __rmul__ = __mul__


def sym_product(a, b):
    """Symmetrised tensor product a v b = (a (x) b + b (x) a) / 2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("vectors must be finite")
    return SymTensor((0.5 * (np.outer(a, b) + np.outer(b, a)))[None, ...], a.shape[0])


def _is_orthonormal(mat, tol=ORTHO_TOL):
    mat = np.asarray(mat, dtype=np.float64)
    return mat.ndim == 2 and mat.shape[0] == mat.shape[1] and np.abs(mat @ mat.T - np.eye(len(mat))).max() <= tol


@dataclass(frozen=True)
class Frame:
    """Orthonormal reference frames: rows of ``target`` are E^alpha, rows of
    ``domain[alpha]`` are E^(alpha)i."""

    target: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        target = np.array(self.target, dtype=np.float64)
        domain = np.array(self.domain, dtype=np.float64)
        if domain.ndim != 3 or domain.shape[0] != target.shape[0] or domain.shape[1] != domain.shape[2]:
            raise ValueError("domain bases must have shape (N, n, n)")
        if not _is_orthonormal(target):
            raise ValueError("target basis is not orthonormal")
        for alpha in range(domain.shape[0]):
            if not _is_orthonormal(domain[alpha]):
                raise ValueError(f"domain basis {alpha} is not orthonormal")
        target.flags.writeable = False
        domain.flags.writeable = False
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "domain", domain)

    @property
    def N(self):
        return self.target.shape[0]

    @property
    def n(self):
        return self.domain.shape[1]

    @classmethod
    def standard(cls, N, n):
        return cls(np.eye(N), np.broadcast_to(np.eye(n), (N, n, n)))

    @classmethod
    def random(cls, N, n, rng):
        def ortho(k):
            q, r = np.linalg.qr(rng.standard_normal((k, k)))
            return (q * np.sign(np.diag(r))).T

        return cls(ortho(N), np.stack([ortho(n) for _ in range(N)]))

    def is_axis_aligned(self, tol=1e-12):
        """True when every domain direction is +-e_k."""
        d = np.abs(self.domain)
        return bool(np.all((np.abs(d - 1.0) <= tol) | (d <= tol)))

    def basis_element(self, alpha, idx):
        """E^{alpha i_1..i_q} = E^alpha (x) (E^(alpha)i_1 v ... v E^(alpha)i_q)."""
        n = self.n
        q = len(idx)
        t = np.ones(())
        for i in idx:
            t = np.multiply.outer(t, self.domain[alpha, i])
        t = symmetrize(t[None, ...], q)[0] if q >= 2 else t
        return SymTensor(np.multiply.outer(self.target[alpha], t).reshape((self.N,) + (n,) * q), n)


def _transform_axes(arr, mat, lead):
    """Apply ``mat`` (rows = new basis) to every trailing axis after ``lead``."""
    out = arr
    for ax in range(lead, arr.ndim):
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [ax])), 0, ax)
    return out


def frame_coordinates(X, frame):
    """Coefficients c[alpha, i_1..i_q] = E^{alpha i_1..i_q} : X over ordered tuples.

    The ordered-tuple family is a Parseval frame of the symmetric space, so
    sum(c**2) == |X|**2 and ``reconstruct`` inverts this map.
    """
    if X.N != frame.N or X.n != frame.n:
        raise ValueError("incompatible frame")
    q = X.order
    ent = X.entries
    out = np.empty_like(ent)
    for alpha in range(frame.N):
        comp = np.tensordot(frame.target[alpha], ent, axes=([0], [0]))
        out[alpha] = _transform_axes(np.asarray(comp), frame.domain[alpha], 0) if q else comp
    return out


def reconstruct(coords, frame):
    """Inverse of ``frame_coordinates``: sum_alpha,i c * E^{alpha i}.

    ``coords`` need not be symmetric; the result is symmetrised, which is how
    difference-quotient coefficients are assembled into a jet.
    """
    coords = np.asarray(coords, dtype=np.float64)
    q = coords.ndim - 1
    if coords.shape[0] != frame.N:
        raise ValueError("incompatible frame")
    out = np.zeros(coords.shape, dtype=np.float64)
    for alpha in range(frame.N):
        comp = _transform_axes(coords[alpha], frame.domain[alpha].T, 0) if q else coords[alpha]
        out += np.multiply.outer(frame.target[alpha], comp)
    return SymTensor(symmetrize(out, q), frame.n)


def reconstruct_fields(coords, frame):
    """Vectorised ``reconstruct`` for arrays of shape (cells, N, n, ..., n)."""
    coords = np.asarray(coords, dtype=np.float64)
    q = coords.ndim - 2
    out = np.zeros_like(coords)
    for alpha in range(frame.N):
        comp = _transform_axes(coords[:, alpha], frame.domain[alpha].T, 1) if q else coords[:, alpha]
        out += comp[:, None, ...] * frame.target[alpha].reshape((1, frame.N) + (1,) * q)
    return symmetrize(out, q)


def ordered_tuples(n, q):
    return list(product(range(n), repeat=q))


def unique_tuples(n, q):
    """Non-decreasing index tuples: one representative per symmetric entry."""
    return [t for t in product(range(n), repeat=q) if all(t[k] <= t[k + 1] for k in range(q - 1))]


# --- one-point compactification --------------------------------------------


class _Infinity:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY"


INFINITY = _Infinity()


def _as_flat(x):
    if isinstance(x, SymTensor):
        return x.entries.ravel()
    return np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()


def chordal_distance(x, y):
    """Chordal metric on R^d u {inf}, via stereographic projection onto the
    unit sphere (diameter 2)."""
    if x is INFINITY and y is INFINITY:
        return 0.0
    if x is INFINITY or y is INFINITY:
        v = _as_flat(y if x is INFINITY else x)
        return 2.0 / np.sqrt(1.0 + float(v @ v))
    a = _as_flat(x)
    b = _as_flat(y)
    if a.shape != b.shape:
        raise ValueError("values live in different spaces")
    d = a - b
    return float(2.0 * np.sqrt(d @ d) / (np.sqrt(1.0 + a @ a) * np.sqrt(1.0 + b @ b)))


def chordal_distance_array(a, b):
    """Vectorised chordal distance between rows of ``a`` and ``b``.

    Rows containing any non-finite entry stand for the point at infinity.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    ainf = ~np.all(np.isfinite(a), axis=1)
    binf = ~np.all(np.isfinite(b), axis=1)
    a0 = np.where(ainf[:, None], 0.0, a)
    b0 = np.where(binf[:, None], 0.0, b)
    na = np.sum(a0 * a0, axis=1)
    nb = np.sum(b0 * b0, axis=1)
    diff = np.sqrt(np.sum((a0 - b0) ** 2, axis=1))
    out = 2.0 * diff / (np.sqrt(1.0 + na) * np.sqrt(1.0 + nb))
    out = np.where(ainf & ~binf, 2.0 / np.sqrt(1.0 + nb), out)
    out = np.where(binf & ~ainf, 2.0 / np.sqrt(1.0 + na), out)
    out = np.where(ainf & binf, 0.0, out)
    return out
