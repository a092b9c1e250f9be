"""Fully nonlinear systems F(x, u, X_1, ..., X_p) with vectorised evaluators.

An evaluator takes ``x`` (C, n), ``u`` (C, N) and a tuple of jet arrays
``X_q`` of shape (C, N) + (n,) * q, and returns (C, M).
"""
from dataclasses import dataclass, field

import numpy as np

SVD_CUTOFF = 1e-10


@dataclass(frozen=True)
class SystemF:
    name: str
    n: int
    N: int
    M: int
    p: int
    evaluator: object = field(repr=False)
    continuous_in_x: bool = True
    note: str = ""

    def __call__(self, x, u, jet):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        u = np.asarray(u, dtype=np.float64).reshape(len(x), self.N)
        jet = tuple(np.asarray(X, dtype=np.float64).reshape((len(x), self.N) + (self.n,) * q)
                    for q, X in enumerate(jet, start=1))
        if len(jet) != self.p:
            raise ValueError(f"{self.name} needs a jet of order {self.p}, got {len(jet)}")
        out = np.asarray(self.evaluator(x, u, jet), dtype=np.float64)
        return out.reshape(len(x), self.M)

    def check_dims(self, n, N, p):
        if (n, N) != (self.n, self.N) or p < self.p:
            raise ValueError(
                f"system {self.name} expects n={self.n}, N={self.N}, p>={self.p}; got n={n}, N={N}, p={p}"
            )


def derivative_zero(n=1, N=1):
    """Du = 0, componentwise."""
    return SystemF("derivative-zero", n, N, N * n, 1, lambda x, u, J: J[0].reshape(len(x), -1))


def derivative_equals(target, n=1, N=1, name="derivative-equals"):
    """Du - target(x) = 0, with ``target`` returning (C, N, n)."""

    def ev(x, u, J):
        return (J[0] - np.asarray(target(x)).reshape(J[0].shape)).reshape(len(x), -1)

    return SystemF(name, n, N, N * n, 1, ev)


def unit_slope(n=1, N=1):
    """Du - 1 = 0 (every entry of the gradient equals one)."""
    return SystemF("unit-slope", n, N, N * n, 1, lambda x, u, J: (J[0] - 1.0).reshape(len(x), -1))


def transport(a=None, n=1, N=1):
    """a . Du = 0 for a fixed direction a (default e_1)."""
    a = np.eye(n)[0] if a is None else np.asarray(a, dtype=np.float64)
    return SystemF("transport", n, N, N, 1, lambda x, u, J: J[0] @ a)


def eikonal(n=1):
    """|Du| - 1 = 0 for scalar u."""
    return SystemF("eikonal", n, 1, 1, 1,
                   lambda x, u, J: np.sqrt(np.sum(J[0].reshape(len(x), -1) ** 2, axis=1, keepdims=True)) - 1.0)


def normal_projection(Du, cutoff=SVD_CUTOFF):
    """Orthogonal projection onto the complement of range(Du), per cell.

    ``Du`` has shape (C, N, n); singular values at or below ``cutoff`` count as zero.
    """
    C, N, _ = Du.shape
    Uu, S, _ = np.linalg.svd(Du, full_matrices=True)
    k = S.shape[1]
    rank_mask = np.zeros((C, N))
    rank_mask[:, :k] = S > cutoff
    return np.eye(N)[None] - np.einsum("cak,ck,cbk->cab", Uu, rank_mask, Uu)


def infinity_laplacian(x, u, J):
    """(Du (x) Du + |Du|^2 [Du]^perp (x) I) : D^2 u."""
    Du, D2u = J
    tangential = np.einsum("cai,cbj,cbij->ca", Du, Du, D2u)
    lap = np.einsum("cbii->cb", D2u)
    norm2 = np.sum(Du.reshape(len(Du), -1) ** 2, axis=1)
    normal = norm2[:, None] * np.einsum("cab,cb->ca", normal_projection(Du), lap)
    return tangential + normal


def infinity_laplace(n=1, N=1):
    return SystemF("infinity-laplace", n, N, N, 2, infinity_laplacian)


def builtin_systems():
    """Name -> factory(n=1, N=1) for the catalog."""
    return {
        "derivative-zero": derivative_zero,
        "unit-slope": unit_slope,
        "transport": lambda n=1, N=1: transport(None, n, N),
        "eikonal": lambda n=1, N=1: eikonal(n),
        "infinity-laplace": infinity_laplace,
    }


def get_system(name, n=1, N=1):
    cat = builtin_systems()
    if name not in cat:
        raise KeyError(f"unknown system {name!r}; choose from {', '.join(sorted(cat))}")
    return cat[name](n=n, N=N)
