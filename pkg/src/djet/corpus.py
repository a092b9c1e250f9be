"""Built-in inputs: Cantor-type function, fat-Cantor indicator, smooth baselines."""
from collections import deque
from fractions import Fraction

import numpy as np

from .sampled_fields import CellSet, GridDomain, SampledField

K_LO = Fraction(1, 3)
K_HI = Fraction(2, 3)
DEFAULT_J = 64


def stern_brocot(lo, hi, count):
    """First ``count`` rationals of [lo, hi] in breadth-first Stern-Brocot order."""
    lo = Fraction(lo)
    hi = Fraction(hi)
    out = []
    # nodes carry (left bound a/b, right bound c/d); the node value is the mediant
    queue = deque([(0, 1, 1, 0)])
    while queue and len(out) < count:
        a, b, c, d = queue.popleft()
        m = Fraction(a + c, b + d)
        if lo <= m <= hi:
            out.append(m)
        # a subtree's values lie strictly between its bounds
        if m > lo and Fraction(a, b) < hi:
            queue.append((a, b, a + c, b + d))
        if m < hi and (d == 0 or Fraction(c, d) > lo):
            queue.append((a + c, b + d, c, d))
    return out


def fat_cantor_intervals(J=DEFAULT_J):
    """Closed intervals (exact fractions) whose union is
    K = [1/3, 2/3] minus the union over j <= J of (q_j - 3^-2j, q_j + 3^-2j)."""
    removed = sorted(
        (max(q - Fraction(1, 9**j), K_LO), min(q + Fraction(1, 9**j), K_HI))
        for j, q in enumerate(stern_brocot(K_LO, K_HI, J), start=1)
    )
    merged = []
    for a, b in removed:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    pieces = []
    cur = K_LO
    for a, b in merged:
        if a > cur:
            pieces.append((cur, a))
        cur = max(cur, b)
    if cur < K_HI:
        pieces.append((cur, K_HI))
    return pieces


def fat_cantor_measure(J=DEFAULT_J):
    """|K| as an exact fraction."""
    return sum((b - a for a, b in fat_cantor_intervals(J)), Fraction(0))


def fat_cantor_mask(domain, J=DEFAULT_J):
    """Cells of a 1-D grid whose centres lie in K."""
    if domain.n != 1:
        raise ValueError("the fat Cantor set lives on an interval")
    x = domain.centers()[..., 0]
    inside = np.zeros(domain.shape, dtype=bool)
    for a, b in fat_cantor_intervals(J):
        inside |= (x >= float(a)) & (x <= float(b))
    return inside & domain.mask


def fat_cantor_indicator(domain, J=DEFAULT_J):
    return SampledField(domain, fat_cantor_mask(domain, J).astype(np.float64))


def fat_cantor_cells(domain, J=DEFAULT_J):
    return CellSet(domain, fat_cantor_mask(domain, J))


def cantor_staircase(x, depth):
    """Ternary construction of the Cantor function, linear below depth ``depth``."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    out = np.zeros_like(x)
    rest = x.copy()
    live = np.ones(x.shape, dtype=bool)
    scale = 0.5
    for _ in range(depth):
        t = 3.0 * rest
        digit = np.minimum(np.floor(t), 2.0)
        mid = live & (digit == 1)
        out[mid] += scale
        live &= ~mid
        out[live] += scale * (digit[live] / 2.0)
        rest = np.where(live, t - digit, rest)
        scale *= 0.5
    out[live] += 2.0 * scale * rest[live]
    return out


def cantor_function(domain, depth=None):
    """Tent-folded Cantor function min(c, 1 - c): continuous, zero at both ends,
    locally constant off the depth-``depth`` Cantor cells."""
    if domain.n != 1:
        raise ValueError("the Cantor function lives on an interval")
    if depth is None:
        depth = int(round(np.log(domain.shape[0]) / np.log(3)))
    x = domain.centers()[..., 0]
    c = cantor_staircase(x, depth)
    return SampledField(domain, np.minimum(c, 1.0 - c))


def cantor_set_mask(domain, depth=None):
    """Cells meeting the depth-``depth`` Cantor intervals (where the map can vary)."""
    if depth is None:
        depth = int(round(np.log(domain.shape[0]) / np.log(3)))
    x = domain.centers()[..., 0]
    rest = x.copy()
    live = np.ones(x.shape, dtype=bool)
    for _ in range(depth):
        t = 3.0 * rest
        digit = np.minimum(np.floor(t), 2.0)
        live &= digit != 1
        rest = t - digit
    return live & domain.mask


SMOOTH = {
    "sin": (lambda x: np.sin(np.pi * x[..., 0]), lambda x: np.pi * np.cos(np.pi * x[..., 0]),
            lambda x: -np.pi**2 * np.sin(np.pi * x[..., 0])),
    "quadratic": (lambda x: x[..., 0] ** 2, lambda x: 2 * x[..., 0], lambda x: 2.0 + 0 * x[..., 0]),
    "linear": (lambda x: x[..., 0], lambda x: 1.0 + 0 * x[..., 0], lambda x: 0 * x[..., 0]),
    "constant": (lambda x: 0.5 + 0 * x[..., 0], lambda x: 0 * x[..., 0], lambda x: 0 * x[..., 0]),
    "zero": (lambda x: 0 * x[..., 0], lambda x: 0 * x[..., 0], lambda x: 0 * x[..., 0]),
}

BUILTIN_INPUTS = ("cantor-function", "fat-cantor-indicator") + tuple(SMOOTH)


def builtin_field(name, domain, J=DEFAULT_J):
    if name == "cantor-function":
        return cantor_function(domain)
    if name == "fat-cantor-indicator":
        return fat_cantor_indicator(domain, J)
    if name in SMOOTH:
        return SampledField.from_function(domain, SMOOTH[name][0])
    raise KeyError(f"unknown built-in input {name!r}; choose from {', '.join(BUILTIN_INPUTS)}")


def exact_jet(name, domain, p):
    """Exact derivative tensors of a smooth 1-D corpus function, as a JetField."""
    from .difference_quotients import JetField

    if name not in SMOOTH:
        raise KeyError(f"no exact jet for {name!r}")
    c = domain.centers()
    orders = []
    for q in range(1, p + 1):
        if q > 2:
            raise ValueError("exact jets are tabulated up to order 2")
        vals = np.where(domain.mask, SMOOTH[name][q](c), 0.0)
        orders.append(vals.reshape(domain.shape + (1,) * (q + 1)))
    return JetField(domain, orders)


def unit_interval(cells):
    return GridDomain.unit_interval(cells)
