"""CSV and JSON emission: fields, measure dumps, traces and reports.

Floats are written with ``repr`` so that a round trip is exact.
"""
import csv
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sampled_fields import GridDomain, SampledField
from .young_measures import BinScheme, DiscreteYoungMeasure


def _fmt(x):
    return repr(float(x))


def write_field_csv(path, field_):
    """Header ``# n N g lo... hi...``; one row ``i_1..i_n, v_1..v_N`` per active cell."""
    dom = field_.domain
    vals = field_.active_values().reshape(dom.ncells, -1)
    idx = np.argwhere(dom.mask)
    header = [str(dom.n), str(vals.shape[1]), _fmt(dom.g)] + [_fmt(v) for v in dom.origin] + [
        _fmt(v) for v in dom.upper
    ]
    with open(path, "w", newline="") as fh:
        fh.write("# " + " ".join(header) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for ix, v in zip(idx, vals):
            w.writerow([int(i) for i in ix] + [_fmt(x) for x in v])


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`; cells absent from the file lie outside the domain."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing '# n N g lo.. hi..' header")
        head = first[1:].split()
        try:
            n, N = int(head[0]), int(head[1])
            g = float(head[2])
            lo = np.array([float(v) for v in head[3 : 3 + n]])
            hi = np.array([float(v) for v in head[3 + n : 3 + 2 * n]])
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed header {first.strip()!r}") from exc
        if len(head) != 3 + 2 * n:
            raise ValueError(f"{path}: header needs {3 + 2 * n} entries, got {len(head)}")
        rows = np.array([[float(x) for x in r] for r in csv.reader(fh) if r], dtype=np.float64)
    shape = tuple(int(round(s)) for s in (hi - lo) / g)
    if rows.size == 0 or rows.shape[1] != n + N:
        raise ValueError(f"{path}: expected rows of {n + N} columns")
    idx = rows[:, :n].astype(np.int64)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(idx.T)] = True
    values = np.zeros(shape + ((N,) if N > 1 else ()))
    values[tuple(idx.T)] = rows[:, n:] if N > 1 else rows[:, n]
    return SampledField(GridDomain(shape, g, lo, mask), values)


def write_measure_csv(path, measure):
    """Rows ``cell, order, bin_index, mass`` in row-major cell order; ``cell`` is the active-cell row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "order", "bin_index", "mass"])
        for f, m in enumerate(measure.masses, start=1):
            m = m.tocsr()
            m.sort_indices()
            for r in range(m.shape[0]):
                lo, hi = m.indptr[r], m.indptr[r + 1]
                for b, v in zip(m.indices[lo:hi], m.data[lo:hi]):
                    w.writerow([r, f, int(b), _fmt(v)])


def read_measure_csv(path, domain, scheme):
    cols = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            cols.setdefault(int(row["order"]), []).append((int(row["cell"]), int(row["bin_index"]), float(row["mass"])))
    masses = []
    for f, space in enumerate(scheme.spaces, start=1):
        r, b, v = zip(*cols.get(f, [])) if f in cols else ((), (), ())
        masses.append(sp.csr_matrix((v, (r, b)), shape=(domain.ncells, space.n_bins)))
    return DiscreteYoungMeasure(domain, scheme.spaces, masses)


def write_json(path, obj):
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def to_jsonable(obj):
    """Numpy scalars/arrays and dict keys made JSON-safe, recursively."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isfinite(x):
            return x
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return obj


def write_estimate(outdir, est, stem="estimate"):
    """Measure dump, scheme header and trace for a diffuse-jet estimate."""
    outdir = Path(outdir)
    write_measure_csv(outdir / f"{stem}_measure.csv", est.measure)
    write_json(outdir / f"{stem}_scheme.json", est.scheme.to_dict())
    write_json(outdir / f"{stem}_trace.json", est.trace_dict())


def read_scheme(path):
    return BinScheme.from_dict(json.loads(Path(path).read_text()))


def write_trend_csv(path, columns):
    """Columns of equal length (dict name -> list) as a plotting table with a ``nu`` index."""
    names = list(columns)
    length = max((len(v) for v in columns.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu"] + names)
        for i in range(length):
            w.writerow([i + 1] + [_fmt(columns[k][i]) if i < len(columns[k]) else "" for k in names])
