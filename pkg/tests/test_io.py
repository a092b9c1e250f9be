import json

import numpy as np
import pytest

from djet.corpus import builtin_field, unit_interval
from djet.difference_quotients import step_schedule
from djet.diffuse_jets import estimate_diffuse_jet
from djet.io import (
    read_field_csv,
    read_measure_csv,
    read_scheme,
    to_jsonable,
    write_estimate,
    write_field_csv,
    write_trend_csv,
)
from djet.sampled_fields import GridDomain, SampledField
from djet.tensor_frames import Frame


def test_field_round_trip_exact(tmp_path, rng):
    dom = unit_interval(243)
    u = SampledField(dom, rng.standard_normal(dom.shape) / 3)
    write_field_csv(tmp_path / "u.csv", u)
    back = read_field_csv(tmp_path / "u.csv")
    assert back.domain.shape == dom.shape and back.domain.g == dom.g
    np.testing.assert_array_equal(back.values, u.values)


def test_masked_vector_field_round_trip(tmp_path, rng):
    mask = np.ones((9, 6), dtype=bool)
    mask[2:5, 1:3] = False
    dom = GridDomain((9, 6), 1 / 9, np.array([0.0, -1 / 3]), mask)
    vals = rng.standard_normal((9, 6, 2))
    vals[~mask] = 0.0
    u = SampledField(dom, vals)
    write_field_csv(tmp_path / "v.csv", u)
    back = read_field_csv(tmp_path / "v.csv")
    np.testing.assert_array_equal(back.domain.mask, mask)
    np.testing.assert_array_equal(back.domain.origin, dom.origin)
    np.testing.assert_array_equal(back.values, vals)


@pytest.mark.parametrize("head", ["1 1 0.1 0.0", "x 1 0.1 0 1", "no header"])
def test_malformed_header(tmp_path, head):
    path = tmp_path / "bad.csv"
    path.write_text(("# " + head if head != "no header" else "0,1.0") + "\n0,1.0\n")
    with pytest.raises(ValueError):
        read_field_csv(path)


def test_wrong_column_count(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# 1 2 0.5 0 1\n0,1.0\n1,2.0\n")
    with pytest.raises(ValueError, match="columns"):
        read_field_csv(path)


def test_measure_round_trip(tmp_path):
    dom = unit_interval(729)
    est = estimate_diffuse_jet(builtin_field("sin", dom), Frame.standard(1, 1),
                               step_schedule(2, 27 * dom.g, 1 / 3, 4, dom.g))
    write_estimate(tmp_path, est)
    scheme = read_scheme(tmp_path / "estimate_scheme.json")
    back = read_measure_csv(tmp_path / "estimate_measure.csv", dom, scheme)
    assert len(back.masses) == 2
    for a, b in zip(est.measure.masses, back.masses):
        assert (a != b).nnz == 0
    trace = json.loads((tmp_path / "estimate_trace.json").read_text())
    assert trace["rho_trace"] == est.rho_trace


def test_trend_csv(tmp_path):
    write_trend_csv(tmp_path / "t.csv", {"a": [0.5, 0.25], "b": [1.0]})
    assert (tmp_path / "t.csv").read_text() == "nu,a,b\n1,0.5,1.0\n2,0.25,\n"


def test_to_jsonable():
    obj = {1: np.float64(np.inf), "a": (np.int32(3), np.bool_(True)), "b": np.arange(2.0), "c": -np.inf,
           "d": float("nan")}
    assert to_jsonable(obj) == {"1": "inf", "a": [3, True], "b": [0.0, 1.0], "c": "-inf", "d": "nan"}
    json.dumps(to_jsonable(obj))
