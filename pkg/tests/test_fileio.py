"""Round-trips and failure modes for the on-disk formats."""

import struct

import numpy as np
import pytest

from lowreg.fileio import (
    field_to_csv,
    read_curve,
    read_field,
    read_metric,
    write_curve,
    write_field,
)
from lowreg.grids import BoxChart, MetricField, TensorGridField, scalar_field


def _chart2():
    return BoxChart((-1.0, 0.0), (1.0, 2.0), (7, 5))


def test_scalar_round_trip(tmp_path):
    chart = _chart2()
    mesh = chart.node_mesh()
    f = scalar_field(chart, np.sin(mesh[..., 0]) + mesh[..., 1] ** 2)
    p = tmp_path / "f.lrgf"
    write_field(p, f)
    g = read_field(p)
    assert g.chart.lower == chart.lower
    assert g.chart.upper == chart.upper
    assert g.chart.shape == chart.shape
    assert g.valence == (0, 0)
    np.testing.assert_array_equal(g.components, f.components)


def test_tensor_round_trip_bit_exact(tmp_path):
    chart = _chart2()
    rng = np.random.default_rng(7)
    comp = rng.standard_normal(chart.shape + (2, 2, 2))
    f = TensorGridField(chart, (1, 2), comp, "c1")
    p = tmp_path / "t.lrgf"
    write_field(p, f)
    g = read_field(p, regularity_tag="c1")
    assert g.valence == (1, 2)
    assert g.regularity_tag == "c1"
    np.testing.assert_array_equal(g.components, comp)


def test_header_layout_is_pinned(tmp_path):
    chart = BoxChart((0.0,), (1.0,), (5,))
    f = scalar_field(chart, np.arange(5.0))
    p = tmp_path / "h.lrgf"
    write_field(p, f)
    raw = p.read_bytes()
    assert raw[:5] == b"LRGF1"
    n, r, s = struct.unpack("<III", raw[5:17])
    assert (n, r, s) == (1, 0, 0)
    lo, up, ns = struct.unpack("<ddI", raw[17:37])
    assert (lo, up, ns) == (0.0, 1.0, 5)
    vals = np.frombuffer(raw[37:], dtype="<f8")
    np.testing.assert_array_equal(vals, np.arange(5.0))


def test_component_order_last_axis_fastest(tmp_path):
    chart = _chart2()
    f = scalar_field(chart, np.arange(35.0).reshape(7, 5))
    p = tmp_path / "o.lrgf"
    write_field(p, f)
    raw = p.read_bytes()
    payload = np.frombuffer(raw[-35 * 8:], dtype="<f8")
    np.testing.assert_array_equal(payload, np.arange(35.0))


def test_metric_round_trip(tmp_path):
    chart = _chart2()
    mesh = chart.node_mesh()
    comp = np.zeros(chart.shape + (2, 2))
    comp[..., 0, 0] = 1.0 + 0.1 * np.sin(mesh[..., 0])
    comp[..., 1, 1] = 2.0
    g = MetricField(chart, comp)
    p = tmp_path / "g.lrgf"
    write_field(p, g)
    g2 = read_metric(p)
    assert isinstance(g2, MetricField)
    np.testing.assert_array_equal(g2.components, comp)


def test_read_metric_rejects_wrong_valence(tmp_path):
    chart = _chart2()
    f = TensorGridField(chart, (0, 1), np.zeros(chart.shape + (2,)))
    p = tmp_path / "v.lrgf"
    write_field(p, f)
    with pytest.raises(IOError, match="not a metric"):
        read_metric(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.lrgf"
    p.write_bytes(b"NOTIT" + b"\x00" * 40)
    with pytest.raises(IOError, match="not an LRGF1 file"):
        read_field(p)


def test_truncated_payload(tmp_path):
    chart = _chart2()
    f = scalar_field(chart, np.ones(chart.shape))
    p = tmp_path / "t.lrgf"
    write_field(p, f)
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(IOError, match="truncated"):
        read_field(p)


def test_curve_round_trip(tmp_path):
    times = np.linspace(0.0, 2.0, 9)
    pts = np.stack([times, np.cos(times)], axis=-1)
    p = tmp_path / "c.curve"
    write_curve(p, times, pts)
    t2, p2 = read_curve(p)
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_array_equal(p2, pts)


def test_curve_shape_validation(tmp_path):
    with pytest.raises(ValueError):
        write_curve(tmp_path / "x.curve", [0.0, 1.0], [[0.0], [1.0], [2.0]])
    with pytest.raises(ValueError):
        write_curve(tmp_path / "y.curve", [0.0], [1.0])


def test_curve_truncation_detected(tmp_path):
    times = np.linspace(0.0, 1.0, 5)
    pts = np.zeros((5, 3))
    p = tmp_path / "c.curve"
    write_curve(p, times, pts)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(IOError, match="truncated"):
        read_curve(p)


def test_csv_scalar(tmp_path):
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (5, 6))
    vals = np.arange(30.0).reshape(5, 6)
    f = scalar_field(chart, vals)
    p = tmp_path / "f.csv"
    field_to_csv(p, f)
    lines = p.read_text().splitlines()
    assert lines[0] == "i0,i1,x0,x1,value"
    assert len(lines) == 1 + 30
    first = lines[1].split(",")
    assert first[:2] == ["0", "0"]
    assert float(first[-1]) == 0.0
    # row-major: second row is node (0, 1)
    assert lines[2].split(",")[:2] == ["0", "1"]
    last = lines[-1].split(",")
    assert last[:2] == ["4", "5"]
    assert float(last[-1]) == 29.0


def test_csv_tensor_columns(tmp_path):
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (5, 5))
    comp = np.zeros(chart.shape + (2, 2))
    comp[..., 0, 1] = 3.0
    f = TensorGridField(chart, (0, 2), comp)
    p = tmp_path / "t.csv"
    field_to_csv(p, f)
    lines = p.read_text().splitlines()
    assert lines[0] == "i0,i1,x0,x1,t0,t1,value"
    # per node the four tensor entries appear in lexicographic order
    entries = [ln.split(",")[-3:] for ln in lines[1:5]]
    assert [e[:2] for e in entries] == [
        ["0", "0"], ["0", "1"], ["1", "0"], ["1", "1"]
    ]
    assert [float(e[2]) for e in entries] == [0.0, 3.0, 0.0, 0.0]


def test_csv_values_survive_repr_round_trip(tmp_path):
    chart = BoxChart((0.0,), (1.0,), (5,))
    vals = np.array([np.pi, 1.0 / 3.0, 1e-17, -2.5, 0.1])
    f = scalar_field(chart, vals)
    p = tmp_path / "r.csv"
    field_to_csv(p, f)
    lines = p.read_text().splitlines()[1:]
    back = np.array([float(ln.split(",")[-1]) for ln in lines])
    np.testing.assert_array_equal(back, vals)
