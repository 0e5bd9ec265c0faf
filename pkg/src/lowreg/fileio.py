"""On-disk formats: LRGF1 tensor fields, LRGC1 sampled curves, CSV export.

LRGF1 layout, all little-endian:

    magic   5 bytes  b"LRGF1"
    u32     n        chart dimension
    u32     r, s     tensor valence
    n times { f64 lower, f64 upper, u32 shape }
    f64[...]         components, C order: grid indices outermost with the
                     last grid axis fastest, then tensor indices in
                     lexicographic order

LRGC1 holds a parameterised curve: magic b"LRGC1", u32 n, u64 m,
f64 times[m], f64 points[m][n].
"""

from __future__ import annotations

import struct

import numpy as np

from .grids import BoxChart, MetricField, TensorGridField

__all__ = [
    "write_field",
    "read_field",
    "read_metric",
    "field_to_csv",
    "write_curve",
    "read_curve",
]

_FIELD_MAGIC = b"LRGF1"
_CURVE_MAGIC = b"LRGC1"


def write_field(path, f):
    """Serialize a TensorGridField (or MetricField) to LRGF1."""
    n = f.chart.dim
    r, s = f.valence
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<III", n, r, s))
        for i in range(n):
            fh.write(
                struct.pack("<ddI", f.chart.lower[i], f.chart.upper[i], f.chart.shape[i])
            )
        fh.write(np.ascontiguousarray(f.components, dtype="<f8").tobytes())


def _read_header(fh, path):
    magic = fh.read(5)
    if magic != _FIELD_MAGIC:
        raise IOError(f"{path}: not an LRGF1 file")
    n, r, s = struct.unpack("<III", fh.read(12))
    lower, upper, shape = [], [], []
    for _ in range(n):
        lo, up, ns = struct.unpack("<ddI", fh.read(20))
        lower.append(lo)
        upper.append(up)
        shape.append(ns)
    return BoxChart(tuple(lower), tuple(upper), tuple(shape)), r, s


def read_field(path, regularity_tag="smooth"):
    with open(path, "rb") as fh:
        chart, r, s = _read_header(fh, path)
        count = int(np.prod(chart.shape)) * chart.dim ** (r + s)
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise IOError(f"{path}: truncated component payload")
        comp = np.frombuffer(raw, dtype="<f8").reshape(
            chart.shape + (chart.dim,) * (r + s)
        )
    return TensorGridField(chart, (r, s), comp.astype(float), regularity_tag)


def read_metric(path, regularity_tag="smooth"):
    """Read a (0, 2) field and validate it as a metric (signature inferred)."""
    f = read_field(path, regularity_tag)
    if f.valence != (0, 2):
        raise IOError(f"{path}: valence {f.valence} is not a metric")
    return MetricField(f.chart, f.components, None, regularity_tag)


def field_to_csv(path, f):
    """Write one row per (node, tensor index) in on-disk component order."""
    chart = f.chart
    n = chart.dim
    rank = f.rank
    axes = [chart.axis_coords(i) for i in range(n)]
    with open(path, "w", encoding="utf-8") as fh:
        cols = [f"i{a}" for a in range(n)]
        cols += [f"x{a}" for a in range(n)]
        cols += [f"t{k}" for k in range(rank)]
        fh.write(",".join(cols + ["value"]) + "\n")
        flat = f.components.reshape(-1)
        tshape = (n,) * rank
        tcount = n**rank
        pos = 0
        for gidx in np.ndindex(*chart.shape):
            for tflat in range(tcount):
                tidx = np.unravel_index(tflat, tshape) if rank else ()
                row = [str(i) for i in gidx]
                row += [repr(float(axes[a][gidx[a]])) for a in range(n)]
                row += [str(i) for i in tidx]
                row.append(repr(float(flat[pos])))
                fh.write(",".join(row) + "\n")
                pos += 1


def write_curve(path, times, points):
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(times) != len(points):
        raise ValueError("need times (m,) and points (m, n)")
    with open(path, "wb") as fh:
        fh.write(_CURVE_MAGIC)
        fh.write(struct.pack("<IQ", points.shape[1], points.shape[0]))
        fh.write(np.ascontiguousarray(times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(points, dtype="<f8").tobytes())


def read_curve(path):
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _CURVE_MAGIC:
            raise IOError(f"{path}: not an LRGC1 file")
        n, m = struct.unpack("<IQ", fh.read(12))
        times = np.frombuffer(fh.read(8 * m), dtype="<f8").astype(float)
        raw = fh.read(8 * m * n)
        if len(raw) != 8 * m * n:
            raise IOError(f"{path}: truncated curve payload")
        points = np.frombuffer(raw, dtype="<f8").astype(float).reshape(m, n)
    return times, points
