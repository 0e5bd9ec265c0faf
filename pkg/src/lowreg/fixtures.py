"""Closed-form reference metrics, lines, and their oracle maps.

Every fixture is sampled from an exact formula, so tests can compare
pipeline output against independently evaluated oracles.  Disguised
fixtures carry the disguising map and its inverse as callables plus a
serializable parameter description for the CLI oracle file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geodesics import SampledCurve
from .grids import BoxChart, MetricField

__all__ = ["FixtureBundle", "FIXTURE_NAMES", "generate_fixture"]


@dataclass
class FixtureBundle:
    name: str
    metric: MetricField
    curves: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    maps: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)


def _box(lower, upper, h):
    """Chart over the box with node spacing as close to h as possible."""
    lower = tuple(float(v) for v in lower)
    upper = tuple(float(v) for v in upper)
    shape = tuple(
        max(5, int(round((u - l) / h)) + 1) for l, u in zip(lower, upper)
    )
    return BoxChart(lower, upper, shape)


def _metric_from(chart, entries, regularity_tag="smooth"):
    """Assemble symmetric components from a dict {(a, b): array}."""
    n = chart.dim
    comp = np.zeros(chart.shape + (n, n))
    for (a, b), val in entries.items():
        comp[..., a, b] = val
        if a != b:
            comp[..., b, a] = val
    return MetricField(chart, comp, regularity_tag=regularity_tag)


def _axis_line(t_pad, point_of):
    """Sampled straight-in-parameter curve t -> point_of(t)."""
    ts = np.linspace(-t_pad, t_pad, 257)
    pts = np.stack([point_of(t) for t in ts])
    return SampledCurve(ts, pts)


# ---------------------------------------------------------------------------
# individual fixtures


def euclid(h=0.01, dim=2, halves=None):
    halves = tuple(halves) if halves is not None else (1.0,) * dim
    chart = _box([-v for v in halves], halves, h)
    comp = np.broadcast_to(
        np.eye(dim), chart.shape + (dim, dim)
    ).copy()
    metric = MetricField(chart, comp)
    curves = {}
    if halves[0] >= 2.0 * max(halves[1:] or (0.0,)):
        pad = halves[0] - 0.3
        curves["line"] = _axis_line(pad, lambda t: np.array(
            [t] + [0.0] * (dim - 1)
        ))
    return FixtureBundle(
        "euclid", metric, curves=curves,
        oracle={"kind": "identity"},
        params={"h": h, "dim": dim, "halves": list(halves)},
    )


def polar(h=0.005, r_range=(1.0, 2.0), angle_range=(0.2, 1.2)):
    chart = _box((r_range[0], angle_range[0]), (r_range[1], angle_range[1]), h)
    mesh = chart.node_mesh()
    r = mesh[..., 0]
    metric = _metric_from(chart, {(0, 0): np.ones_like(r), (1, 1): r**2})

    def to_cartesian(p):
        p = np.asarray(p, dtype=float)
        return np.stack(
            [p[..., 0] * np.cos(p[..., 1]), p[..., 0] * np.sin(p[..., 1])],
            axis=-1,
        )

    return FixtureBundle(
        "polar", metric, maps={"flatten": to_cartesian},
        oracle={"kind": "polar_coordinates"},
        params={"h": h, "r_range": list(r_range),
                "angle_range": list(angle_range)},
    )


def power_cusp(h=0.01, dim=2, half=1.0):
    """Flat-but-degenerate metric: first diagonal entry 1/(1+|x0|^{3/2}).

    The first derivative of the component behaves like |x0|^{1/2} at
    the cusp line, so the field is C^1 but not C^2 there.
    """
    chart = _box((-half,) * dim, (half,) * dim, h)
    x0 = chart.node_mesh()[..., 0]
    entries = {(0, 0): 1.0 / (1.0 + np.abs(x0) ** 1.5)}
    for a in range(1, dim):
        entries[(a, a)] = np.ones_like(x0)
    metric = _metric_from(chart, entries, regularity_tag="c1")
    return FixtureBundle(
        "example46", metric,
        oracle={"kind": "separable_power_cusp", "exponent": 1.5},
        params={"h": h, "dim": dim, "half": half},
    )


def sphere(h=0.005, theta_range=(0.6, 1.6), phi_range=(0.3, 1.3)):
    chart = _box((theta_range[0], phi_range[0]),
                 (theta_range[1], phi_range[1]), h)
    theta = chart.node_mesh()[..., 0]
    metric = _metric_from(
        chart, {(0, 0): np.ones_like(theta), (1, 1): np.sin(theta) ** 2}
    )
    return FixtureBundle(
        "sphere", metric,
        oracle={"kind": "unit_sphere_polar"},
        params={"h": h, "theta_range": list(theta_range),
                "phi_range": list(phi_range)},
    )


def hyperbolic(h=0.005, x_range=(-0.5, 0.5), y_range=(0.5, 1.5)):
    chart = _box((x_range[0], y_range[0]), (x_range[1], y_range[1]), h)
    y = chart.node_mesh()[..., 1]
    metric = _metric_from(
        chart, {(0, 0): 1.0 / y**2, (1, 1): 1.0 / y**2}
    )
    return FixtureBundle(
        "hyperbolic", metric,
        oracle={"kind": "half_plane"},
        params={"h": h, "x_range": list(x_range), "y_range": list(y_range)},
    )


def minkowski_disguise(h=0.01, half=1.0, amplitude=0.1, frequency=1.0):
    """Pullback of diag(-1, 1) under (u, v) -> (u + A sin(f v), v)."""
    chart = _box((-half, -half), (half, half), h)
    v = chart.node_mesh()[..., 1]
    c = amplitude * frequency * np.cos(frequency * v)
    metric = _metric_from(
        chart, {(0, 0): -np.ones_like(v), (0, 1): -c, (1, 1): 1.0 - c**2}
    )

    def disguise(p):
        p = np.asarray(p, dtype=float)
        return np.stack(
            [p[..., 0] + amplitude * np.sin(frequency * p[..., 1]),
             p[..., 1]], axis=-1,
        )

    def undisguise(q):
        q = np.asarray(q, dtype=float)
        return np.stack(
            [q[..., 0] - amplitude * np.sin(frequency * q[..., 1]),
             q[..., 1]], axis=-1,
        )

    return FixtureBundle(
        "minkowski-disguise", metric,
        maps={"flatten": disguise, "unflatten": undisguise},
        oracle={"kind": "axis_shift", "target": [-1.0, 1.0],
                "map": "(u, v) -> (u + A*sin(f*v), v)",
                "amplitude": amplitude, "frequency": frequency},
        params={"h": h, "half": half},
    )


def _shift_profile(dim):
    """Transverse shift a(z) and its gradient for the disguised products.

    Phases keep the partial derivatives sign-definite on the analysis
    window, so the cross coefficients of the elliptic solve never kink.
    """
    if dim == 2:
        def a(z):
            return 0.18 * np.sin(1.4 * z[..., 0])

        def da(z):
            return (0.252 * np.cos(1.4 * z[..., 0]))[..., None]
    else:
        def a(z):
            return 0.15 * np.sin(1.3 * z[..., 0] + 0.4) * np.cos(
                1.1 * z[..., 1] + 0.3
            )

        def da(z):
            d1 = 0.15 * 1.3 * np.cos(1.3 * z[..., 0] + 0.4) * np.cos(
                1.1 * z[..., 1] + 0.3
            )
            d2 = -0.15 * 1.1 * np.sin(1.3 * z[..., 0] + 0.4) * np.sin(
                1.1 * z[..., 1] + 0.3
            )
            return np.stack([d1, d2], axis=-1)
    return a, da


def _transverse_metric(dim):
    """Metric on the cross-section: flat-warped in 2D, curved in 3D."""
    if dim == 2:
        def gN(z):
            p = 1.0 + 0.2 * np.sin(1.1 * z[..., 0])
            return (p**2)[..., None, None]
    else:
        def gN(z):
            out = np.zeros(z.shape[:-1] + (2, 2))
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = np.cos(z[..., 0]) ** 2
            return out
    return gN


def product_disguise(h=0.01, dim=2, length=10.3, width=None):
    """Shifted product metric: pullback of dt^2 + gN under
    (x0, z) -> (x0 + a(z), z).

    The axis-0 line through z = 0 maps to a straight product line, so
    the exact limit field is x0 + a(z) and the flow oracle translates
    the first product coordinate.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if width is None:
        width = 0.5 if dim == 2 else 0.3
    lower = (-length,) + (-width,) * (dim - 1)
    upper = (length,) + (width,) * (dim - 1)
    chart = _box(lower, upper, h)
    mesh = chart.node_mesh()
    z = mesh[..., 1:]
    a, da = _shift_profile(dim)
    gN = _transverse_metric(dim)
    grad = da(z)
    base = gN(z)
    entries = {(0, 0): np.ones(chart.shape)}
    for i in range(dim - 1):
        entries[(0, 1 + i)] = grad[..., i]
        for j in range(i, dim - 1):
            entries[(1 + i, 1 + j)] = (
                grad[..., i] * grad[..., j] + base[..., i, j]
            )
    metric = _metric_from(chart, entries)

    zstar = np.zeros(dim - 1)
    shift0 = float(a(zstar[None])[0])

    def line_point(t):
        return np.concatenate([[t - shift0], zstar])

    pad = length - 0.25
    curve = _axis_line(pad, line_point)

    def to_product(p):
        p = np.asarray(p, dtype=float)
        return np.concatenate(
            [(p[..., 0] + a(p[..., 1:]))[..., None], p[..., 1:]], axis=-1
        )

    def from_product(q):
        q = np.asarray(q, dtype=float)
        return np.concatenate(
            [(q[..., 0] - a(q[..., 1:]))[..., None], q[..., 1:]], axis=-1
        )

    def busemann_oracle(p):
        p = np.asarray(p, dtype=float)
        return p[..., 0] + a(p[..., 1:])

    if dim == 2:
        shift_desc = {"form": "A*sin(f*z)", "amplitude": 0.18,
                      "frequency": 1.4}
        trans_desc = {"form": "(1 + 0.2*sin(1.1*z))^2 dz^2"}
    else:
        shift_desc = {"form": "A*sin(f1*z1 + p1)*cos(f2*z2 + p2)",
                      "amplitude": 0.15, "frequencies": [1.3, 1.1],
                      "phases": [0.4, 0.3]}
        trans_desc = {"form": "dz1^2 + cos(z1)^2 dz2^2"}
    return FixtureBundle(
        "product-disguise", metric,
        curves={"line": curve},
        maps={"to_product": to_product, "from_product": from_product,
              "busemann": busemann_oracle,
              "shift": a, "transverse_metric": gN},
        oracle={"kind": "shifted_product", "dim": dim,
                "map": "(x0, z) -> (x0 + a(z), z)",
                "line_offset": shift0, "shift": shift_desc,
                "transverse": trans_desc},
        params={"h": h, "dim": dim, "length": length, "width": width},
    )


def shear_control(h=0.01, length=10.3, width=0.5, amplitude=0.35,
                  frequency=1.2):
    """Negative control: axis-0-dependent cross term, not a product.

    The cross term depends on the first coordinate, so no transverse
    reparametrization removes it; the metric is curved and the
    splitting chain must report a residual floor.
    """
    chart = _box((-length, -width), (length, width), h)
    x0 = chart.node_mesh()[..., 0]
    s = amplitude * np.cos(frequency * x0)
    metric = _metric_from(
        chart, {(0, 0): np.ones_like(s), (0, 1): s, (1, 1): np.ones_like(s)}
    )
    pad = length - 0.25
    curve = _axis_line(pad, lambda t: np.array([t, 0.0]))
    return FixtureBundle(
        "shear-control", metric, curves={"line": curve},
        oracle={"kind": "sheared", "amplitude": amplitude,
                "frequency": frequency},
        params={"h": h, "length": length, "width": width},
    )


FIXTURE_NAMES = (
    "euclid", "polar", "example46", "sphere", "hyperbolic",
    "minkowski-disguise", "product-disguise", "shear-control",
)

_BUILDERS = {
    "euclid": euclid,
    "polar": polar,
    "example46": power_cusp,
    "sphere": sphere,
    "hyperbolic": hyperbolic,
    "minkowski-disguise": minkowski_disguise,
    "product-disguise": product_disguise,
    "shear-control": shear_control,
}


def generate_fixture(name, **params):
    """Build a named fixture bundle from closed-form sampling."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}"
        ) from None
    return builder(**params)
